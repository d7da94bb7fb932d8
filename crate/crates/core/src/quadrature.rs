//! Quadrature geometry for nonlocal operators on a grid.
//!
//! The integral `int delta(u, x, y) K(y) dy` is split into three parts:
//!
//! * near field `|y| < r0`: quadratic model `delta ~ y^T H y` with the radial
//!   factor integrated in closed form;
//! * mid field `r0 <= |y| <= R_box`: one term per lattice offset in a half
//!   space (each term stands for `y` and `-y`), weighted by the second moment
//!   of the kernel over the cell so that quadratics are integrated exactly;
//! * tail `|y| > R_box`: Gauss-Legendre in the radius over three decades,
//!   then a closed-form power-law remainder that uses the far limit of the
//!   exterior closure.
//!
//! The weights here exclude the kernel multiplier and normalization, which
//! operators apply per term.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point};
use crate::scalar::Real;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre<T: Real>(m: usize) -> (Vec<T>, Vec<T>) {
    let mut nodes = vec![T::zero(); m];
    let mut weights = vec![T::zero(); m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=m {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if m == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = T::lit(-x);
        nodes[m - 1 - i] = T::lit(x);
        weights[i] = T::lit(w);
        weights[m - 1 - i] = T::lit(w);
    }
    (nodes, weights)
}

/// Equal-weight rule on the full sphere `S^{n-1}`: `{-1, +1}` in 1D,
/// `count` equispaced angles in 2D.
pub fn sphere_rule<T: Real>(n: usize, count: usize) -> Vec<(Point<T>, T)> {
    if n == 1 {
        return vec![([T::one(), T::zero()], T::one()), ([-T::one(), T::zero()], T::one())];
    }
    let w = T::lit(std::f64::consts::TAU / count as f64);
    (0..count)
        .map(|k| {
            let a = T::lit(std::f64::consts::TAU * k as f64 / count as f64);
            ([a.cos(), a.sin()], w)
        })
        .collect()
}

/// One representative of each antipodal pair with doubled weight.
pub fn half_sphere_rule<T: Real>(n: usize, count: usize) -> Vec<(Point<T>, T)> {
    if n == 1 {
        return vec![([T::one(), T::zero()], T::lit(2.0))];
    }
    let half = count / 2;
    let w = T::lit(2.0 * std::f64::consts::TAU / count as f64);
    (0..half)
        .map(|k| {
            let a = std::f64::consts::PI * k as f64 / half as f64;
            // exact values on the axes keep the rule symmetric under reflections
            let (c, s) = match (2 * k) % half {
                0 if k == 0 => (1.0, 0.0),
                0 => (0.0, 1.0),
                _ => (a.cos(), a.sin()),
            };
            ([T::lit(c), T::lit(s)], w)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec<T> {
    /// Near-field radius; the grid spacing when `None`.
    pub near_radius: Option<T>,
    /// Points on the circle for near field and tail directions (2D only).
    pub sphere_points: usize,
    /// Gauss-Legendre points per radial decade in the tail.
    pub tail_points: usize,
    pub tail_decades: usize,
}

impl<T: Real> Default for QuadratureSpec<T> {
    fn default() -> Self {
        Self {
            near_radius: None,
            sphere_points: 64,
            tail_points: 128,
            tail_decades: 3,
        }
    }
}

impl<T: Real> QuadratureSpec<T> {
    pub fn near_radius_for(&self, h: T) -> T {
        self.near_radius.unwrap_or(h)
    }

    pub fn validate(&self, h: T) -> Result<()> {
        let r0 = self.near_radius_for(h);
        if !(r0 >= h / T::lit(2.0)) {
            return Err(Error::Precondition(format!("near radius {r0} is below h/2 = {}", h / T::lit(2.0))));
        }
        if self.sphere_points < 16 || self.sphere_points % 4 != 0 {
            return Err(Error::Precondition(format!(
                "sphere rule needs a multiple of 4 with at least 16 points, got {}",
                self.sphere_points
            )));
        }
        if self.tail_points == 0 || self.tail_decades == 0 {
            return Err(Error::Precondition("tail rule needs points and decades".into()));
        }
        Ok(())
    }
}

/// A run of mid-field offsets `(di, dj)` with `dj` fixed and `di`
/// consecutive; offsets are in units of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MidRow {
    pub dj: isize,
    pub di_lo: isize,
    pub len: usize,
    /// Index of the first term of this row in the flat term list.
    pub start: usize,
}

/// Term layout and base weights for one grid, order and quadrature spec.
#[derive(Debug, Clone)]
pub struct OperatorPlan<T> {
    grid: GridSpec<T>,
    sigma: T,
    r0: T,
    near: Vec<Point<T>>,
    rows: Vec<MidRow>,
    tail_points: Vec<Point<T>>,
    tail_per_decade: usize,
    rem_dirs: Vec<Point<T>>,
    far_radius: T,
    weights: Vec<T>,
    near_start: usize,
    mid_start: usize,
    tail_start: usize,
    rem_start: usize,
}

/// Integral of `(2 - sigma) |y|^(-sigma)` over a cell intersected with the
/// annulus `r0 < |y| <= outer`, computed in polar coordinates: the radial
/// integral is closed form, the angular one is Gauss-Legendre split at the
/// corner angles.
fn cell_second_moment<T: Real>(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    r0: f64,
    outer: f64,
    sigma: f64,
    gl: &(Vec<f64>, Vec<f64>),
) -> f64 {
    let e = 2.0 - sigma;
    let dist = |x: f64, y: f64| (x * x + y * y).sqrt();
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    let far = corners.iter().map(|&(x, y)| dist(x, y)).fold(0.0, f64::max);
    let nx = if x0 > 0.0 { x0 } else if x1 < 0.0 { -x1 } else { 0.0 };
    let ny = if y0 > 0.0 { y0 } else if y1 < 0.0 { -y1 } else { 0.0 };
    let near = dist(nx, ny);
    if near >= outer || far <= r0 {
        return 0.0;
    }
    let mut angles: Vec<f64> = corners.iter().map(|&(x, y)| y.atan2(x)).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let straddles = near < r0 || far > outer;
    let sub = if straddles { 16 } else { 1 };
    let radial = |th: f64| -> f64 {
        let (c, s) = (th.cos(), th.sin());
        let mut t_in = 0.0f64;
        let mut t_out = f64::INFINITY;
        for (d, lo, hi) in [(c, x0, x1), (s, y0, y1)] {
            if d.abs() < 1e-300 {
                continue;
            }
            let (a, b) = (lo / d, hi / d);
            t_in = t_in.max(a.min(b));
            t_out = t_out.min(a.max(b));
        }
        let a = t_in.max(r0);
        let b = t_out.min(outer);
        if b > a {
            b.powf(e) - a.powf(e)
        } else {
            0.0
        }
    };
    let mut total = 0.0;
    for w in angles.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 1e-15 {
            continue;
        }
        let step = (b - a) / sub as f64;
        for k in 0..sub {
            let lo = a + step * k as f64;
            let half = step / 2.0;
            for (&t, &gw) in gl.0.iter().zip(&gl.1) {
                total += gw * half * radial(lo + half + half * t);
            }
        }
    }
    total
}

impl<T: Real> OperatorPlan<T> {
    pub fn new(grid: GridSpec<T>, sigma: T, spec: &QuadratureSpec<T>) -> Result<Self> {
        if !(sigma > T::zero() && sigma < T::lit(2.0)) {
            return Err(Error::InvalidKernel(format!("order must lie in (0, 2), got {sigma}")));
        }
        let h = grid.h();
        spec.validate(h)?;
        let n = grid.dim();
        let r0 = spec.near_radius_for(h);
        let big_r = grid.box_radius();
        let damp = T::lit(2.0) - sigma;
        let dirs = half_sphere_rule::<T>(n, spec.sphere_points);
        let mut weights = Vec::new();

        let near: Vec<Point<T>> = dirs.iter().map(|d| d.0).collect();
        let r0s = r0.powf(damp);
        weights.extend(dirs.iter().map(|d| r0s * d.1));

        let mid_start = weights.len();
        let mut rows = Vec::new();
        let (hf, r0f, rf, sf) = (h.as_f64(), r0.as_f64(), big_r.as_f64(), sigma.as_f64());
        let e = 2.0 - sf;
        if n == 1 {
            let half = grid.half() as isize;
            let mut len = 0;
            for k in 1..=half {
                let kf = k as f64;
                let a = ((kf - 0.5) * hf).max(r0f);
                let b = ((kf + 0.5) * hf).min(rf);
                let w = if b > a { 2.0 * (b.powf(e) - a.powf(e)) / (kf * hf).powi(2) } else { 0.0 };
                weights.push(T::lit(w));
                len += 1;
            }
            rows.push(MidRow {
                dj: 0,
                di_lo: 1,
                len,
                start: mid_start,
            });
        } else {
            let half = grid.half() as isize;
            let gl = gauss_legendre::<f64>(16);
            let reach = half + 1;
            // weights of the octant 0 <= j <= i, mirrored by the square's symmetries
            let mut octant: Vec<Vec<f64>> = Vec::with_capacity(reach as usize + 1);
            for i in 0..=reach {
                let mut col = Vec::with_capacity(i as usize + 1);
                for j in 0..=i {
                    if i == 0 {
                        col.push(0.0);
                        continue;
                    }
                    let (fi, fj) = (i as f64, j as f64);
                    let m = cell_second_moment::<T>(
                        (fi - 0.5) * hf,
                        (fi + 0.5) * hf,
                        (fj - 0.5) * hf,
                        (fj + 0.5) * hf,
                        r0f,
                        rf,
                        sf,
                        &gl,
                    );
                    col.push(2.0 * m / ((fi * fi + fj * fj) * hf * hf));
                }
                octant.push(col);
            }
            let lookup = |i: isize, j: isize| -> f64 {
                let (a, b) = (i.unsigned_abs().max(j.unsigned_abs()), i.unsigned_abs().min(j.unsigned_abs()));
                if a as isize > reach {
                    0.0
                } else {
                    octant[a][b]
                }
            };
            for j in 0..=reach {
                let lo = if j == 0 { 1 } else { -reach };
                let mut first = None;
                let mut last = None;
                for i in lo..=reach {
                    if lookup(i, j) > 0.0 {
                        first.get_or_insert(i);
                        last = Some(i);
                    }
                }
                let (Some(a), Some(b)) = (first, last) else { continue };
                let start = weights.len();
                for i in a..=b {
                    weights.push(T::lit(lookup(i, j)));
                }
                rows.push(MidRow {
                    dj: j,
                    di_lo: a,
                    len: (b - a + 1) as usize,
                    start,
                });
            }
        }

        let tail_start = weights.len();
        let (gx, gw) = gauss_legendre::<T>(spec.tail_points);
        let mut tail_points = Vec::new();
        let ten = T::lit(10.0);
        let mut a = big_r;
        for _ in 0..spec.tail_decades {
            let b = a * ten;
            let (mid, half) = ((a + b) / T::lit(2.0), (b - a) / T::lit(2.0));
            for &(th, om) in &dirs {
                for (&x, &w) in gx.iter().zip(&gw) {
                    let r = mid + half * x;
                    tail_points.push([r * th[0], r * th[1]]);
                    weights.push(om * w * half * damp * r.powf(-T::one() - sigma));
                }
            }
            a = b;
        }
        let far_radius = a;
        let rem_start = weights.len();
        let rem_dirs: Vec<Point<T>> = dirs.iter().map(|d| d.0).collect();
        weights.extend(dirs.iter().map(|d| d.1 * damp * far_radius.powf(-sigma) / sigma));

        Ok(Self {
            grid,
            sigma,
            r0,
            near,
            rows,
            tail_points,
            tail_per_decade: dirs.len() * spec.tail_points,
            rem_dirs,
            far_radius,
            weights,
            near_start: 0,
            mid_start,
            tail_start,
            rem_start,
        })
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn near_radius(&self) -> T {
        self.r0
    }

    pub fn far_radius(&self) -> T {
        self.far_radius
    }

    pub fn num_terms(&self) -> usize {
        self.weights.len()
    }

    /// Base weights of all terms: near, mid rows, tail, remainder.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn near_directions(&self) -> &[Point<T>] {
        &self.near
    }

    pub fn rows(&self) -> &[MidRow] {
        &self.rows
    }

    pub fn tail_points(&self) -> &[Point<T>] {
        &self.tail_points
    }

    /// Number of tail terms in the first radial decade.
    pub fn tail_first_decade(&self) -> usize {
        self.tail_per_decade
    }

    pub fn remainder_directions(&self) -> &[Point<T>] {
        &self.rem_dirs
    }

    pub fn near_range(&self) -> std::ops::Range<usize> {
        self.near_start..self.mid_start
    }

    pub fn mid_range(&self) -> std::ops::Range<usize> {
        self.mid_start..self.tail_start
    }

    pub fn tail_range(&self) -> std::ops::Range<usize> {
        self.tail_start..self.rem_start
    }

    pub fn remainder_range(&self) -> std::ops::Range<usize> {
        self.rem_start..self.weights.len()
    }

    /// Mid-field offset of term `t` in lattice units.
    pub fn mid_offset(&self, t: usize) -> [isize; 2] {
        let k = self.rows.partition_point(|r| r.start <= t) - 1;
        let row = &self.rows[k];
        [row.di_lo + (t - row.start) as isize, row.dj]
    }

    /// A representative point of every term, where multipliers are sampled:
    /// `r0 theta / 2` for the near field, the lattice point for the mid field, the
    /// quadrature node for the tail and `R_far theta` for the remainder.
    pub fn term_points(&self) -> Vec<Point<T>> {
        let h = self.grid.h();
        let mut pts = Vec::with_capacity(self.num_terms());
        let mid = self.r0 / T::lit(2.0);
        pts.extend(self.near.iter().map(|th| [mid * th[0], mid * th[1]]));
        for row in &self.rows {
            for k in 0..row.len {
                let di = row.di_lo + k as isize;
                pts.push([T::from_isize(di).unwrap() * h, T::from_isize(row.dj).unwrap() * h]);
            }
        }
        pts.extend(self.tail_points.iter().copied());
        pts.extend(self.rem_dirs.iter().map(|th| [self.far_radius * th[0], self.far_radius * th[1]]));
        pts
    }

    /// Integral of an even density `f` over the region represented by term
    /// `t` (both `y` and `-y`), restricted to `|y| > r0`. Near-field terms get 0.
    pub fn term_integral(&self, t: usize, f: &dyn Fn(&Point<T>) -> T, breaks: &[T]) -> T {
        let n = self.grid.dim();
        let gl = gauss_legendre::<f64>(8);
        let radial = |a: f64, b: f64, dir: (f64, f64)| -> f64 {
            // integral of f(r dir) r^(n-1) over [a, b], split at the breaks
            let mut knots = vec![a, b];
            knots.extend(breaks.iter().map(|x| x.as_f64()).filter(|&x| x > a && x < b));
            knots.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut s = 0.0;
            for w in knots.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
                for (&x, &gw) in gl.0.iter().zip(&gl.1) {
                    let r = mid + half * x;
                    let v = f(&[T::lit(r * dir.0), T::lit(r * dir.1)]).as_f64();
                    s += gw * half * v * r.powi(n as i32 - 1);
                }
            }
            s
        };
        let (hf, r0f, rf) = (self.grid.h().as_f64(), self.r0.as_f64(), self.grid.box_radius().as_f64());
        if self.mid_range().contains(&t) {
            let [di, dj] = self.mid_offset(t);
            if n == 1 {
                let kf = di as f64;
                let a = ((kf - 0.5) * hf).max(r0f);
                let b = ((kf + 0.5) * hf).min(rf);
                return T::lit(if b > a { 2.0 * radial(a, b, (1.0, 0.0)) } else { 0.0 });
            }
            let (x0, x1) = ((di as f64 - 0.5) * hf, (di as f64 + 0.5) * hf);
            let (y0, y1) = ((dj as f64 - 0.5) * hf, (dj as f64 + 0.5) * hf);
            let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
            let dists: Vec<f64> = corners.iter().map(|&(x, y)| (x * x + y * y).sqrt()).collect();
            let straddles = dists.iter().any(|&d| d < r0f * 1.5) || dists.iter().any(|&d| d > rf);
            let mut angles: Vec<f64> = corners.iter().map(|&(x, y)| y.atan2(x)).collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // cells on the negative x axis straddle the branch cut of atan2
            if angles[3] - angles[0] > std::f64::consts::PI {
                for a in angles.iter_mut() {
                    if *a < 0.0 {
                        *a += std::f64::consts::TAU;
                    }
                }
                angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
            let mut total = 0.0;
            for w in angles.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b - a < 1e-15 {
                    continue;
                }
                let sub = if straddles { 16 } else { 4 };
                let step = (b - a) / sub as f64;
                for k in 0..sub {
                    let lo = a + step * k as f64;
                    let half = step / 2.0;
                    for (&x, &gw) in gl.0.iter().zip(&gl.1) {
                        let th = lo + half + half * x;
                        let (c, s) = (th.cos(), th.sin());
                        let mut t_in = 0.0f64;
                        let mut t_out = f64::INFINITY;
                        for (d, lo, hi) in [(c, x0, x1), (s, y0, y1)] {
                            if d.abs() < 1e-300 {
                                continue;
                            }
                            let (p, q) = (lo / d, hi / d);
                            t_in = t_in.max(p.min(q));
                            t_out = t_out.min(p.max(q));
                        }
                        let (ra, rb) = (t_in.max(r0f), t_out.min(rf));
                        if rb > ra {
                            total += gw * half * radial(ra, rb, (c, s));
                        }
                    }
                }
            }
            return T::lit(2.0 * total);
        }
        if self.tail_range().contains(&t) {
            let k = t - self.tail_start;
            let y = self.tail_points[k];
            // base weight carries damp * r^(-1-sigma); recover the radial measure
            let r = crate::grid::norm(&y, n);
            let damp = T::lit(2.0) - self.sigma;
            let measure = self.weights[t] / (damp * r.powf(-T::one() - self.sigma));
            return f(&y) * measure * r.powi(n as i32 - 1);
        }
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for m in [1usize, 2, 5, 16, 128] {
            let (x, w) = gauss_legendre::<f64>(m);
            let sum: f64 = w.iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "m={m}");
            let deg = 2 * m - 1;
            let exact = if deg % 2 == 1 { 2.0 / (deg as f64) } else { 0.0 };
            let p = (deg - 1).max(0) as i32;
            let q: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(p)).sum();
            assert!((q - exact).abs() < 1e-12, "m={m}: {q} vs {exact}");
        }
    }

    #[test]
    fn half_sphere_integrates_even_quadratics() {
        let rule = half_sphere_rule::<f64>(2, 64);
        let s: f64 = rule.iter().map(|(t, w)| w * t[0] * t[0]).sum();
        assert!((s - std::f64::consts::PI).abs() < 1e-13);
        let s: f64 = rule.iter().map(|(t, w)| w * t[0] * t[1]).sum();
        assert!(s.abs() < 1e-13);
    }

    #[test]
    fn one_dimensional_weights_have_closed_form() {
        let g = GridSpec::new(1, 4.0, 0.25).unwrap();
        let plan = OperatorPlan::new(g, 1.5, &QuadratureSpec::default()).unwrap();
        let w = &plan.weights()[plan.mid_range()];
        let e = 0.5f64;
        let w1 = 2.0 * (0.375f64.powf(e) - 0.25f64.powf(e)) / 0.0625;
        assert!((w[0] - w1).abs() < 1e-15);
        // quadratic moment: sum w_t |y_t|^2 equals the kernel's second moment on r0 < |y| <= R
        let m: f64 = w.iter().enumerate().map(|(k, w)| w * ((k + 1) as f64 * 0.25).powi(2)).sum();
        let exact = 2.0 * (4f64.powf(e) - 0.25f64.powf(e));
        assert!((m - exact).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_weights_match_the_annulus_moment() {
        for sigma in [0.5, 1.5, 1.99] {
            let g = GridSpec::new(2, 6.0, 0.25).unwrap();
            let plan = OperatorPlan::new(g, sigma, &QuadratureSpec::default()).unwrap();
            let w = &plan.weights()[plan.mid_range()];
            let mut m = 0.0;
            for (k, t) in plan.mid_range().enumerate() {
                let [i, j] = plan.mid_offset(t);
                m += w[k] * ((i * i + j * j) as f64) * 0.0625;
            }
            // int_{r0 < |y| < R} (2-s)|y|^(-s) dy = 2 pi (R^(2-s) - r0^(2-s))
            let e = 2.0 - sigma;
            let exact = std::f64::consts::TAU * (6f64.powf(e) - 0.25f64.powf(e));
            assert!((m - exact).abs() < 1e-7 * exact, "sigma={sigma}: {m} vs {exact}");
        }
    }

    #[test]
    fn tail_and_remainder_carry_the_outer_mass() {
        let sigma = 0.7;
        let g = GridSpec::new(1, 4.0, 0.25).unwrap();
        let plan = OperatorPlan::new(g, sigma, &QuadratureSpec::default()).unwrap();
        let s: f64 = plan.weights()[plan.tail_range()].iter().sum::<f64>()
            + plan.weights()[plan.remainder_range()].iter().sum::<f64>();
        // 2 int_R^inf (2-s) r^(-1-s) dr
        let exact = 2.0 * (2.0 - sigma) * 4f64.powf(-sigma) / sigma;
        assert!((s - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn term_integral_of_the_cell_moment_density() {
        let sigma = 1.3;
        let g = GridSpec::new(2, 6.0, 0.5).unwrap();
        let plan = OperatorPlan::new(g, sigma, &QuadratureSpec::default()).unwrap();
        let f = |y: &Point<f64>| (2.0 - sigma) * (y[0] * y[0] + y[1] * y[1]).powf(-sigma / 2.0);
        for t in plan.mid_range().step_by(97) {
            let [i, j] = plan.mid_offset(t);
            let r2 = ((i * i + j * j) as f64) * 0.25;
            let direct = plan.term_integral(t, &f, &[]) / r2;
            let w = plan.weights()[t];
            assert!((direct - w).abs() < 1e-5 * w.max(1e-3), "t={t} ({i},{j}): {direct} vs {w}");
        }
    }
}
