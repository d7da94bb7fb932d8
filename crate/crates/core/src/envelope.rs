//! Concave envelope in `B_3`, ring estimates around contact points, and the
//! dyadic cube decomposition with its Riemann-sum bound.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{norm, ExteriorClosure, GridFunction, GridSpec, Point};
use crate::scalar::Real;

/// Relative tolerance of the 2D sweeps.
pub const SWEEP_TOLERANCE: f64 = 1e-10;
/// Relative tolerance defining the contact set.
pub const CONTACT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EnvelopeResult<T> {
    /// Envelope on `B_3` nodes, zero elsewhere.
    pub gamma: GridFunction<T>,
    /// `u = Gamma` (within tolerance) at nodes of `B_2`.
    pub contact: Vec<bool>,
    /// Central-difference gradient of `Gamma` (zero outside `B_3`).
    pub gradient: Vec<Point<T>>,
}

impl<T: Real> EnvelopeResult<T> {
    pub fn contact_nodes(&self) -> Vec<usize> {
        (0..self.contact.len()).filter(|&i| self.contact[i]).collect()
    }
}

fn closure_max<T: Real>(c: &ExteriorClosure<T>) -> T {
    match c {
        ExteriorClosure::Zero => T::zero(),
        ExteriorClosure::Constant(v) => *v,
        ExteriorClosure::PowerDecay { amplitude, .. } => amplitude.max(T::zero()),
        ExteriorClosure::SignStep { amplitude, .. } => amplitude.abs(),
        ExteriorClosure::RadialTable { values, .. } => values.iter().fold(T::neg_infinity(), |a, &b| a.max(b)),
    }
}

/// Values of the upper concave hull of `(k, v[k])`, evaluated at every `k`.
pub fn upper_hull<T: Real>(v: &[T]) -> Vec<T> {
    let m = v.len();
    if m <= 2 {
        return v.to_vec();
    }
    let mut hull: Vec<usize> = Vec::with_capacity(m);
    for k in 0..m {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or below the chord from a to k
            let (xa, xb, xk) = (T::from_usize(a).unwrap(), T::from_usize(b).unwrap(), T::from_usize(k).unwrap());
            let cross = (xb - xa) * (v[k] - v[a]) - (v[b] - v[a]) * (xk - xa);
            if cross >= T::zero() {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    let mut out = vec![T::zero(); m];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = T::from_usize(b - a).unwrap();
        for k in a..=b {
            let t = T::from_usize(k - a).unwrap() / len;
            out[k] = v[a] + (v[b] - v[a]) * t;
        }
        out[a] = v[a];
        out[b] = v[b];
    }
    out
}

const DIRECTIONS: [[isize; 2]; 8] = [[1, 0], [0, 1], [1, 1], [1, -1], [1, 2], [2, 1], [1, -2], [2, -1]];

/// Lattice lines through the node set `inside`, one list per direction.
fn lattice_lines<T: Real>(g: &GridSpec<T>, inside: &[bool]) -> Vec<Vec<Vec<usize>>> {
    let m = g.points_per_axis() as isize;
    let at = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i >= m || j >= m {
            return None;
        }
        let f = (i + m * j) as usize;
        inside[f].then_some(f)
    };
    DIRECTIONS
        .iter()
        .map(|d| {
            let mut lines = Vec::new();
            for f in 0..inside.len() {
                if !inside[f] {
                    continue;
                }
                let idx = g.unflat(f);
                let (i, j) = (idx[0] as isize, idx[1] as isize);
                if at(i - d[0], j - d[1]).is_some() {
                    continue;
                }
                let mut line = vec![f];
                let (mut a, mut b) = (i + d[0], j + d[1]);
                while let Some(h) = at(a, b) {
                    line.push(h);
                    a += d[0];
                    b += d[1];
                }
                if line.len() > 2 {
                    lines.push(line);
                }
            }
            lines
        })
        .collect()
}

/// Least concave function on `B_3` lying above `u` on `B_2` and above zero on
/// `B_3 \ B_2`. Exact in 1D; in 2D the fixed point of 1D hull sweeps along
/// eight lattice directions.
pub fn concave_envelope<T: Real>(u: &GridFunction<T>) -> Result<EnvelopeResult<T>> {
    let g = u.spec();
    let n = g.dim();
    if g.box_radius() < T::lit(3.0) {
        return Err(Error::InvalidGrid("box must contain B_3".into()));
    }
    let radii: Vec<T> = g.nodes().map(|i| norm(&g.node_point(i), n)).collect();
    let eps = T::lit(1e-12);
    let scale = u.values().iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let bad: Vec<usize> = g
        .nodes()
        .filter(|&i| radii[i] > T::one() + eps && u.node_value(i) > T::zero())
        .collect();
    if !bad.is_empty() || closure_max(u.exterior()) > T::zero() {
        let shown: Vec<String> = bad.iter().take(8).map(|&i| format!("{:?}", &g.unflat(i)[..n])).collect();
        return Err(Error::Precondition(format!(
            "u must be <= 0 outside B_1; {} offending nodes {}{}",
            bad.len(),
            shown.join(" "),
            if closure_max(u.exterior()) > T::zero() { " and a positive exterior closure" } else { "" }
        )));
    }
    let three = T::lit(3.0) + eps;
    let two = T::lit(2.0) + eps;
    let inside: Vec<bool> = radii.iter().map(|&r| r <= three).collect();
    let mut gamma: Vec<T> = g
        .nodes()
        .map(|i| if radii[i] <= two { u.node_value(i) } else { T::zero() })
        .collect();

    if n == 1 {
        let idx: Vec<usize> = g.nodes().filter(|&i| inside[i]).collect();
        let vals: Vec<T> = idx.iter().map(|&i| gamma[i]).collect();
        for (&i, v) in idx.iter().zip(upper_hull(&vals)) {
            gamma[i] = v;
        }
    } else {
        let lines = lattice_lines(g, &inside);
        let tol = T::lit(SWEEP_TOLERANCE) * scale;
        let mut converged = false;
        for _ in 0..10_000 {
            let mut change = T::zero();
            for dir in &lines {
                let updates: Vec<(usize, T)> = dir
                    .par_iter()
                    .flat_map_iter(|line| {
                        let vals: Vec<T> = line.iter().map(|&i| gamma[i]).collect();
                        let hull = upper_hull(&vals);
                        line.iter().copied().zip(hull).collect::<Vec<_>>()
                    })
                    .collect();
                for (i, v) in updates {
                    if v > gamma[i] {
                        change = change.max(v - gamma[i]);
                        gamma[i] = v;
                    }
                }
            }
            if change <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical("concave envelope sweeps did not converge".into()));
        }
    }

    let gradient = envelope_gradient(g, &gamma, &inside);
    let ctol = T::lit(CONTACT_TOLERANCE) * scale;
    let contact = g
        .nodes()
        .map(|i| radii[i] <= two && gamma[i] - u.node_value(i) <= ctol)
        .collect();
    let gamma = GridFunction::from_values(g.clone(), gamma, ExteriorClosure::Zero)?;
    Ok(EnvelopeResult {
        gamma,
        contact,
        gradient,
    })
}

fn envelope_gradient<T: Real>(g: &GridSpec<T>, gamma: &[T], inside: &[bool]) -> Vec<Point<T>> {
    let n = g.dim();
    let m = g.points_per_axis();
    let h = g.h();
    g.nodes()
        .map(|f| {
            if !inside[f] {
                return [T::zero(); 2];
            }
            let idx = g.unflat(f);
            let mut out = [T::zero(); 2];
            for (axis, o) in out.iter_mut().enumerate().take(n) {
                let stride = if axis == 0 { 1 } else { m };
                let fwd = (idx[axis] + 1 < m).then(|| f + stride).filter(|&k| inside[k]);
                let bwd = (idx[axis] > 0).then(|| f - stride).filter(|&k| inside[k]);
                *o = match (bwd, fwd) {
                    (Some(b), Some(a)) => (gamma[a] - gamma[b]) / (h + h),
                    (None, Some(a)) => (gamma[a] - gamma[f]) / h,
                    (Some(b), None) => (gamma[f] - gamma[b]) / h,
                    (None, None) => T::zero(),
                };
            }
            out
        })
        .collect()
}

/// `1 / (8 sqrt n)`.
pub fn rho0<T: Real>(n: usize) -> T {
    T::one() / (T::lit(8.0) * T::from_usize(n).unwrap().sqrt())
}

/// Largest admissible cube diameter `rho0 2^(-1/(2-sigma))`.
pub fn max_diameter<T: Real>(n: usize, sigma: T) -> T {
    rho0::<T>(n) * T::lit(2.0).powf(-T::one() / (T::lit(2.0) - sigma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingEstimate<T> {
    /// First ring meeting the bound, if any resolvable ring does.
    pub k: Option<usize>,
    /// Ratio at `k`, or the smallest ratio seen.
    pub ratio: T,
}

/// Finds the first ring `r_{k+1} <= |y - x| < r_k` where the fraction of
/// nodes with `u(y) < u(x) + (y - x).grad Gamma(x) - M r_k^2` is at most
/// `c0 f_x / M`.
pub fn ring_estimate<T: Real>(
    u: &GridFunction<T>,
    env: &EnvelopeResult<T>,
    node: usize,
    f_x: T,
    m: T,
    sigma: T,
    c0: T,
) -> Result<RingEstimate<T>> {
    let g = u.spec();
    let n = g.dim();
    let h = g.h();
    if !env.contact[node] {
        return Err(Error::Precondition("ring estimate needs a contact node".into()));
    }
    if !(m > T::zero()) {
        return Err(Error::Precondition("M must be positive".into()));
    }
    let x = g.node_point(node);
    let ux = u.node_value(node);
    let grad = env.gradient[node];
    let bound = c0 * f_x / m;
    let first = max_diameter::<T>(n, sigma);
    if first / T::lit(2.0) < T::lit(2.0) * h {
        return Err(Error::GridTooCoarse(format!(
            "no ring resolvable: r_1 = {} < 2h = {}; use a smaller h",
            first / T::lit(2.0),
            T::lit(2.0) * h
        )));
    }
    let reach = (first / h).ceil().to_isize().unwrap();
    let mut best = T::infinity();
    let mut k = 0usize;
    loop {
        let outer = first * T::lit(2.0).powi(-(k as i32));
        let inner = outer / T::lit(2.0);
        if inner < T::lit(2.0) * h {
            break;
        }
        let mut total = 0usize;
        let mut below = 0usize;
        let jr = if n == 1 { 0 } else { reach };
        for dj in -jr..=jr {
            for di in -reach..=reach {
                let y = [x[0] + T::from_isize(di).unwrap() * h, x[1] + T::from_isize(dj).unwrap() * h];
                let d = [y[0] - x[0], y[1] - x[1]];
                let r = norm(&d, n);
                if r < inner || r >= outer {
                    continue;
                }
                total += 1;
                let plane = ux + d[0] * grad[0] + d[1] * grad[1] - m * outer * outer;
                if u.eval_at(&y) < plane {
                    below += 1;
                }
            }
        }
        let ratio = T::from_usize(below).unwrap() / T::from_usize(total.max(1)).unwrap();
        if ratio <= bound {
            return Ok(RingEstimate { k: Some(k), ratio });
        }
        best = best.min(ratio);
        k += 1;
    }
    Ok(RingEstimate { k: None, ratio: best })
}

/// Constants tested by the decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbpConstants<T> {
    pub c: T,
    pub mu: T,
}

impl<T: Real> Default for AbpConstants<T> {
    fn default() -> Self {
        Self {
            c: T::lit(10.0),
            mu: T::lit(0.01),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeRecord<T> {
    pub center: Point<T>,
    pub diameter: T,
    pub level: usize,
    pub maxf: T,
    /// Estimated `|grad Gamma(closure)|`.
    pub image: T,
    /// `|{y in 4 sqrt(n) Q : u > Gamma - C maxf d^2}| / |Q|`.
    pub fraction: T,
    pub passes_e: bool,
    pub passes_f: bool,
}

impl<T: Real> CubeRecord<T> {
    pub fn side(&self, n: usize) -> T {
        self.diameter / T::from_usize(n).unwrap().sqrt()
    }

    pub fn volume(&self, n: usize) -> T {
        self.side(n).powi(n as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeDecomposition<T> {
    pub dim: usize,
    pub cubes: Vec<CubeRecord<T>>,
    pub rho0: T,
    pub sigma: T,
    pub constants: AbpConstants<T>,
    /// Smallest `C` for which every cube passes (e).
    pub c_measured: T,
    /// Largest `mu` for which every cube passes (f).
    pub mu_measured: T,
    pub depth: usize,
    pub complete: bool,
}

fn in_closure<T: Real>(x: &Point<T>, c: &Point<T>, half: T, n: usize) -> bool {
    let tol = half * T::lit(1e-9);
    (0..n).all(|k| (x[k] - c[k]).abs() <= half + tol)
}

/// Nodes of the grid in the closed cube `center +- half`.
fn nodes_in_cube<T: Real>(g: &GridSpec<T>, c: &Point<T>, half: T) -> Vec<usize> {
    let n = g.dim();
    let h = g.h();
    let m = g.points_per_axis() as isize;
    let hv = g.half() as isize;
    let lo = |k: usize| ((c[k] - half) / h).ceil().to_isize().unwrap() - 1 + hv;
    let hi = |k: usize| ((c[k] + half) / h).floor().to_isize().unwrap() + 1 + hv;
    let (i0, i1) = (lo(0).max(0), hi(0).min(m - 1));
    let (j0, j1) = if n == 1 { (0, 0) } else { (lo(1).max(0), hi(1).min(m - 1)) };
    let mut out = Vec::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            let f = if n == 1 { i as usize } else { (i + m * j) as usize };
            if in_closure(&g.node_point(f), c, half, n) {
                out.push(f);
            }
        }
    }
    out
}

/// Measure of the gradient image of a node set: the range length in 1D,
/// occupied cells of side `h` in 2D.
fn image_measure<T: Real>(grads: impl Iterator<Item = Point<T>>, n: usize, h: T) -> T {
    if n == 1 {
        let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
        for g in grads {
            lo = lo.min(g[0]);
            hi = hi.max(g[0]);
        }
        if hi < lo {
            T::zero()
        } else {
            hi - lo
        }
    } else {
        binned_measure(grads, n, h)
    }
}

fn binned_measure<T: Real>(grads: impl Iterator<Item = Point<T>>, n: usize, h: T) -> T {
    let cells: HashSet<(i64, i64)> = grads
        .map(|g| {
            let a = (g[0] / h).floor().to_i64().unwrap_or(i64::MAX);
            let b = if n == 1 { 0 } else { (g[1] / h).floor().to_i64().unwrap_or(i64::MAX) };
            (a, b)
        })
        .collect();
    T::from_usize(cells.len()).unwrap() * h.powi(n as i32)
}

/// The split-and-discard algorithm: tile `[-1, 1]^n` with cubes of diameter
/// [`max_diameter`], keep those whose closure holds a contact node, and split
/// the ones failing (e) or (f) until all pass or `max_depth` is reached.
pub fn cube_decompose<T: Real>(
    u: &GridFunction<T>,
    env: &EnvelopeResult<T>,
    f: &GridFunction<T>,
    sigma: T,
    max_depth: usize,
    constants: AbpConstants<T>,
) -> Result<CubeDecomposition<T>> {
    let g = u.spec();
    let n = g.dim();
    if f.spec() != g || env.gamma.spec() != g {
        return Err(Error::Precondition("u, f and the envelope must share a grid".into()));
    }
    if f.values().iter().any(|&v| v < T::zero()) {
        return Err(Error::Precondition("f must be nonnegative".into()));
    }
    let d0 = max_diameter::<T>(n, sigma);
    let nf = T::from_usize(n).unwrap();
    let side0 = d0 / nf.sqrt();
    let per_axis = (T::lit(2.0) / side0).ceil().to_usize().unwrap();
    let centre = |k: usize| -T::one() + side0 * (T::from_usize(k).unwrap() + T::lit(0.5));
    let mut queue: Vec<(Point<T>, T, usize)> = Vec::new();
    for j in 0..if n == 1 { 1 } else { per_axis } {
        for i in 0..per_axis {
            let c = [centre(i), if n == 1 { T::zero() } else { centre(j) }];
            queue.push((c, side0, 0));
        }
    }
    let contact = &env.contact;
    let holds_contact = |c: &Point<T>, side: T| nodes_in_cube(g, c, side / T::lit(2.0)).iter().any(|&i| contact[i]);
    queue.retain(|(c, s, _)| holds_contact(c, *s));

    let mut done: Vec<CubeRecord<T>> = Vec::new();
    let mut depth = 0;
    let mut complete = true;
    while !queue.is_empty() {
        let tested: Vec<CubeRecord<T>> = queue
            .par_iter()
            .map(|&(c, side, level)| test_cube(u, env, f, c, side, level, constants))
            .collect();
        let mut next = Vec::new();
        for rec in tested {
            depth = depth.max(rec.level);
            if (rec.passes_e && rec.passes_f) || rec.level >= max_depth {
                if !(rec.passes_e && rec.passes_f) {
                    complete = false;
                }
                done.push(rec);
            } else {
                let s = rec.side(n) / T::lit(2.0);
                let q = s / T::lit(2.0);
                let offs: &[[T; 2]] = &[[-q, -q], [q, -q], [-q, q], [q, q]];
                for o in offs.iter().take(if n == 1 { 2 } else { 4 }) {
                    let c = [rec.center[0] + o[0], if n == 1 { T::zero() } else { rec.center[1] + o[1] }];
                    if holds_contact(&c, s) {
                        next.push((c, s, rec.level + 1));
                    }
                }
            }
        }
        queue = next;
    }
    done.sort_by(|a, b| {
        (a.center[1], a.center[0], a.level)
            .partial_cmp(&(b.center[1], b.center[0], b.level))
            .unwrap()
    });
    let c_measured = done.iter().fold(T::zero(), |acc, r| {
        let denom = r.maxf.powi(n as i32) * r.volume(n);
        acc.max(if r.image == T::zero() { T::zero() } else { r.image / denom })
    });
    let mu_measured = done.iter().fold(T::infinity(), |acc, r| acc.min(r.fraction));
    Ok(CubeDecomposition {
        dim: n,
        cubes: done,
        rho0: rho0(n),
        sigma,
        constants,
        c_measured,
        mu_measured: if mu_measured.is_finite() { mu_measured } else { T::zero() },
        depth,
        complete,
    })
}

fn test_cube<T: Real>(
    u: &GridFunction<T>,
    env: &EnvelopeResult<T>,
    f: &GridFunction<T>,
    c: Point<T>,
    side: T,
    level: usize,
    k: AbpConstants<T>,
) -> CubeRecord<T> {
    let g = u.spec();
    let n = g.dim();
    let nf = T::from_usize(n).unwrap();
    let h = g.h();
    let half = side / T::lit(2.0);
    let diameter = side * nf.sqrt();
    let own = nodes_in_cube(g, &c, half);
    let maxf = own.iter().fold(T::zero(), |a, &i| a.max(f.node_value(i).max(T::zero())));
    let volume = side.powi(n as i32);
    let image = image_measure(own.iter().map(|&i| env.gradient[i]), n, h);
    let passes_e = image <= k.c * maxf.powi(n as i32) * volume;

    let wide = half * T::lit(4.0) * nf.sqrt();
    let gap = k.c * maxf * diameter * diameter;
    let hits = nodes_in_cube(g, &c, wide)
        .into_iter()
        .filter(|&i| u.node_value(i) > env.gamma.node_value(i) - gap)
        .count();
    let fraction = T::from_usize(hits).unwrap() * h.powi(n as i32) / volume;
    CubeRecord {
        center: c,
        diameter,
        level,
        maxf,
        image,
        fraction,
        passes_e,
        passes_f: fraction >= k.mu,
    }
}

/// `(|grad Gamma(contact)|, sum_j (max f+)^n |Q_j|)`, the image measured by
/// occupancy of gradient cells of side `h`.
pub fn abp_bound<T: Real>(dec: &CubeDecomposition<T>, env: &EnvelopeResult<T>) -> (T, T) {
    let g = env.gamma.spec();
    let n = g.dim();
    let contact = env.contact_nodes();
    if contact.is_empty() {
        return (T::zero(), T::zero());
    }
    let lhs = binned_measure(contact.iter().map(|&i| env.gradient[i]), n, g.h());
    let rhs = dec
        .cubes
        .iter()
        .fold(T::zero(), |a, r| a + r.maxf.powi(n as i32) * r.volume(n));
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_function;
    use proptest::prelude::*;

    fn tent(g: &GridSpec<f64>) -> GridFunction<f64> {
        sample_function(g.clone(), |x: &Point<f64>| (1.0 - norm(x, g.dim())).max(0.0), ExteriorClosure::Zero).unwrap()
    }

    #[test]
    fn one_dimensional_tent() {
        let g = GridSpec::new(1, 4.0, 1.0 / 32.0).unwrap();
        let env = concave_envelope(&tent(&g)).unwrap();
        let at = |x: f64| env.gamma.node_value(g.node_at(&[x, 0.0]).unwrap());
        assert!((at(1.5) - 0.5).abs() < 1e-14);
        assert!((at(-3.0)).abs() < 1e-14 && (at(0.0) - 1.0).abs() < 1e-14);
        assert_eq!(at(3.5), 0.0);
        assert_eq!(env.contact_nodes(), vec![g.origin()]);
        assert!((env.gradient[g.node_at(&[1.0, 0.0]).unwrap()][0] + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_data_gives_zero_envelope() {
        let g = GridSpec::new(2, 6.0, 0.25).unwrap();
        let u = sample_function(g.clone(), |x: &Point<f64>| -(x[0] * x[0]).min(1.0), ExteriorClosure::Zero).unwrap();
        let env = concave_envelope(&u).unwrap();
        assert!(env.gamma.values().iter().all(|&v| v == 0.0));
        for i in g.nodes() {
            let r = norm(&g.node_point(i), 2);
            assert_eq!(env.contact[i], r <= 2.0 && u.node_value(i) == 0.0);
        }
    }

    #[test]
    fn maximum_point_is_contact() {
        let g = GridSpec::new(2, 6.0, 1.0 / 8.0).unwrap();
        let u = sample_function(g.clone(), |x: &Point<f64>| 0.7 * (1.0 - x[0] * x[0] - x[1] * x[1]), ExteriorClosure::Zero)
            .unwrap()
            .map_values(|_, v| v.min(0.7).max(-0.2))
            .unwrap();
        let u = GridFunction::from_values(
            g.clone(),
            g.nodes().map(|i| if norm(&g.node_point(i), 2) > 1.0 { u.node_value(i).min(0.0) } else { u.node_value(i) }).collect(),
            ExteriorClosure::Zero,
        )
        .unwrap();
        let env = concave_envelope(&u).unwrap();
        assert!(env.contact[g.origin()]);
        for i in g.nodes() {
            if norm(&g.node_point(i), 2) <= 2.0 {
                assert!(env.gamma.node_value(i) >= u.node_value(i) - 1e-14);
            }
        }
        // concave along every grid line inside B_3
        let m = g.points_per_axis();
        for f in g.nodes() {
            let idx = g.unflat(f);
            if idx[0] == 0 || idx[0] + 1 == m || idx[1] == 0 || idx[1] + 1 == m {
                continue;
            }
            let ok = |k: usize| norm(&g.node_point(k), 2) <= 3.0;
            let v = env.gamma.values();
            for s in [1, m] {
                if ok(f - s) && ok(f + s) && ok(f) {
                    assert!(v[f + s] + v[f - s] - 2.0 * v[f] <= 1e-9);
                }
            }
        }
        let again = concave_envelope(&GridFunction::from_values(
            g.clone(),
            g.nodes().map(|i| if norm(&g.node_point(i), 2) <= 1.0 { env.gamma.node_value(i) } else { u.node_value(i) }).collect(),
            ExteriorClosure::Zero,
        ).unwrap())
        .unwrap();
        for i in g.nodes() {
            assert!((again.gamma.node_value(i) - env.gamma.node_value(i)).abs() < 1e-10);
        }
    }

    #[test]
    fn positive_data_outside_unit_ball_is_rejected() {
        let g = GridSpec::new(1, 4.0, 0.25).unwrap();
        let u = sample_function(g.clone(), |x: &Point<f64>| (1.5 - x[0].abs()).max(0.0), ExteriorClosure::Zero).unwrap();
        assert!(matches!(concave_envelope(&u), Err(Error::Precondition(_))));
        let v = tent(&g).with_exterior(ExteriorClosure::Constant(0.5)).unwrap();
        assert!(concave_envelope(&v).is_err());
    }

    #[test]
    fn ring_estimate_examples() {
        let g = GridSpec::new(1, 4.0, 1.0 / 512.0).unwrap();
        let sigma = 1.0;
        // locally affine near the contact point
        let u = sample_function(g.clone(), |x: &Point<f64>| if x[0].abs() <= 1.0 { 1.0 - x[0].abs() / 3.0 } else { 0.0 }, ExteriorClosure::Zero).unwrap();
        let env = concave_envelope(&u).unwrap();
        let x = g.node_at(&[0.5, 0.0]).unwrap();
        assert!(env.contact[x]);
        let r = ring_estimate(&u, &env, x, 1.0, 3.0, sigma, 10.0).unwrap();
        assert_eq!(r, RingEstimate { k: Some(0), ratio: 0.0 });
        // concave quadratic: empty set once M exceeds the curvature
        let q = sample_function(g.clone(), |x: &Point<f64>| (1.0 - x[0] * x[0]).max(0.0) * 0.5, ExteriorClosure::Zero).unwrap();
        let env = concave_envelope(&q).unwrap();
        let r = ring_estimate(&q, &env, g.origin(), 1.0, 1.0, sigma, 10.0).unwrap();
        assert_eq!(r.ratio, 0.0);
        let coarse = GridSpec::new(1, 4.0, 0.25).unwrap();
        let qc = sample_function(coarse.clone(), |x: &Point<f64>| (1.0 - x[0] * x[0]).max(0.0), ExteriorClosure::Zero).unwrap();
        let ec = concave_envelope(&qc).unwrap();
        assert!(matches!(ring_estimate(&qc, &ec, coarse.origin(), 1.0, 1.0, sigma, 10.0), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn initial_diameter() {
        let d = max_diameter::<f64>(2, 1.5);
        assert!((d - 0.022097086912079608).abs() < 1e-15);
        assert!((d - 1.0 / (8.0 * 2f64.sqrt()) / 4.0).abs() < 1e-15);
    }

    fn check_properties(dec: &CubeDecomposition<f64>, env: &EnvelopeResult<f64>, g: &GridSpec<f64>) {
        let n = g.dim();
        let dmax = max_diameter::<f64>(n, dec.sigma);
        for c in &dec.cubes {
            assert!(c.diameter <= dmax);
            let half = c.side(n) / 2.0;
            assert!(nodes_in_cube(g, &c.center, half).iter().any(|&i| env.contact[i]));
        }
        for (a, ca) in dec.cubes.iter().enumerate() {
            for cb in &dec.cubes[a + 1..] {
                let sep = (0..n).any(|k| (ca.center[k] - cb.center[k]).abs() >= (ca.side(n) + cb.side(n)) / 2.0 - 1e-12);
                assert!(sep, "cubes overlap");
            }
        }
        for i in env.contact_nodes() {
            let x = g.node_point(i);
            if x[0].abs() > 1.0 || x[1].abs() > 1.0 {
                continue;
            }
            assert!(dec.cubes.iter().any(|c| in_closure(&x, &c.center, c.side(n) / 2.0, n)));
        }
    }

    #[test]
    fn empty_contact_set_gives_empty_decomposition() {
        let g = GridSpec::new(1, 4.0, 1.0 / 64.0).unwrap();
        let u = sample_function(g.clone(), |x: &Point<f64>| -1.0 - x[0] * x[0], ExteriorClosure::Zero).unwrap();
        let env = concave_envelope(&u).unwrap();
        let f = sample_function(g.clone(), |_: &Point<f64>| 1.0, ExteriorClosure::Zero).unwrap();
        let dec = cube_decompose(&u, &env, &f, 1.0, 6, AbpConstants::default()).unwrap();
        assert!(dec.cubes.is_empty());
        assert_eq!(abp_bound(&dec, &env), (0.0, 0.0));
    }

    #[test]
    fn smooth_cap_decomposes() {
        for (n, h) in [(1, 1.0 / 256.0), (2, 1.0 / 32.0)] {
            let r = if n == 1 { 4.0 } else { 6.0 };
            let g = GridSpec::new(n, r, h).unwrap();
            let u = sample_function(g.clone(), |x: &Point<f64>| 0.5 * (1.0 - x[0] * x[0] - x[1] * x[1]), ExteriorClosure::Zero)
                .unwrap();
            let u = GridFunction::from_values(
                g.clone(),
                g.nodes().map(|i| if norm(&g.node_point(i), n) > 1.0 { 0.0f64.min(u.node_value(i)) } else { u.node_value(i) }).collect(),
                ExteriorClosure::Zero,
            )
            .unwrap();
            let env = concave_envelope(&u).unwrap();
            let f = sample_function(g.clone(), |_: &Point<f64>| 1.0, ExteriorClosure::Zero).unwrap();
            let dec = cube_decompose(&u, &env, &f, 1.0, 6, AbpConstants::default()).unwrap();
            assert!(dec.complete && !dec.cubes.is_empty());
            check_properties(&dec, &env, &g);
            let (lhs, rhs) = abp_bound(&dec, &env);
            assert!(lhs > 0.0 && rhs > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn hull_dominates_and_is_idempotent(v in proptest::collection::vec(-1.0f64..1.0, 3..60)) {
            let hull = upper_hull(&v);
            for (a, b) in hull.iter().zip(&v) {
                prop_assert!(a >= &(b - 1e-15));
            }
            for w in hull.windows(3) {
                prop_assert!(w[0] + w[2] - 2.0 * w[1] <= 1e-12);
            }
            let again = upper_hull(&hull);
            for (a, b) in again.iter().zip(&hull) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
