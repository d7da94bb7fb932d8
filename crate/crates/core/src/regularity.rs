//! Empirical regularity estimators: oscillation decay, Harnack ratio,
//! level-set tails and incremental quotients.

use crate::error::{Error, Result};
use crate::grid::{norm, ExteriorClosure, GridFunction, GridSpec};
use crate::kernels::{Ellipticity, Kernel, KernelClass};
use crate::ops::{Evaluator, OperatorSpec};
use crate::quadrature::QuadratureSpec;
use crate::scalar::Real;
use crate::solver::{solve_policy, DirichletProblem, Domain, SolveReport};

/// Least squares line through `(x, y)`: `(slope, intercept, r2)`.
pub fn linear_fit<T: Real>(x: &[T], y: &[T]) -> (T, T, T) {
    let m = T::from_usize(x.len()).unwrap();
    let mx = x.iter().copied().sum::<T>() / m;
    let my = y.iter().copied().sum::<T>() / m;
    let sxx: T = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    let sxy: T = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let syy: T = y.iter().map(|&b| (b - my) * (b - my)).sum();
    let slope = if sxx > T::zero() { sxy / sxx } else { T::zero() };
    let intercept = my - slope * mx;
    let r2 = if syy > T::zero() {
        let res: T = x
            .iter()
            .zip(y)
            .map(|(&a, &b)| {
                let e = b - (intercept + slope * a);
                e * e
            })
            .sum();
        (T::one() - res / syy).max(T::zero())
    } else {
        T::one()
    };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderFit<T> {
    pub alpha: T,
    pub seminorm: T,
    pub r2: T,
    /// Oscillations over `B_{r 4^-k}`.
    pub oscillations: Vec<T>,
    pub degenerate: bool,
}

const ALPHA_CAP: f64 = 1.0;

fn ball<T: Real>(spec: &GridSpec<T>, r: T) -> Vec<usize> {
    let slack = spec.h() * T::lit(1e-9);
    let n = spec.dim();
    spec.nodes().filter(|&k| norm(&spec.node_point(k), n) <= r + slack).collect()
}

fn open_ball<T: Real>(spec: &GridSpec<T>, r: T) -> Vec<usize> {
    let slack = spec.h() * T::lit(1e-9);
    let n = spec.dim();
    spec.nodes().filter(|&k| norm(&spec.node_point(k), n) < r - slack).collect()
}

/// Fits `osc(B_{r 4^-k}) ~ 4^{-alpha k}` and measures the `alpha`-Hölder
/// seminorm on `B_r`.
pub fn holder_fit<T: Real>(u: &GridFunction<T>, radius: T) -> Result<HolderFit<T>> {
    let spec = u.spec();
    let four = T::lit(4.0);
    let mut radii = Vec::new();
    let mut r = radius;
    while r >= spec.h() * (T::one() - T::lit(1e-9)) {
        radii.push(r);
        r = r / four;
    }
    if radii.len() < 3 {
        return Err(Error::Estimator(format!(
            "only {} resolvable scales in a ball of radius {radius} at h = {}",
            radii.len(),
            spec.h()
        )));
    }
    let oscillations: Vec<T> = radii
        .iter()
        .map(|&r| {
            let vals = ball(spec, r).into_iter().map(|k| u.node_value(k));
            let (lo, hi) = vals.fold((T::infinity(), T::neg_infinity()), |(a, b), v| (a.min(v), b.max(v)));
            hi - lo
        })
        .collect();
    let scale = u.max_abs_value().max(T::min_positive_value());
    let (ks, logs): (Vec<T>, Vec<T>) = oscillations
        .iter()
        .enumerate()
        .filter(|(_, &o)| o > T::lit(1e-14) * scale)
        .map(|(k, &o)| (T::from_usize(k).unwrap(), o.ln() / four.ln()))
        .unzip();
    let cap = T::lit(ALPHA_CAP);
    if ks.len() < 2 {
        return Ok(HolderFit {
            alpha: cap,
            seminorm: T::zero(),
            r2: T::one(),
            oscillations,
            degenerate: true,
        });
    }
    let (slope, _, r2) = linear_fit(&ks, &logs);
    let alpha = (-slope).max(T::zero()).min(cap);
    let nodes = ball(spec, radius);
    let n = spec.dim();
    let mut seminorm = T::zero();
    for (a, &i) in nodes.iter().enumerate() {
        let xi = spec.node_point(i);
        for &j in &nodes[a + 1..] {
            let xj = spec.node_point(j);
            let d = norm(&[xi[0] - xj[0], xi[1] - xj[1]], n);
            let q = (u.node_value(i) - u.node_value(j)).abs() / d.powf(alpha);
            seminorm = seminorm.max(q);
        }
    }
    Ok(HolderFit {
        alpha,
        seminorm,
        r2,
        oscillations,
        degenerate: false,
    })
}

const NEGATIVITY_TOLERANCE: f64 = 1e-10;

/// `sup_{B_1/2} u / (u(0) + c0)` for a nonnegative `u`.
pub fn harnack_measure<T: Real>(u: &GridFunction<T>, c0: T) -> Result<T> {
    let spec = u.spec();
    let floor = -T::lit(NEGATIVITY_TOLERANCE);
    if let Some(k) = spec.nodes().find(|&k| u.node_value(k) < floor) {
        return Err(Error::Estimator(format!(
            "u is negative ({:e}) at node {:?}",
            u.node_value(k).as_f64(),
            &spec.unflat(k)[..spec.dim()]
        )));
    }
    if u.exterior().is_constant() && u.exterior().far_limit() < floor {
        return Err(Error::Estimator("exterior closure is negative".into()));
    }
    let denom = u.node_value(spec.origin()) + c0;
    if !(denom > T::zero()) {
        return Err(Error::Estimator(format!("u(0) + C0 = {denom} is not positive")));
    }
    let sup = ball(spec, T::lit(0.5))
        .into_iter()
        .map(|k| u.node_value(k))
        .fold(T::neg_infinity(), T::max);
    Ok(sup / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailFit<T> {
    pub eps: T,
    pub c: T,
    pub r2: T,
    /// `(t, |{u > t} cap B_1|)` on the nontrivial part of the ladder.
    pub points: Vec<(T, T)>,
    pub degenerate: bool,
}

/// Fits `|{u > t} cap B_1| ~ C t^-eps` on the ladder `t_j = 2^j median(u)`,
/// keeping the levels whose set is neither empty nor all of `B_1`.
pub fn tail_fit<T: Real>(u: &GridFunction<T>) -> Result<TailFit<T>> {
    let spec = u.spec();
    let nodes = open_ball(spec, T::one());
    let mut vals: Vec<T> = nodes.iter().map(|&k| u.node_value(k)).collect();
    if vals.iter().any(|&v| v < -T::lit(NEGATIVITY_TOLERANCE)) {
        return Err(Error::Estimator("tail fit needs a nonnegative function".into()));
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut anchor = vals[vals.len() / 2];
    if !(anchor > T::zero()) {
        anchor = vals.iter().copied().find(|&v| v > T::zero()).unwrap_or(T::zero());
    }
    if !(anchor > T::zero()) {
        return Err(Error::Estimator("every level set of a vanishing function is empty".into()));
    }
    let cell = spec.cell_volume();
    let total = vals.len();
    let mut points = Vec::new();
    for j in -64i32..=64 {
        let t = anchor * T::lit(2f64.powi(j));
        let count = total - vals.partition_point(|&v| v <= t);
        if count > 0 && count < total {
            points.push((t, T::from_usize(count).unwrap() * cell));
        }
    }
    if points.is_empty() {
        return Err(Error::Estimator("all level sets on the ladder are empty or full".into()));
    }
    let distinct = points.windows(2).any(|w| w[0].1 != w[1].1);
    if !distinct {
        return Ok(TailFit {
            eps: T::zero(),
            c: points[0].1,
            r2: T::one(),
            points,
            degenerate: true,
        });
    }
    let (x, y): (Vec<T>, Vec<T>) = points.iter().map(|&(t, m)| (t.ln(), m.ln())).unzip();
    let (slope, intercept, r2) = linear_fit(&x, &y);
    Ok(TailFit {
        eps: -slope,
        c: intercept.exp(),
        r2,
        points,
        degenerate: false,
    })
}

/// `w(x) = (u(x + s) - u(x)) / |s|^beta` for the lattice offset `s`.
///
/// Constant closures give a zero closure; other closures are not closed
/// under differencing and are replaced by zero as well.
pub fn incremental_quotient_field<T: Real>(u: &GridFunction<T>, step: [isize; 2], beta: T) -> Result<GridFunction<T>> {
    let spec = *u.spec();
    let n = spec.dim();
    let h = spec.h();
    let len = norm(&[T::from_isize(step[0]).unwrap() * h, T::from_isize(step[1]).unwrap() * h], n);
    if len < h * (T::one() - T::lit(1e-12)) {
        return Err(Error::Precondition("the step must be at least one node".into()));
    }
    if !(beta > T::zero() && beta <= T::one()) {
        return Err(Error::Precondition(format!("beta must lie in (0, 1], got {beta}")));
    }
    let half = spec.half() as isize;
    let denom = len.powf(beta);
    let values = spec
        .nodes()
        .map(|k| {
            let [i, j] = spec.unflat(k);
            let at = [i as isize - half, if n == 2 { j as isize - half } else { 0 }];
            let ahead = u.lattice_value([at[0] + step[0], at[1] + step[1]]);
            (ahead - u.node_value(k)) / denom
        })
        .collect();
    GridFunction::from_values(spec, values, ExteriorClosure::Zero)
}

/// Extremal hypotheses measured on a set of nodes: the smallest `C0` with
/// `M+u >= -C0` and `M-u <= C0` there.
pub fn certify_extremal<T: Real>(
    u: &GridFunction<T>,
    class: &KernelClass<T>,
    nodes: &[usize],
    quad: &QuadratureSpec<T>,
) -> Result<T> {
    let plus = Evaluator::new(OperatorSpec::ExtremalPlus(class.clone()), *u.spec(), quad)?;
    let minus = Evaluator::with_plan(OperatorSpec::ExtremalMinus(class.clone()), plus.shared_plan())?;
    let hi = plus.apply_nodes(&plus.prepare(u)?, nodes)?;
    let lo = minus.apply_nodes(&minus.prepare(u)?, nodes)?;
    Ok(hi
        .iter()
        .map(|&v| -v)
        .chain(lo.iter().copied())
        .fold(T::zero(), T::max))
}

/// Exterior data of the regularity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExteriorCase {
    /// `sign(x_1)`.
    Sign,
    /// A smooth nonnegative bump of radius `3/4` centered at `2 e_1`.
    Bump,
}

impl ExteriorCase {
    pub fn tag(self) -> &'static str {
        match self {
            ExteriorCase::Sign => "sign",
            ExteriorCase::Bump => "bump",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "sign" => Ok(ExteriorCase::Sign),
            "bump" => Ok(ExteriorCase::Bump),
            other => Err(Error::Parse(format!("unknown exterior case '{other}'"))),
        }
    }

    pub fn data<T: Real>(self, spec: GridSpec<T>) -> Result<GridFunction<T>> {
        let n = spec.dim();
        match self {
            ExteriorCase::Sign => crate::grid::sample_function(
                spec,
                |x| {
                    if x[0] > T::zero() {
                        T::one()
                    } else if x[0] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                },
                ExteriorClosure::SignStep {
                    axis: 0,
                    amplitude: T::one(),
                },
            ),
            ExteriorCase::Bump => crate::grid::sample_function(
                spec,
                |x| {
                    let s = norm(&[x[0] - T::lit(2.0), x[1]], n) / T::lit(0.75);
                    if s.abs() < T::one() {
                        (T::one() - s * s).powi(2)
                    } else {
                        T::zero()
                    }
                },
                ExteriorClosure::Zero,
            ),
        }
    }
}

/// Residual target of the experiment solves.
pub const SOLVE_TOLERANCE: f64 = 1e-8;

/// Solves `Lu = 0` in `B_1` for the fractional Laplacian with the exterior
/// data of `case`.
pub fn fractional_solve<T: Real>(
    case: ExteriorCase,
    dim: usize,
    sigma: T,
    h: T,
    quad: &QuadratureSpec<T>,
) -> Result<SolveReport<T>> {
    let spec = GridSpec::new(dim, T::lit(4.0) * T::from_usize(dim).unwrap().sqrt(), h)?;
    let g = case.data(spec)?;
    let op = OperatorSpec::Linear(Kernel::fractional_laplacian(dim, sigma)?);
    let mask = Domain::Ball(T::one()).mask(&spec);
    let prob = DirichletProblem::new(op, GridFunction::zeros(spec), g, mask, quad)?;
    let rep = solve_policy(&prob, T::lit(SOLVE_TOLERANCE), 20)?;
    if !rep.converged {
        return Err(Error::Numerical(format!(
            "{} solve at sigma = {sigma} stalled at residual {:e}",
            case.tag(),
            rep.residual_history.last().unwrap().as_f64()
        )));
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityRow<T> {
    pub sigma: T,
    pub holder_alpha: T,
    pub holder_seminorm: T,
    pub holder_r2: T,
    pub harnack_c: T,
    pub tail_eps: T,
    pub tail_c: T,
    pub tail_r2: T,
    pub c1a_alpha: T,
    pub c1a_r2: T,
    /// Measured `C0` of the certified hypotheses, worst over both solves.
    pub c0: T,
}

impl<T: Real> RegularityRow<T> {
    pub const HEADER: &'static str =
        "sigma,holder_alpha,holder_seminorm,holder_r2,harnack_C,tail_eps,tail_C,tail_r2,c1a_alpha,c1a_r2,C0";

    pub fn csv_line(&self) -> String {
        [
            self.sigma,
            self.holder_alpha,
            self.holder_seminorm,
            self.holder_r2,
            self.harnack_c,
            self.tail_eps,
            self.tail_c,
            self.tail_r2,
            self.c1a_alpha,
            self.c1a_r2,
            self.c0,
        ]
        .iter()
        .map(|v| format!("{:.10e}", v.as_f64()))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Certification level above which the estimators refuse a solution.
pub const CERTIFICATION_LIMIT: f64 = 1e-6;

/// The sign and bump solves and the four estimators at one order.
pub fn regularity_row<T: Real>(sigma: T, dim: usize, h: T, quad: &QuadratureSpec<T>) -> Result<RegularityRow<T>> {
    let class = KernelClass::l0(dim, sigma, Ellipticity::unit())?;
    let mut c0 = T::zero();
    let mut certified = |u: &GridFunction<T>| -> Result<()> {
        let nodes = Domain::Ball(T::one()).mask(u.spec());
        let inside: Vec<usize> = u.spec().nodes().filter(|&k| nodes[k]).collect();
        let level = certify_extremal(u, &class, &inside, quad)?;
        if level > T::lit(CERTIFICATION_LIMIT) {
            return Err(Error::Estimator(format!(
                "extremal hypotheses hold only with C0 = {:e} at sigma = {sigma}",
                level.as_f64()
            )));
        }
        c0 = c0.max(level);
        Ok(())
    };

    let sign = fractional_solve(ExteriorCase::Sign, dim, sigma, h, quad)?.solution;
    certified(&sign)?;
    let holder = holder_fit(&sign, T::lit(0.5))?;
    let beta = holder.alpha.max(T::lit(0.05));
    let quotient = incremental_quotient_field(&sign, [1, 0], beta)?;
    let c1a = holder_fit(&quotient, T::lit(0.5))?;

    let bump = fractional_solve(ExteriorCase::Bump, dim, sigma, h, quad)?.solution;
    certified(&bump)?;
    let harnack = harnack_measure(&bump, c0)?;
    let at0 = bump.node_value(bump.spec().origin());
    let tail = tail_fit(&bump.map_values(|_, v| v / at0)?)?;

    Ok(RegularityRow {
        sigma,
        holder_alpha: holder.alpha,
        holder_seminorm: holder.seminorm,
        holder_r2: holder.r2,
        harnack_c: harnack,
        tail_eps: tail.eps,
        tail_c: tail.c,
        tail_r2: tail.r2,
        c1a_alpha: c1a.alpha,
        c1a_r2: c1a.r2,
        c0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample_function, Point};

    fn grid1(h: f64) -> GridSpec<f64> {
        GridSpec::new(1, 4.0, h).unwrap()
    }

    #[test]
    fn square_root_has_half_exponent() {
        let spec = grid1(1.0 / 128.0);
        let u = sample_function(spec, |x: &Point<f64>| x[0].abs().sqrt(), ExteriorClosure::Constant(2.0)).unwrap();
        let fit = holder_fit(&u, 0.5).unwrap();
        assert!((fit.alpha - 0.5).abs() < 0.05);
        assert!(fit.r2 > 0.99);
        assert_eq!(fit.oscillations.len(), 4);
    }

    #[test]
    fn affine_fit_is_capped_at_one() {
        let spec = grid1(1.0 / 128.0);
        let u = sample_function(spec, |x: &Point<f64>| 3.0 * x[0] + 1.0, ExteriorClosure::Zero).unwrap();
        let fit = holder_fit(&u, 0.5).unwrap();
        assert!((fit.alpha - 1.0).abs() < 1e-9);
        assert!((fit.seminorm - 3.0).abs() < 1e-9);
    }

    #[test]
    fn constant_fit_is_degenerate() {
        let spec = grid1(1.0 / 64.0);
        let u = sample_function(spec, |_| 4.0, ExteriorClosure::Constant(4.0)).unwrap();
        let fit = holder_fit(&u, 0.5).unwrap();
        assert!(fit.degenerate);
        assert_eq!((fit.alpha, fit.seminorm, fit.r2), (1.0, 0.0, 1.0));
    }

    #[test]
    fn too_few_scales_are_rejected() {
        let spec = grid1(1.0 / 8.0);
        let u = GridFunction::zeros(spec);
        assert!(matches!(holder_fit(&u, 0.5), Err(Error::Estimator(_))));
    }

    #[test]
    fn harnack_examples() {
        let spec = GridSpec::new(2, 6.0, 1.0 / 16.0).unwrap();
        let one = sample_function(spec, |_| 1.0, ExteriorClosure::Constant(1.0)).unwrap();
        assert_eq!(harnack_measure(&one, 0.0).unwrap(), 1.0);
        let tilt = sample_function(spec, |x: &Point<f64>| (1.0 + x[0]).max(0.0), ExteriorClosure::Zero).unwrap();
        assert!((harnack_measure(&tilt, 0.0).unwrap() - 1.5).abs() < 1e-12);
        let negative = tilt.map_values(|_, v| v - 0.5).unwrap();
        assert!(matches!(harnack_measure(&negative, 0.0), Err(Error::Estimator(_))));
    }

    #[test]
    fn clipped_inverse_root_has_tail_exponent_two() {
        let h = 1.0 / 2048.0;
        let spec = grid1(h);
        let u = sample_function(spec, |x: &Point<f64>| x[0].abs().max(h).powf(-0.5), ExteriorClosure::Zero).unwrap();
        let fit = tail_fit(&u).unwrap();
        assert!(!fit.degenerate);
        assert!((fit.eps - 2.0).abs() < 0.25, "eps = {}", fit.eps);
        assert!(fit.r2 > 0.99);
    }

    #[test]
    fn indicator_tail_is_degenerate() {
        let spec = grid1(1.0 / 64.0);
        let u = sample_function(spec, |x: &Point<f64>| if x[0].abs() < 0.75 { 1.0 } else { 0.0 }, ExteriorClosure::Zero).unwrap();
        let fit = tail_fit(&u).unwrap();
        assert!(fit.degenerate);
        assert!(fit.points.iter().all(|&(t, _)| t < 1.0));
    }

    #[test]
    fn quotient_examples() {
        let spec = GridSpec::new(2, 6.0, 1.0 / 8.0).unwrap();
        let u = sample_function(spec, |x: &Point<f64>| 2.0 * x[0] - x[1] + 0.5, ExteriorClosure::Zero).unwrap();
        let step = [2, 1];
        let len = (5.0f64).sqrt() / 8.0;
        let beta = 0.4;
        let w = incremental_quotient_field(&u, step, beta).unwrap();
        let expected = (2.0 * 2.0 / 8.0 - 1.0 / 8.0) / len.powf(beta);
        for k in spec.nodes_in_ball(3.0) {
            assert!((w.node_value(k) - expected).abs() < 1e-12);
        }
        let c = sample_function(spec, |_| 7.0, ExteriorClosure::Constant(7.0)).unwrap();
        let w = incremental_quotient_field(&c, [1, 0], 1.0).unwrap();
        assert!(w.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, -1.0, -3.0, -5.0];
        let (s, b, r2) = linear_fit(&x, &y);
        assert!((s + 2.0f64).abs() < 1e-14 && (b - 1.0f64).abs() < 1e-14 && (r2 - 1.0f64).abs() < 1e-14);
    }

    #[test]
    fn regularity_row_at_moderate_order() {
        let row = regularity_row(1.5, 1, 1.0 / 64.0, &QuadratureSpec::default()).unwrap();
        assert!(row.holder_alpha > 0.0 && row.holder_alpha <= 1.0);
        assert!(row.harnack_c >= 1.0);
        assert!(row.tail_eps > 0.0);
        assert!(row.c1a_alpha > 0.0);
        assert!(row.c0 <= CERTIFICATION_LIMIT);
    }
}
