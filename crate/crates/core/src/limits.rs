//! Behaviour of the normalized operators as the order tends to two.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{norm, ExteriorClosure, GridFunction, GridSpec, Point};
use crate::kernels::{Ellipticity, Kernel, KernelClass, Sym2};
use crate::ops::{Evaluator, OperatorSpec};
use crate::quadrature::QuadratureSpec;
use crate::scalar::Real;

/// Order at which the normalization is calibrated.
pub const CALIBRATION_GAP: f64 = 1e-3;

/// Largest relative drift of the calibration value between the gaps
/// `CALIBRATION_GAP` and `2 * CALIBRATION_GAP`.
pub const CALIBRATION_DRIFT: f64 = 1e-2;

/// Final error required by [`LimitReport::passes`] by default.
pub const LIMIT_TOLERANCE: f64 = 1e-2;

/// Radius of the ball of nodes where probes are compared with their target.
pub const PROBE_RADIUS: f64 = 0.5;

/// `1` on `[0, 1/2]`, `0` on `[1, inf)`, smooth in between.
pub fn smooth_cutoff<T: Real>(r: T) -> T {
    let half = T::lit(0.5);
    if r <= half {
        return T::one();
    }
    if r >= T::one() {
        return T::zero();
    }
    let bump = |t: T| if t > T::zero() { (-T::one() / t).exp() } else { T::zero() };
    let t = (T::one() - r) / half;
    let a = bump(t);
    a / (a + bump(T::one() - t))
}

/// Smooth test functions with a Hessian known in closed form on the probe ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe<T> {
    /// `amplitude * exp(-|x|^2)`
    Gaussian { amplitude: T },
    /// `x^T H x / 2` times [`smooth_cutoff`]`(|x|)`.
    CutQuadratic { hessian: Sym2<T> },
    Constant(T),
}

impl<T: Real> Probe<T> {
    pub fn value(&self, x: &Point<T>, n: usize) -> T {
        match *self {
            Probe::Gaussian { amplitude } => {
                let r = norm(x, n);
                amplitude * (-r * r).exp()
            }
            Probe::CutQuadratic { hessian } => {
                let q = quad_form(&hessian, x, n) / T::lit(2.0);
                q * smooth_cutoff(norm(x, n))
            }
            Probe::Constant(c) => c,
        }
    }

    /// Hessian at `x`; exact for `|x| <= 1/2`.
    pub fn hessian(&self, x: &Point<T>, n: usize) -> Sym2<T> {
        match *self {
            Probe::Gaussian { amplitude } => {
                let r = norm(x, n);
                let g = amplitude * (-r * r).exp();
                let mut h = [[T::zero(); 2]; 2];
                for i in 0..n {
                    for j in 0..n {
                        let diag = if i == j { T::lit(2.0) } else { T::zero() };
                        h[i][j] = (T::lit(4.0) * x[i] * x[j] - diag) * g;
                    }
                }
                h
            }
            Probe::CutQuadratic { hessian } => hessian,
            Probe::Constant(_) => [[T::zero(); 2]; 2],
        }
    }

    pub fn closure(&self, grid: &GridSpec<T>) -> ExteriorClosure<T> {
        match *self {
            Probe::Gaussian { amplitude } => {
                let r = grid.box_radius();
                ExteriorClosure::radial_table(|s| amplitude * (-s * s).exp(), r, T::lit(8.0) * r, 64)
            }
            Probe::CutQuadratic { .. } => ExteriorClosure::Zero,
            Probe::Constant(c) => ExteriorClosure::Constant(c),
        }
    }

    pub fn sample(&self, grid: GridSpec<T>) -> Result<GridFunction<T>> {
        let n = grid.dim();
        crate::grid::sample_function(grid, |x| self.value(x, n), self.closure(&grid))
    }
}

fn quad_form<T: Real>(m: &Sym2<T>, x: &Point<T>, n: usize) -> T {
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .fold(T::zero(), |acc, (i, j)| acc + m[i][j] * x[i] * x[j])
}

/// `sum_ij (A A^T)_ij H_ij`.
fn weighted_trace<T: Real>(a: &Sym2<T>, hess: &Sym2<T>, n: usize) -> T {
    let mut total = T::zero();
    for i in 0..n {
        for j in 0..n {
            let aat = (0..n).fold(T::zero(), |acc, k| acc + a[i][k] * a[j][k]);
            total = total + aat * hess[i][j];
        }
    }
    total
}

fn unnormalized_at_origin<T: Real>(grid: GridSpec<T>, sigma: T, quad: &QuadratureSpec<T>) -> Result<T> {
    let n = grid.dim();
    let mut hess = [[T::zero(); 2]; 2];
    hess[0][0] = T::lit(2.0);
    let u = Probe::CutQuadratic { hessian: hess }.sample(grid)?;
    let eval = Evaluator::new(OperatorSpec::Linear(Kernel::fractional_laplacian(n, sigma)?), grid, quad)?;
    eval.apply(&u, grid.origin())
}

/// Normalization making the operator applied to the cut-off `x_1^2` probe at
/// the origin equal to `2` at order `2 - CALIBRATION_GAP`.
pub fn calibrate_cn<T: Real>(n: usize, grid: GridSpec<T>, quad: &QuadratureSpec<T>) -> Result<T> {
    if grid.dim() != n {
        return Err(Error::Precondition(format!("grid has dimension {}, expected {n}", grid.dim())));
    }
    if grid.h() > T::lit(0.125) {
        return Err(Error::GridTooCoarse(format!(
            "spacing {} does not resolve the unit probe (need <= 1/8)",
            grid.h()
        )));
    }
    let gap = T::lit(CALIBRATION_GAP);
    let near = unnormalized_at_origin(grid, T::lit(2.0) - gap, quad)?;
    let far = unnormalized_at_origin(grid, T::lit(2.0) - gap - gap, quad)?;
    if !(near > T::zero() && near.is_finite()) {
        return Err(Error::Numerical(format!("calibration value {near} is not positive")));
    }
    let drift = ((near - far) / near).abs();
    if !(drift <= T::lit(CALIBRATION_DRIFT)) {
        return Err(Error::Numerical(format!(
            "calibration did not settle: relative drift {drift} between orders {} and {}",
            T::lit(2.0) - gap,
            T::lit(2.0) - gap - gap
        )));
    }
    Ok(T::lit(2.0) / near)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitReport<T> {
    pub sigmas: Vec<T>,
    pub errors: Vec<T>,
    pub normalization: T,
    pub probe_nodes: usize,
}

impl<T: Real> LimitReport<T> {
    /// Errors strictly decrease along the ladder.
    pub fn monotone(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }

    pub fn final_error(&self) -> T {
        *self.errors.last().expect("ladder is non-empty")
    }

    pub fn passes(&self, tol: T) -> bool {
        self.monotone() && self.final_error() <= tol
    }

    /// First ladder index where the error fails to decrease.
    pub fn first_increase(&self) -> Option<usize> {
        self.errors.windows(2).position(|w| w[1] >= w[0]).map(|k| k + 1)
    }
}

fn check_ladder<T: Real>(ladder: &[T]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Precondition("sigma ladder is empty".into()));
    }
    if ladder.iter().any(|&s| !(s > T::zero() && s < T::lit(2.0))) {
        return Err(Error::Precondition("sigma ladder must lie in (0, 2)".into()));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("sigma ladder must be strictly increasing".into()));
    }
    Ok(())
}

/// Sup-distance on the probe ball between the normalized operator of the
/// linear image `y -> A y` and `sum_ij (A A^T)_ij d_ij u`, for every order in
/// `ladder`.
pub fn sigma_limit_error<T: Real>(
    probe: &Probe<T>,
    a: Sym2<T>,
    ladder: &[T],
    grid: GridSpec<T>,
    quad: &QuadratureSpec<T>,
) -> Result<LimitReport<T>> {
    check_ladder(ladder)?;
    let n = grid.dim();
    let cn = calibrate_cn(n, grid, quad)?;
    let u = probe.sample(grid)?;
    let nodes = grid.nodes_in_ball(T::lit(PROBE_RADIUS));
    let targets: Vec<T> = nodes
        .iter()
        .map(|&i| weighted_trace(&a, &probe.hessian(&grid.node_point(i), n), n))
        .collect();
    let errors = ladder
        .par_iter()
        .map(|&sigma| {
            let kernel = Kernel::linear_image(n, sigma, a)?.with_normalization(cn);
            let eval = Evaluator::new(OperatorSpec::Linear(kernel), grid, quad)?;
            let input = eval.prepare(&u)?;
            let values = eval.apply_nodes(&input, &nodes)?;
            Ok(values
                .iter()
                .zip(&targets)
                .map(|(&v, &t)| (v - t).abs())
                .fold(T::zero(), T::max))
        })
        .collect::<Result<Vec<T>>>()?;
    if let Some(e) = errors.iter().find(|e| !e.is_finite()) {
        return Err(Error::Numerical(format!("limit error {e} is not finite")));
    }
    Ok(LimitReport {
        sigmas: ladder.to_vec(),
        errors,
        normalization: cn,
        probe_nodes: nodes.len(),
    })
}

/// Classical Pucci operators `(M+, M-)` of a symmetric matrix.
pub fn pucci<T: Real>(hess: &Sym2<T>, n: usize, bounds: Ellipticity<T>) -> (T, T) {
    let eigs = if n == 1 {
        vec![hess[0][0]]
    } else {
        let (lo, hi) = crate::kernels::sym_eigenvalues(hess, 2);
        vec![lo, hi]
    };
    let (lo, hi) = (bounds.lower(), bounds.upper());
    eigs.iter().fold((T::zero(), T::zero()), |(p, m), &e| {
        if e > T::zero() {
            (p + hi * e, m + lo * e)
        } else {
            (p + lo * e, m + hi * e)
        }
    })
}

/// Normalized extremal operators of the L0 class at the origin for `probe`
/// at order `sigma`.
pub fn extremal_at_origin<T: Real>(
    probe: &Probe<T>,
    bounds: Ellipticity<T>,
    sigma: T,
    cn: T,
    grid: GridSpec<T>,
    quad: &QuadratureSpec<T>,
) -> Result<(T, T)> {
    let n = grid.dim();
    let u = probe.sample(grid)?;
    let class = KernelClass::l0(n, sigma, bounds)?.with_normalization(cn);
    let plus = Evaluator::new(OperatorSpec::ExtremalPlus(class.clone()), grid, quad)?;
    let minus = Evaluator::with_plan(OperatorSpec::ExtremalMinus(class), plus.shared_plan())?;
    Ok((plus.apply(&u, grid.origin())?, minus.apply(&u, grid.origin())?))
}
