//! The radial subsolution used by the point estimates: a truncated power
//! `|x|^(-p)` with a paraboloid cap, verified numerically.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{norm, sample_function, ExteriorClosure, GridFunction, GridSpec};
use crate::kernels::{Ellipticity, KernelClass};
use crate::ops::{Evaluator, OperatorSpec, Scratch};
use crate::quadrature::{OperatorPlan, QuadratureSpec};
use crate::scalar::{sphere_measure, Real};

/// Inner radii tried by [`build_phi`], largest first.
pub const DELTA_CANDIDATES: [f64; 7] = [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125];

/// Relative tolerance on `M- Phi` in the verification band.
pub const BAND_TOLERANCE: f64 = 1e-6;

/// Target for the minimum of `Phi` over `Q3` nodes.
pub const Q3_TARGET: f64 = 2.0000001;

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierParams<T> {
    pub p: u32,
    pub delta: T,
    pub cap_a: T,
    pub cap_b: T,
    pub scale: T,
    pub sigma0: T,
    pub psi_bound: T,
}

/// Smallest integer `p >= n` with
/// `(p + 2) lambda |S| / (2n) - Lambda |S| >= 0.1 Lambda |S|`.
pub fn choose_p<T: Real>(n: usize, bounds: Ellipticity<T>) -> u32 {
    let s = sphere_measure::<T>(n).as_f64();
    let (lo, hi) = (bounds.lower().as_f64(), bounds.upper().as_f64());
    let nf = n as f64;
    let mut p = n as u32;
    while (p as f64 + 2.0) * lo * s / (2.0 * nf) - hi * s < 0.1 * hi * s * (1.0 - 1e-12) {
        p += 1;
    }
    p
}

/// Paraboloid `cap_a + cap_b |x|^2` matching `|x|^(-p)` to first order on `|x| = delta`.
pub fn cap_coefficients<T: Real>(p: u32, delta: T) -> (T, T) {
    let pf = T::from_u32(p).unwrap();
    let dp = delta.powf(-pf);
    let half_p = pf / T::lit(2.0);
    (dp * (T::one() + half_p), -half_p * delta.powf(-pf - T::lit(2.0)))
}

/// Radial profile `|x|^(-p) - (2 sqrt n)^(-p)` with the cap, before scaling,
/// and zero outside `B_{2 sqrt n}`.
fn profile<T: Real>(r: T, n: usize, p: u32, delta: T, cap: (T, T)) -> T {
    let outer = T::lit(2.0) * T::from_usize(n).unwrap().sqrt();
    if r >= outer {
        return T::zero();
    }
    let pf = T::from_u32(p).unwrap();
    let floor = outer.powf(-pf);
    let body = if r <= delta { cap.0 + cap.1 * r * r } else { r.powf(-pf) };
    (body - floor).max(T::zero())
}

/// `Phi` on `grid` for exponent `p` and inner radius `delta`, with the scale
/// making its minimum over `Q3` equal to [`Q3_TARGET`] in the continuum.
pub fn barrier_function<T: Real>(grid: &GridSpec<T>, p: u32, delta: T) -> Result<(GridFunction<T>, T)> {
    let n = grid.dim();
    let half_side = T::lit(1.5);
    let outer = T::lit(2.0) * T::from_usize(n).unwrap().sqrt();
    if grid.box_radius() < outer {
        return Err(Error::InvalidGrid("box must contain the support of the barrier".into()));
    }
    let cap = cap_coefficients(p, delta);
    let corner = half_side * T::from_usize(n).unwrap().sqrt();
    let scale = T::lit(Q3_TARGET) / profile(corner, n, p, delta, cap);
    let phi = sample_function(
        grid.clone(),
        |x| scale * profile(norm(x, n), n, p, delta, cap),
        ExteriorClosure::Zero,
    )?;
    Ok((phi, scale))
}

/// Outcome of checking `M- Phi >= 0` outside `B_{1/4}` at one order.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification<T> {
    pub sigma: T,
    /// Minimum of `M- Phi` over the band nodes evaluated (all of them when `passed`).
    pub min_value: T,
    pub argmin: usize,
    /// Max of `(M- Phi)^-` over nodes in `B_{1/4}`.
    pub psi_bound: T,
    pub passed: bool,
}

/// Evaluates `M-` of a radial function over the band `1/4 + 2h <= |x| <= 2 sqrt n + 1`
/// and the inner ball, using only nodes in the fundamental sector of the
/// grid's symmetry group. Sweeps stop early once the band fails.
#[derive(Debug)]
pub struct BarrierVerifier<T> {
    grid: GridSpec<T>,
    bounds: Ellipticity<T>,
    quad: QuadratureSpec<T>,
    plans: std::sync::Mutex<Vec<Arc<OperatorPlan<T>>>>,
}

impl<T: Real> BarrierVerifier<T> {
    pub fn new(grid: GridSpec<T>, bounds: Ellipticity<T>, quad: QuadratureSpec<T>) -> Self {
        Self {
            grid,
            bounds,
            quad,
            plans: Default::default(),
        }
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    fn plan(&self, sigma: T) -> Result<Arc<OperatorPlan<T>>> {
        let mut plans = self.plans.lock().unwrap();
        if let Some(p) = plans.iter().find(|p| p.sigma() == sigma) {
            return Ok(p.clone());
        }
        let p = Arc::new(OperatorPlan::new(self.grid.clone(), sigma, &self.quad)?);
        plans.push(p.clone());
        Ok(p)
    }

    /// Sector nodes sorted by radius: `(band, inner)`.
    fn nodes(&self) -> (Vec<usize>, Vec<usize>) {
        let g = &self.grid;
        let n = g.dim();
        let h = g.h();
        let quarter = T::lit(0.25);
        let lo = quarter + T::lit(2.0) * h;
        let hi = T::lit(2.0) * T::from_usize(n).unwrap().sqrt() + T::one();
        let mut band = Vec::new();
        let mut inner = Vec::new();
        for i in g.nodes() {
            let x = g.node_point(i);
            let in_sector = if n == 1 { x[0] >= T::zero() } else { x[1] >= T::zero() && x[1] <= x[0] };
            if !in_sector {
                continue;
            }
            let r = norm(&x, n);
            if r >= lo && r <= hi {
                band.push((r, i));
            } else if r <= quarter {
                inner.push((r, i));
            }
        }
        let key = |v: &mut Vec<(T, usize)>| {
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            v.iter().map(|&(_, i)| i).collect::<Vec<_>>()
        };
        (key(&mut band), key(&mut inner))
    }

    pub fn verify(&self, phi: &GridFunction<T>, sigma: T) -> Result<Verification<T>> {
        let h = self.grid.h();
        if phi.spec() != &self.grid {
            return Err(Error::Precondition("barrier lives on a different grid".into()));
        }
        let class = KernelClass::l0(self.grid.dim(), sigma, self.bounds)?;
        let ev = Evaluator::with_plan(OperatorSpec::ExtremalMinus(class), self.plan(sigma)?)?;
        let margin_needed = T::lit(2.0) * T::from_usize(self.grid.dim()).unwrap().sqrt() + T::one() + ev.plan().near_radius();
        if self.grid.box_radius() < margin_needed + h {
            return Err(Error::InvalidGrid("box too small for the verification band".into()));
        }
        let input = ev.prepare(phi)?;
        let threshold = -T::lit(BAND_TOLERANCE) * phi.sup_norm();
        let (band, inner) = self.nodes();

        let mut min_value = T::infinity();
        let mut argmin = band.first().copied().unwrap_or(0);
        let mut passed = true;
        for chunk in band.chunks(512) {
            let vals: Vec<T> = chunk
                .par_iter()
                .map_init(Scratch::default, |s, &i| ev.apply_at(&input, i, s))
                .collect::<Result<_>>()?;
            for (&i, &v) in chunk.iter().zip(&vals) {
                if v < min_value {
                    min_value = v;
                    argmin = i;
                }
            }
            if min_value < threshold {
                passed = false;
                break;
            }
        }
        let psi = ev.apply_nodes(&input, &inner)?;
        let psi_bound = psi.into_iter().fold(T::zero(), |a, v| a.max(-v));
        Ok(Verification {
            sigma,
            min_value,
            argmin,
            psi_bound,
            passed,
        })
    }
}

/// Orders checked while searching for the inner radius.
pub fn search_orders<T: Real>(sigma0: T) -> Vec<T> {
    vec![sigma0, (sigma0 + T::lit(2.0)) / T::lit(2.0), T::lit(1.9), T::lit(1.99)]
}

#[derive(Debug, Clone)]
pub struct BarrierBuild<T> {
    pub params: BarrierParams<T>,
    pub phi: GridFunction<T>,
    pub checks: Vec<Verification<T>>,
}

/// Searches the inner radius over [`DELTA_CANDIDATES`] (those resolved by
/// the grid, `h <= delta / 8`) and returns the largest one whose barrier
/// passes at every order of [`search_orders`].
pub fn build_phi<T: Real>(verifier: &BarrierVerifier<T>, sigma0: T) -> Result<BarrierBuild<T>> {
    let grid = verifier.grid();
    let n = grid.dim();
    let h = grid.h();
    if !(sigma0 > T::zero() && sigma0 < T::lit(2.0)) {
        return Err(Error::InvalidKernel(format!("sigma0 must lie in (0, 2), got {sigma0}")));
    }
    let p = choose_p(n, verifier.bounds);
    let candidates: Vec<T> = DELTA_CANDIDATES
        .iter()
        .map(|&d| T::lit(d))
        .filter(|&d| h <= d / T::lit(8.0) * (T::one() + T::lit(1e-12)))
        .collect();
    if candidates.is_empty() {
        return Err(Error::GridTooCoarse(format!("h = {h} cannot resolve any inner radius (need h <= delta/8)")));
    }
    let mut worst: Option<(T, T, T)> = None;
    for &delta in &candidates {
        let (phi, scale) = barrier_function(grid, p, delta)?;
        let mut checks = Vec::new();
        let mut ok = true;
        for sigma in search_orders(sigma0) {
            let v = verifier.verify(&phi, sigma)?;
            ok = v.passed;
            if !ok && worst.is_none_or(|w| v.min_value / phi.sup_norm() > w.0) {
                worst = Some((v.min_value / phi.sup_norm(), delta, sigma));
            }
            checks.push(v);
            if !ok {
                break;
            }
        }
        if ok {
            let (cap_a, cap_b) = cap_coefficients(p, delta);
            let psi_bound = checks.iter().fold(T::zero(), |a, c| a.max(c.psi_bound));
            return Ok(BarrierBuild {
                params: BarrierParams {
                    p,
                    delta,
                    cap_a,
                    cap_b,
                    scale,
                    sigma0,
                    psi_bound,
                },
                phi,
                checks,
            });
        }
    }
    let (w, d, s) = worst.unwrap();
    Err(Error::BarrierSearchFailed {
        worst: w.as_f64(),
        delta: d.as_f64(),
        sigma: s.as_f64(),
    })
}

/// Grid for the barrier: the smallest box of radius at least `4 sqrt n`.
pub fn barrier_grid<T: Real>(n: usize, h: T) -> Result<GridSpec<T>> {
    let r = T::lit(4.0) * T::from_usize(n).unwrap().sqrt();
    GridSpec::new(n, (r / h).ceil() * h, h)
}
