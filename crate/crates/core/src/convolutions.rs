//! Sup- and inf-convolutions on the grid and the discrete comparison checks
//! built on them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Point};
use crate::kernels::KernelClass;
use crate::ops::{Evaluator, OperatorSpec};
use crate::quadrature::QuadratureSpec;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionParams<T>(T);

impl<T: Real> ConvolutionParams<T> {
    pub fn new(epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon.is_finite()) {
            return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self(epsilon))
    }

    pub fn epsilon(self) -> T {
        self.0
    }
}

/// `out[p] = min_q f[q] + c (p - q)^2` by the lower envelope of parabolas.
fn lower_envelope<T: Real>(f: &[T], c: T, out: &mut [T], hull: &mut Vec<usize>, cuts: &mut Vec<T>) {
    let m = f.len();
    hull.clear();
    cuts.clear();
    let key = |q: usize| f[q] + c * T::from_usize(q * q).unwrap();
    let cross = |a: usize, b: usize| {
        (key(b) - key(a)) / (T::lit(2.0) * c * T::from_usize(b - a).unwrap())
    };
    hull.push(0);
    for q in 1..m {
        loop {
            let s = cross(*hull.last().unwrap(), q);
            if !cuts.is_empty() && s <= *cuts.last().unwrap() {
                hull.pop();
                cuts.pop();
            } else {
                hull.push(q);
                cuts.push(s);
                break;
            }
        }
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let x = T::from_usize(p).unwrap();
        while k < cuts.len() && cuts[k] < x {
            k += 1;
        }
        let q = hull[k];
        let d = T::from_usize(p.abs_diff(q)).unwrap();
        *o = f[q] + c * d * d;
    }
}

/// `u^eps(x) = sup_y u(x + y) - |y|^2 / eps` over lattice offsets `y`.
///
/// Offsets leaving the box read the exterior closure at lattice points. The
/// result keeps the closure of `u`.
pub fn sup_convolution<T: Real>(u: &GridFunction<T>, eps: T) -> Result<GridFunction<T>> {
    let eps = ConvolutionParams::new(eps)?.epsilon();
    let spec = *u.spec();
    let n = spec.dim();
    let h = spec.h();
    let half = spec.half();
    let bound = u.sup_norm();
    let r_max = (eps * T::lit(2.0) * bound).sqrt();
    let pad = (r_max / h).ceil().to_usize().unwrap_or(0);
    let side = 2 * (half + pad) + 1;
    let lo = -((half + pad) as isize);
    let c = h * h / eps;

    let rows = if n == 1 { 1 } else { side };
    let mut field: Vec<T> = (0..rows * side)
        .map(|k| {
            let (i, j) = (k % side, k / side);
            let idx = [lo + i as isize, if n == 2 { lo + j as isize } else { 0 }];
            -u.lattice_value(idx)
        })
        .collect();

    let pass = |data: &mut [T]| {
        let (mut hull, mut cuts) = (Vec::new(), Vec::new());
        let mut out = vec![T::zero(); side];
        lower_envelope(data, c, &mut out, &mut hull, &mut cuts);
        data.copy_from_slice(&out);
    };
    field.par_chunks_mut(side).for_each(pass);
    if n == 2 {
        let mut cols = vec![T::zero(); side * side];
        for j in 0..side {
            for i in 0..side {
                cols[i * side + j] = field[j * side + i];
            }
        }
        cols.par_chunks_mut(side).for_each(pass);
        for i in 0..side {
            for j in 0..side {
                field[j * side + i] = cols[i * side + j];
            }
        }
    }

    let values = spec
        .nodes()
        .map(|k| {
            let [i, j] = spec.unflat(k);
            let (pi, pj) = (i + pad, if n == 2 { j + pad } else { 0 });
            -field[pj * side + pi]
        })
        .collect();
    GridFunction::from_values(spec, values, u.exterior().clone())
}

/// `u_eps = -(-u)^eps`.
pub fn inf_convolution<T: Real>(u: &GridFunction<T>, eps: T) -> Result<GridFunction<T>> {
    Ok(sup_convolution(&u.negated(), eps)?.negated())
}

fn offsets(n: usize) -> &'static [[isize; 2]] {
    if n == 1 {
        &[[1, 0]]
    } else {
        &[[1, 0], [0, 1], [1, 1], [1, -1]]
    }
}

/// True when `v + |x|^2 / eps` has nonnegative second differences along
/// the axes and diagonals, up to `1e-9 ||v||`.
pub fn semiconvexity_check<T: Real>(v: &GridFunction<T>, eps: T) -> bool {
    worst_semiconvexity(v, eps) >= -T::lit(1e-9) * v.max_abs_value()
}

/// Smallest second difference of `v + |x|^2 / eps` over interior nodes.
pub fn worst_semiconvexity<T: Real>(v: &GridFunction<T>, eps: T) -> T {
    let spec = v.spec();
    let n = spec.dim();
    let half = spec.half() as isize;
    let h = spec.h();
    let lifted = |idx: [isize; 2]| {
        let r2 = (0..n)
            .map(|k| {
                let x = T::from_isize(idx[k]).unwrap() * h;
                x * x
            })
            .fold(T::zero(), |a, b| a + b);
        v.lattice_value(idx) + r2 / eps
    };
    spec.nodes()
        .flat_map(|k| {
            let [i, j] = spec.unflat(k);
            let at = [i as isize - half, if n == 2 { j as isize - half } else { 0 }];
            offsets(n).iter().filter_map(move |e| {
                let inside = (0..n).all(|d| (at[d] + e[d]).abs() <= half && (at[d] - e[d]).abs() <= half);
                inside.then_some((at, *e))
            })
        })
        .map(|(at, e)| {
            let plus = [at[0] + e[0], at[1] + e[1]];
            let minus = [at[0] - e[0], at[1] - e[1]];
            (lifted(plus) - lifted(at)) - (lifted(at) - lifted(minus))
        })
        .fold(T::infinity(), T::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<T> {
    /// `min_Omega M+(u - v) - (f - g)`.
    pub extremal_gap: T,
    pub extremal_node: usize,
    /// `sup_Omega (u - v) - sup_{outside Omega} (u - v)`, when `f = g`.
    pub maximum_gap: Option<T>,
    pub tol: T,
}

impl<T: Real> ComparisonReport<T> {
    pub fn passes(&self) -> bool {
        self.extremal_gap >= -self.tol && self.maximum_gap.map_or(true, |g| g <= self.tol)
    }
}

/// The class whose maximal operator dominates every difference `Iu - Iv`.
fn dominating_class<T: Real>(op: &OperatorSpec<T>) -> Result<KernelClass<T>> {
    match op {
        OperatorSpec::Linear(k) => KernelClass::finite(vec![k.clone()]),
        OperatorSpec::ExtremalPlus(c) | OperatorSpec::ExtremalMinus(c) => Ok(c.clone()),
        OperatorSpec::Isaacs(f) => KernelClass::finite(f.iter().flatten().cloned().collect()),
    }
}

/// Checks `M+(u - v) >= f - g` on `Omega` and, when `f = g`, the maximum
/// principle for `u - v`. The hypotheses `Iu >= f` and `Iv <= g` are
/// certified by evaluating the operator at every node of `Omega`.
pub fn comparison_check<T: Real>(
    u: &GridFunction<T>,
    v: &GridFunction<T>,
    op: &OperatorSpec<T>,
    f: &GridFunction<T>,
    g: &GridFunction<T>,
    mask: &[bool],
    quad: &QuadratureSpec<T>,
) -> Result<ComparisonReport<T>> {
    let spec = *u.spec();
    if [v.spec(), f.spec(), g.spec()].iter().any(|s| **s != spec) || mask.len() != spec.num_nodes() {
        return Err(Error::Precondition("inputs live on different grids".into()));
    }
    let omega: Vec<usize> = spec.nodes().filter(|&k| mask[k]).collect();
    if omega.is_empty() {
        return Err(Error::Precondition("domain mask is empty".into()));
    }
    let scale = [u, v, f, g].iter().map(|w| w.sup_norm()).fold(T::one(), T::max);
    let tol = T::lit(1e-6) * scale;

    let eval = Evaluator::new(op.clone(), spec, quad)?;
    let iu = eval.apply_nodes(&eval.prepare(u)?, &omega)?;
    let iv = eval.apply_nodes(&eval.prepare(v)?, &omega)?;
    let half_tol = tol / T::lit(2.0);
    let worst = |vals: Vec<T>| {
        vals.into_iter()
            .zip(&omega)
            .fold((T::infinity(), 0), |(m, at), (x, &k)| if x < m { (x, k) } else { (m, at) })
    };
    let (sub, at) = worst(iu.iter().zip(&omega).map(|(&a, &k)| a - f.node_value(k)).collect());
    if sub < -half_tol {
        return Err(Error::Precondition(format!(
            "Iu >= f fails by {:e} at node {:?} (x = {:?})",
            -sub.as_f64(),
            spec.unflat(at),
            point_f64(&spec.node_point(at))
        )));
    }
    let (sup, at) = worst(iv.iter().zip(&omega).map(|(&a, &k)| g.node_value(k) - a).collect());
    if sup < -half_tol {
        return Err(Error::Precondition(format!(
            "Iv <= g fails by {:e} at node {:?} (x = {:?})",
            -sup.as_f64(),
            spec.unflat(at),
            point_f64(&spec.node_point(at))
        )));
    }

    let w = u.sub(v)?;
    let plus = Evaluator::with_plan(OperatorSpec::ExtremalPlus(dominating_class(op)?), eval.shared_plan())?;
    let mw = plus.apply_nodes(&plus.prepare(&w)?, &omega)?;
    let (extremal_gap, extremal_node) = worst(
        mw.iter()
            .zip(&omega)
            .map(|(&m, &k)| m - (f.node_value(k) - g.node_value(k)))
            .collect(),
    );

    let same_rhs = omega.iter().all(|&k| f.node_value(k) == g.node_value(k));
    let maximum_gap = same_rhs.then(|| {
        let inside = omega.iter().map(|&k| w.node_value(k)).fold(T::neg_infinity(), T::max);
        let outside = spec
            .nodes()
            .filter(|&k| !mask[k])
            .map(|k| w.node_value(k))
            .fold(w.exterior().upper_bound_outside(spec.box_radius()), T::max);
        inside - outside
    });
    Ok(ComparisonReport {
        extremal_gap,
        extremal_node,
        maximum_gap,
        tol,
    })
}

fn point_f64<T: Real>(p: &Point<T>) -> [f64; 2] {
    [p[0].as_f64(), p[1].as_f64()]
}
