//! Linear, extremal and Isaacs operators evaluated with an [`OperatorPlan`].
//!
//! Every operator value is a sum over the plan's terms of
//! `coefficient * (delta_t * weight_t)`, accumulated in eight fixed lanes so
//! the result does not depend on how a sweep is scheduled. Linear operators
//! and extremal operators use the same term order and the same grouping of
//! products, so a multiplier that picks `Lambda` exactly where `delta > 0`
//! reproduces `M+` bit for bit.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec, Point};
use crate::kernels::{Ellipticity, Kernel, KernelClass, L1Part, Multiplier, Sym2};
use crate::quadrature::{half_sphere_rule, OperatorPlan, QuadratureSpec};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub enum OperatorSpec<T> {
    Linear(Kernel<T>),
    ExtremalPlus(KernelClass<T>),
    ExtremalMinus(KernelClass<T>),
    /// `inf` over the outer index of `sup` over the inner index.
    Isaacs(Vec<Vec<Kernel<T>>>),
}

impl<T: Real> OperatorSpec<T> {
    pub fn dim(&self) -> usize {
        match self {
            OperatorSpec::Linear(k) => k.dim(),
            OperatorSpec::ExtremalPlus(c) | OperatorSpec::ExtremalMinus(c) => c.dim(),
            OperatorSpec::Isaacs(f) => f[0][0].dim(),
        }
    }

    pub fn sigma(&self) -> T {
        match self {
            OperatorSpec::Linear(k) => k.sigma(),
            OperatorSpec::ExtremalPlus(c) | OperatorSpec::ExtremalMinus(c) => c.sigma(),
            OperatorSpec::Isaacs(f) => f[0][0].sigma(),
        }
    }

    /// Largest multiplier any member can use, for step-size bounds.
    pub fn upper_bound(&self) -> T {
        let norm_of = |k: &Kernel<T>| k.normalization() * k.bounds().upper();
        match self {
            OperatorSpec::Linear(k) => norm_of(k),
            OperatorSpec::ExtremalPlus(c) | OperatorSpec::ExtremalMinus(c) => match c {
                KernelClass::Finite(ks) => ks.iter().map(norm_of).fold(T::zero(), T::max),
                KernelClass::L0 { bounds, normalization, .. }
                | KernelClass::L1 { bounds, normalization, .. }
                | KernelClass::Truncated { bounds, normalization, .. } => *normalization * bounds.upper(),
            },
            OperatorSpec::Isaacs(f) => f.iter().flatten().map(norm_of).fold(T::zero(), T::max),
        }
    }

    fn validate(&self) -> Result<()> {
        if let OperatorSpec::Isaacs(f) = self {
            if f.is_empty() || f.iter().any(|g| g.is_empty()) {
                return Err(Error::InvalidKernel("Isaacs family has an empty index set".into()));
            }
            let (d, s) = (f[0][0].dim(), f[0][0].sigma());
            if f.iter().flatten().any(|k| k.dim() != d || k.sigma() != s) {
                return Err(Error::InvalidKernel("Isaacs members must share dimension and order".into()));
            }
        }
        Ok(())
    }
}

/// `u(x + y) + u(x - y) - 2 u(x)` at the node `x`.
pub fn second_difference<T: Real>(u: &GridFunction<T>, x: usize, y: &Point<T>) -> T {
    let p = u.spec().node_point(x);
    let ux = u.node_value(x);
    let a = u.eval_at(&[p[0] + y[0], p[1] + y[1]]);
    let b = u.eval_at(&[p[0] - y[0], p[1] - y[1]]);
    (a + b) - (ux + ux)
}

fn quad_form<T: Real>(hess: &Sym2<T>, th: &Point<T>, n: usize) -> T {
    if n == 1 {
        th[0] * th[0] * hess[0][0]
    } else {
        th[0] * th[0] * hess[0][0] + T::lit(2.0) * th[0] * th[1] * hess[0][1] + th[1] * th[1] * hess[1][1]
    }
}

/// Extremal operators applied to the quadratic model `y^T H y` on `B_r0`:
/// `plus = r0^(2-sigma) sum_theta [Lambda q+ - lambda q-]` and `minus` with
/// the bounds swapped.
pub fn near_field_extremal<T: Real>(
    hess: &Sym2<T>,
    n: usize,
    r0: T,
    bounds: Ellipticity<T>,
    sigma: T,
    sphere_points: usize,
) -> (T, T) {
    let r0s = r0.powf(T::lit(2.0) - sigma);
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let mut plus = T::zero();
    let mut minus = T::zero();
    for (th, w) in half_sphere_rule::<T>(n, sphere_points) {
        let q = quad_form(hess, &th, n);
        let wq = q * (r0s * w);
        plus = plus + if q > T::zero() { hi } else { lo } * wq;
        minus = minus + if q > T::zero() { lo } else { hi } * wq;
    }
    (plus, minus)
}

/// Values of a grid function on the lattice extended past the box by its
/// exterior closure, so that mid-field sums need no bounds checks.
#[derive(Debug, Clone)]
pub struct PaddedField<T> {
    data: Vec<T>,
    width: usize,
    pad: usize,
    dim: usize,
}

impl<T: Real> PaddedField<T> {
    pub fn new(u: &GridFunction<T>, pad: usize) -> Self {
        let s = u.spec();
        let half = s.half() as isize;
        let width = s.points_per_axis() + 2 * pad;
        let p = pad as isize;
        let rows = if s.dim() == 1 { 1 } else { width };
        let mut data = Vec::with_capacity(width * rows);
        for r in 0..rows {
            let j = if s.dim() == 1 { 0 } else { r as isize - p - half };
            for c in 0..width {
                let i = c as isize - p - half;
                data.push(u.lattice_value([i, j]));
            }
        }
        Self {
            data,
            width,
            pad,
            dim: s.dim(),
        }
    }

    #[inline]
    fn center(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0] + self.pad
        } else {
            (idx[0] + self.pad) + self.width * (idx[1] + self.pad)
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Eight-lane accumulator with a fixed reduction tree.
#[derive(Debug, Clone, Copy)]
pub struct Lanes<T>([T; 8]);

impl<T: Real> Default for Lanes<T> {
    fn default() -> Self {
        Self([T::zero(); 8])
    }
}

impl<T: Real> Lanes<T> {
    /// Adds `c * (d * w)` with `c = pos` where `d > 0` and `neg` elsewhere.
    #[inline]
    pub fn add_select(&mut self, d: &[T], w: &[T], pos: T, neg: T) {
        let mut dc = d.chunks_exact(8);
        let mut wc = w.chunks_exact(8);
        for (dd, ww) in (&mut dc).zip(&mut wc) {
            for l in 0..8 {
                let c = if dd[l] > T::zero() { pos } else { neg };
                self.0[l] = self.0[l] + c * (dd[l] * ww[l]);
            }
        }
        for (l, (&x, &y)) in dc.remainder().iter().zip(wc.remainder()).enumerate() {
            let c = if x > T::zero() { pos } else { neg };
            self.0[l] = self.0[l] + c * (x * y);
        }
    }

    /// Adds `m * (d * w)` termwise.
    #[inline]
    pub fn add_scaled(&mut self, d: &[T], w: &[T], m: &[T]) {
        let mut dc = d.chunks_exact(8);
        let mut wc = w.chunks_exact(8);
        let mut mc = m.chunks_exact(8);
        for ((dd, ww), mm) in (&mut dc).zip(&mut wc).zip(&mut mc) {
            for l in 0..8 {
                self.0[l] = self.0[l] + mm[l] * (dd[l] * ww[l]);
            }
        }
        let rest = dc.remainder().iter().zip(wc.remainder()).zip(mc.remainder());
        for (l, ((&x, &y), &z)) in rest.enumerate() {
            self.0[l] = self.0[l] + z * (x * y);
        }
    }

    /// Adds `d * v` termwise.
    #[inline]
    pub fn add_plain(&mut self, d: &[T], v: &[T]) {
        let mut dc = d.chunks_exact(8);
        let mut vc = v.chunks_exact(8);
        for (dd, vv) in (&mut dc).zip(&mut vc) {
            for l in 0..8 {
                self.0[l] = self.0[l] + dd[l] * vv[l];
            }
        }
        for (l, (&x, &y)) in dc.remainder().iter().zip(vc.remainder()).enumerate() {
            self.0[l] = self.0[l] + x * y;
        }
    }

    pub fn total(&self) -> T {
        let a = &self.0;
        ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]))
    }
}

#[derive(Debug, Clone)]
struct PreparedKernel<T> {
    scale: T,
    mult: Vec<T>,
    remainder: Option<Vec<T>>,
}

impl<T: Real> PreparedKernel<T> {
    fn new(k: &Kernel<T>, plan: &OperatorPlan<T>) -> Self {
        let pts = plan.term_points();
        let principal = k.principal();
        let mult = pts.iter().map(|y| principal.multiplier_at(y)).collect();
        let remainder = k.remainder().map(|(part, _)| remainder_weights(part, k, plan));
        Self {
            scale: k.normalization(),
            mult,
            remainder,
        }
    }

    fn value(&self, d: &[T], segs: &[(usize, usize)], w: &[T]) -> T {
        let mut lanes = Lanes::default();
        for &(s, len) in segs {
            lanes.add_scaled(&d[s..s + len], &w[s..s + len], &self.mult[s..s + len]);
        }
        let mut v = self.scale * lanes.total();
        if let Some(r) = &self.remainder {
            let mut extra = Lanes::default();
            for &(s, len) in segs {
                extra.add_plain(&d[s..s + len], &r[s..s + len]);
            }
            v = v + extra.total();
        }
        v
    }

    fn effective(&self, w: &[T]) -> Vec<T> {
        let mut e: Vec<T> = self
            .mult
            .iter()
            .zip(w)
            .map(|(&m, &w)| self.scale * m * w)
            .collect();
        if let Some(r) = &self.remainder {
            for (a, &b) in e.iter_mut().zip(r) {
                *a = *a + b;
            }
        }
        e
    }
}

/// Absolute weights of the integrable remainder for every term: cell
/// integrals in the mid field, node weights in the tail, and the radial mass
/// beyond the far radius for the remainder terms.
fn remainder_weights<T: Real>(part: &L1Part<T>, k: &Kernel<T>, plan: &OperatorPlan<T>) -> Vec<T> {
    let n = k.dim();
    let sigma = k.sigma();
    let scale = k.scale();
    let f = |y: &Point<T>| part.eval(y, n, sigma, scale);
    let breaks: Vec<T> = match part {
        L1Part::Annulus { inner, outer, .. } => vec![*inner, *outer],
        L1Part::NegatedOutside { radius, .. } => vec![*radius],
        L1Part::Custom { breaks, support, .. } => {
            let mut b = breaks.clone();
            b.push(*support);
            b
        }
        _ => vec![],
    };
    let mut v = vec![T::zero(); plan.num_terms()];
    for t in plan.mid_range().chain(plan.tail_range()) {
        v[t] = plan.term_integral(t, &f, &breaks);
    }
    let far = plan.far_radius();
    let base = (T::lit(2.0) - sigma) * far.powf(-sigma) / sigma;
    let radial = match part {
        L1Part::NegatedOutside { radius, level } => -scale * *level * far.max(*radius).powf(-sigma) / sigma,
        L1Part::GaussianTaper { level } => -scale * *level * far.powf(-sigma) / sigma,
        _ => T::zero(),
    };
    let w = plan.weights();
    for t in plan.remainder_range() {
        v[t] = w[t] * (radial / base);
    }
    v
}

#[derive(Debug, Clone)]
enum Prepared<T> {
    Linear(PreparedKernel<T>),
    Pucci {
        plus: bool,
        lower: T,
        upper: T,
        scale: T,
    },
    Family {
        plus: bool,
        kernels: Vec<PreparedKernel<T>>,
    },
    TruncatedPucci {
        plus: bool,
        lower: T,
        upper: T,
        scale: T,
        kappa: T,
    },
    Isaacs(Vec<Vec<PreparedKernel<T>>>),
}

/// A grid function made ready for repeated operator evaluation.
#[derive(Debug, Clone)]
pub struct Input<'a, T> {
    u: &'a GridFunction<T>,
    field: PaddedField<T>,
}

impl<'a, T: Real> Input<'a, T> {
    pub fn function(&self) -> &GridFunction<T> {
        self.u
    }

    pub fn field(&self) -> &PaddedField<T> {
        &self.field
    }
}

/// Scratch space for one evaluation.
#[derive(Debug, Clone, Default)]
pub struct Scratch<T> {
    row: Vec<T>,
    all: Vec<T>,
    segs: Vec<(usize, usize)>,
}

/// An operator bound to a quadrature plan.
#[derive(Debug, Clone)]
pub struct Evaluator<T> {
    plan: Arc<OperatorPlan<T>>,
    spec: OperatorSpec<T>,
    prepared: Prepared<T>,
}

impl<T: Real> Evaluator<T> {
    pub fn new(spec: OperatorSpec<T>, grid: GridSpec<T>, quad: &QuadratureSpec<T>) -> Result<Self> {
        let plan = Arc::new(OperatorPlan::new(grid, spec.sigma(), quad)?);
        Self::with_plan(spec, plan)
    }

    pub fn with_plan(spec: OperatorSpec<T>, plan: Arc<OperatorPlan<T>>) -> Result<Self> {
        spec.validate()?;
        if spec.dim() != plan.grid().dim() {
            return Err(Error::Precondition(format!(
                "operator dimension {} does not match grid dimension {}",
                spec.dim(),
                plan.grid().dim()
            )));
        }
        if (spec.sigma() - plan.sigma()).abs() > T::lit(1e-14) {
            return Err(Error::Precondition("operator order does not match the plan".into()));
        }
        let prepared = match &spec {
            OperatorSpec::Linear(k) => Prepared::Linear(PreparedKernel::new(k, &plan)),
            OperatorSpec::ExtremalPlus(c) | OperatorSpec::ExtremalMinus(c) => {
                let plus = matches!(spec, OperatorSpec::ExtremalPlus(_));
                match c {
                    KernelClass::L0 { bounds, normalization, .. } | KernelClass::L1 { bounds, normalization, .. } => {
                        Prepared::Pucci {
                            plus,
                            lower: bounds.lower(),
                            upper: bounds.upper(),
                            scale: *normalization,
                        }
                    }
                    KernelClass::Truncated {
                        bounds,
                        normalization,
                        kappa,
                        ..
                    } => Prepared::TruncatedPucci {
                        plus,
                        lower: bounds.lower(),
                        upper: bounds.upper(),
                        scale: *normalization,
                        kappa: *kappa,
                    },
                    KernelClass::Finite(ks) => Prepared::Family {
                        plus,
                        kernels: ks.iter().map(|k| PreparedKernel::new(k, &plan)).collect(),
                    },
                }
            }
            OperatorSpec::Isaacs(f) => Prepared::Isaacs(
                f.iter()
                    .map(|g| g.iter().map(|k| PreparedKernel::new(k, &plan)).collect())
                    .collect(),
            ),
        };
        Ok(Self { plan, spec, prepared })
    }

    pub fn plan(&self) -> &OperatorPlan<T> {
        &self.plan
    }

    pub fn shared_plan(&self) -> Arc<OperatorPlan<T>> {
        self.plan.clone()
    }

    pub fn spec(&self) -> &OperatorSpec<T> {
        &self.spec
    }

    pub fn prepare<'a>(&self, u: &'a GridFunction<T>) -> Result<Input<'a, T>> {
        if u.spec() != self.plan.grid() {
            return Err(Error::Precondition("grid function lives on a different grid".into()));
        }
        Ok(Input {
            u,
            field: PaddedField::new(u, self.plan.grid().half() + 2),
        })
    }

    fn check_node(&self, node: usize) -> Result<()> {
        let g = self.plan.grid();
        if node >= g.num_nodes() {
            return Err(Error::Precondition(format!("node {node} is out of range")));
        }
        let margin = g.boundary_margin(node);
        let required = self.plan.near_radius();
        if margin < required * (T::one() - T::lit(1e-12)) {
            let idx = g.unflat(node);
            return Err(Error::BoundaryMargin {
                node: idx[..g.dim()].to_vec(),
                margin: margin.as_f64(),
                required: required.as_f64(),
            });
        }
        Ok(())
    }

    /// Feeds consecutive term segments `(first term, deltas)` to `sink`.
    fn visit(&self, input: &Input<'_, T>, node: usize, row: &mut Vec<T>, mut sink: impl FnMut(usize, &[T])) {
        let plan = &*self.plan;
        let u = input.u;
        let g = plan.grid();
        let n = g.dim();
        let p = input.field.data();
        let wdt = input.field.width();
        let idx = g.unflat(node);
        let c = input.field.center(idx);
        let ux = u.node_value(node);
        let two_u = ux + ux;
        let h = g.h();
        let h2 = h * h;

        // near field: quadratic model from the central-difference Hessian
        let hess: Sym2<T> = if n == 1 {
            [[((p[c + 1] + p[c - 1]) - two_u) / h2, T::zero()], [T::zero(), T::zero()]]
        } else {
            let hxx = ((p[c + 1] + p[c - 1]) - two_u) / h2;
            let hyy = ((p[c + wdt] + p[c - wdt]) - two_u) / h2;
            let hxy = ((p[c + 1 + wdt] + p[c - 1 - wdt]) - (p[c + 1 - wdt] + p[c - 1 + wdt])) / (T::lit(4.0) * h2);
            [[hxx, hxy], [hxy, hyy]]
        };
        row.clear();
        row.extend(plan.near_directions().iter().map(|th| quad_form(&hess, th, n)));
        sink(plan.near_range().start, row);

        for r in plan.rows() {
            let len = r.len;
            let shift = r.dj * wdt as isize;
            let a0 = (c as isize + shift + r.di_lo) as usize;
            let b0 = (c as isize - shift - r.di_lo - len as isize + 1) as usize;
            let a = &p[a0..a0 + len];
            let b = &p[b0..b0 + len];
            row.clear();
            row.extend(a.iter().zip(b.iter().rev()).map(|(&x, &y)| (x + y) - two_u));
            sink(r.start, row);
        }

        let x = g.node_point(node);
        let tail = plan.tail_points();
        let cutoff = if u.exterior().is_constant() {
            plan.tail_first_decade()
        } else {
            tail.len()
        };
        let far = u.exterior().far_limit();
        let far2 = (far + far) - two_u;
        row.clear();
        for (k, y) in tail.iter().enumerate() {
            let d = if k < cutoff {
                let a = u.eval_at(&[x[0] + y[0], x[1] + y[1]]);
                let b = u.eval_at(&[x[0] - y[0], x[1] - y[1]]);
                (a + b) - two_u
            } else {
                far2
            };
            row.push(d);
        }
        sink(plan.tail_range().start, row);

        row.clear();
        row.extend(plan.remainder_directions().iter().map(|_| far2));
        sink(plan.remainder_range().start, row);
    }

    /// All term deltas at `node`, with the segment layout.
    fn collect(&self, input: &Input<'_, T>, node: usize, scratch: &mut Scratch<T>) {
        let Scratch { row, all, segs } = scratch;
        all.clear();
        all.resize(self.plan.num_terms(), T::zero());
        segs.clear();
        self.visit(input, node, row, |s, d| {
            all[s..s + d.len()].copy_from_slice(d);
            segs.push((s, d.len()));
        });
    }

    /// Deltas of every quadrature term at `node` (near-field entries are
    /// `theta^T H theta`).
    pub fn deltas(&self, input: &Input<'_, T>, node: usize) -> Result<Vec<T>> {
        self.check_node(node)?;
        let mut s = Scratch::default();
        self.collect(input, node, &mut s);
        Ok(s.all)
    }

    pub fn apply(&self, u: &GridFunction<T>, node: usize) -> Result<T> {
        let input = self.prepare(u)?;
        self.apply_at(&input, node, &mut Scratch::default())
    }

    pub fn apply_at(&self, input: &Input<'_, T>, node: usize, scratch: &mut Scratch<T>) -> Result<T> {
        self.check_node(node)?;
        let w = self.plan.weights();
        let v = match &self.prepared {
            Prepared::Pucci {
                plus,
                lower,
                upper,
                scale,
            } => {
                let (pos, neg) = if *plus { (*upper, *lower) } else { (*lower, *upper) };
                let mut lanes = Lanes::default();
                self.visit(input, node, &mut scratch.row, |s, d| {
                    lanes.add_select(d, &w[s..s + d.len()], pos, neg)
                });
                *scale * lanes.total()
            }
            Prepared::Linear(k) if k.remainder.is_none() => {
                let mut lanes = Lanes::default();
                self.visit(input, node, &mut scratch.row, |s, d| {
                    let e = s + d.len();
                    lanes.add_scaled(d, &w[s..e], &k.mult[s..e])
                });
                k.scale * lanes.total()
            }
            _ => {
                self.collect(input, node, scratch);
                self.reduce(&scratch.all, &scratch.segs).0
            }
        };
        if !v.is_finite() {
            let g = self.plan.grid();
            let idx = g.unflat(node);
            return Err(Error::NonFinite {
                node: idx[..g.dim()].to_vec(),
                point: g.node_point(node)[..g.dim()].iter().map(|x| x.as_f64()).collect(),
                value: v.as_f64(),
            });
        }
        Ok(v)
    }

    /// Value and, for the policy-based variants, the selected kernel.
    fn reduce(&self, d: &[T], segs: &[(usize, usize)]) -> (T, Selection<T>) {
        let w = self.plan.weights();
        match &self.prepared {
            Prepared::Linear(k) => (k.value(d, segs, w), Selection::None),
            Prepared::Pucci {
                plus,
                lower,
                upper,
                scale,
            } => {
                let (pos, neg) = if *plus { (*upper, *lower) } else { (*lower, *upper) };
                let mut lanes = Lanes::default();
                for &(s, len) in segs {
                    lanes.add_select(&d[s..s + len], &w[s..s + len], pos, neg);
                }
                (*scale * lanes.total(), Selection::None)
            }
            Prepared::Family { plus, kernels } => {
                let mut best = (kernels[0].value(d, segs, w), 0);
                for (i, k) in kernels.iter().enumerate().skip(1) {
                    let v = k.value(d, segs, w);
                    if (*plus && v > best.0) || (!*plus && v < best.0) {
                        best = (v, i);
                    }
                }
                (best.0, Selection::Member(best.1))
            }
            Prepared::TruncatedPucci {
                plus,
                lower,
                upper,
                scale,
                kappa,
            } => {
                let (pos, neg) = if *plus { (*upper, *lower) } else { (*lower, *upper) };
                let mut lanes = Lanes::default();
                for &(s, len) in segs {
                    lanes.add_select(&d[s..s + len], &w[s..s + len], pos, neg);
                }
                let base = *scale * lanes.total();
                let alloc = self.budget_allocation(d, *plus, *scale * *lower, *kappa);
                let shift = alloc.iter().fold(T::zero(), |acc, &(t, m)| acc + m * d[t]);
                (base + shift, Selection::Budget(alloc))
            }
            Prepared::Isaacs(outer) => {
                let mut best: Option<(T, usize, usize)> = None;
                for (i, inner) in outer.iter().enumerate() {
                    let mut top = (inner[0].value(d, segs, w), 0);
                    for (j, k) in inner.iter().enumerate().skip(1) {
                        let v = k.value(d, segs, w);
                        if v > top.0 {
                            top = (v, j);
                        }
                    }
                    if best.is_none_or(|b| top.0 < b.0) {
                        best = Some((top.0, i, top.1));
                    }
                }
                let (v, i, j) = best.unwrap();
                (v, Selection::Pair(i, j))
            }
        }
    }

    /// Optimal use of an `L1` budget `kappa` on top of the extremal kernel:
    /// for `M-`, remove mass (up to `cap_scale * w_t`) where `delta` is large
    /// and positive, or add it where `delta` is most negative; `M+` mirrors
    /// this. Returns signed masses `(term, mass)`; near-field terms are not
    /// second differences and are left alone.
    fn budget_allocation(&self, d: &[T], plus: bool, cap_scale: T, kappa: T) -> Vec<(usize, T)> {
        let plan = &*self.plan;
        let w = plan.weights();
        let first = plan.mid_range().start;
        let sgn = if plus { T::one() } else { -T::one() };
        // gain rate of adding mass at term t is sgn * d[t]
        let (mut best_t, mut best_rate) = (first, T::zero());
        for (t, &x) in d.iter().enumerate().skip(first) {
            if sgn * x > best_rate {
                best_rate = sgn * x;
                best_t = t;
            }
        }
        // removing mass at t gains -sgn * d[t], limited by the existing mass
        let mut removals: Vec<(usize, T)> = d
            .iter()
            .enumerate()
            .skip(first)
            .filter(|&(_, &x)| -sgn * x > best_rate)
            .map(|(t, &x)| (t, -sgn * x))
            .collect();
        removals.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut left = kappa;
        let mut out = Vec::new();
        for (t, _) in removals {
            if left <= T::zero() {
                break;
            }
            let take = (cap_scale * w[t]).min(left);
            out.push((t, -take));
            left = left - take;
        }
        if left > T::zero() && best_rate > T::zero() {
            out.push((best_t, left));
        }
        out
    }

    /// The kernel of the class that attains the extremal value at `node`:
    /// multiplier `Lambda` where the term's delta favors it and `lambda`
    /// elsewhere, as a function of the term points.
    pub fn optimal_kernel(&self, input: &Input<'_, T>, node: usize) -> Result<Kernel<T>> {
        let Prepared::Pucci {
            plus,
            lower,
            upper,
            scale,
        } = &self.prepared
        else {
            return Err(Error::Precondition("optimal kernel needs an L0 or L1 extremal operator".into()));
        };
        let d = self.deltas(input, node)?;
        let (pos, neg) = if *plus { (*upper, *lower) } else { (*lower, *upper) };
        let mut table = HashMap::new();
        for (y, &x) in self.plan.term_points().iter().zip(&d) {
            let m = if x > T::zero() { pos } else { neg };
            if let Some(old) = table.insert(point_key(y), m) {
                if old != m {
                    return Err(Error::Precondition("two terms share a sample point".into()));
                }
            }
        }
        let fallback = *lower;
        let n = self.plan.grid().dim();
        let m = Multiplier::custom("optimal", move |y: &Point<T>| *table.get(&point_key(y)).unwrap_or(&fallback));
        Ok(Kernel::fractional(n, self.plan.sigma(), Ellipticity::new(*lower, *upper)?, m)?.with_normalization(*scale))
    }

    /// Bound on `-d(value)/du(x)` over every kernel the operator can select,
    /// measured at the origin node.
    pub fn diagonal_bound(&self) -> Result<T> {
        let g = *self.plan.grid();
        let origin = g.origin();
        let mut vals = vec![T::zero(); g.num_nodes()];
        vals[origin] = T::one();
        let e = GridFunction::from_values(g, vals, crate::grid::ExteriorClosure::Zero)?;
        let d = self.deltas(&self.prepare(&e)?, origin)?;
        let w = self.plan.weights();
        let against = |coef: &[T]| coef.iter().zip(&d).map(|(&c, &x)| (c * x).abs()).sum::<T>();
        let uniform = |s: T| d.iter().zip(w).map(|(&x, &w)| (s * w * x).abs()).sum::<T>();
        Ok(match &self.prepared {
            Prepared::Linear(k) => against(&k.effective(w)),
            Prepared::Pucci { lower, upper, scale, .. } => uniform(*scale * upper.abs().max(lower.abs())),
            Prepared::Family { kernels, .. } => {
                kernels.iter().map(|k| against(&k.effective(w))).fold(T::zero(), T::max)
            }
            Prepared::TruncatedPucci {
                lower,
                upper,
                scale,
                kappa,
                ..
            } => {
                let peak = d.iter().fold(T::zero(), |m, x| m.max(x.abs()));
                uniform(*scale * upper.abs().max(lower.abs())) + T::lit(2.0) * *kappa * peak
            }
            Prepared::Isaacs(outer) => outer
                .iter()
                .flatten()
                .map(|k| against(&k.effective(w)))
                .fold(T::zero(), T::max),
        })
    }

    /// Values at `nodes`, computed in parallel.
    pub fn apply_nodes(&self, input: &Input<'_, T>, nodes: &[usize]) -> Result<Vec<T>> {
        nodes
            .par_iter()
            .map_init(Scratch::default, |s, &i| self.apply_at(input, i, s))
            .collect()
    }

    /// Coefficients `e_t` with `value = sum_t e_t delta_t` for the kernel the
    /// operator selects at `node` (the linearization used by policy iteration).
    pub fn linearize(&self, input: &Input<'_, T>, node: usize, scratch: &mut Scratch<T>) -> Result<Vec<T>> {
        self.check_node(node)?;
        self.collect(input, node, scratch);
        let w = self.plan.weights();
        let d = &scratch.all;
        let (_, sel) = self.reduce(d, &scratch.segs);
        Ok(match (&self.prepared, sel) {
            (Prepared::Linear(k), _) => k.effective(w),
            (
                Prepared::Pucci {
                    plus,
                    lower,
                    upper,
                    scale,
                },
                _,
            ) => {
                let (pos, neg) = if *plus { (*upper, *lower) } else { (*lower, *upper) };
                d.iter()
                    .zip(w)
                    .map(|(&x, &w)| *scale * if x > T::zero() { pos } else { neg } * w)
                    .collect()
            }
            (Prepared::Family { kernels, .. }, Selection::Member(i)) => kernels[i].effective(w),
            (
                Prepared::TruncatedPucci {
                    plus,
                    lower,
                    upper,
                    scale,
                    ..
                },
                Selection::Budget(alloc),
            ) => {
                let (pos, neg) = if *plus { (*upper, *lower) } else { (*lower, *upper) };
                let mut e: Vec<T> = d
                    .iter()
                    .zip(w)
                    .map(|(&x, &w)| *scale * if x > T::zero() { pos } else { neg } * w)
                    .collect();
                for (t, m) in alloc {
                    e[t] = e[t] + m;
                }
                e
            }
            (Prepared::Isaacs(outer), Selection::Pair(i, j)) => outer[i][j].effective(w),
            _ => unreachable!("selection matches the operator variant"),
        })
    }
}

#[derive(Debug, Clone)]
enum Selection<T> {
    None,
    Member(usize),
    Pair(usize, usize),
    Budget(Vec<(usize, T)>),
}

/// `(M-(u - v), Iu - Iv, M+(u - v))` at `node`, with the extremal operators
/// taken over the kernels of the Isaacs family.
pub fn isaacs_sandwich_check<T: Real>(
    family: &[Vec<Kernel<T>>],
    u: &GridFunction<T>,
    v: &GridFunction<T>,
    node: usize,
    quad: &QuadratureSpec<T>,
) -> Result<(T, T, T)> {
    let isaacs = Evaluator::new(OperatorSpec::Isaacs(family.to_vec()), u.spec().clone(), quad)?;
    let plan = isaacs.shared_plan();
    let class = KernelClass::finite(family.iter().flatten().cloned().collect())?;
    let plus = Evaluator::with_plan(OperatorSpec::ExtremalPlus(class.clone()), plan.clone())?;
    let minus = Evaluator::with_plan(OperatorSpec::ExtremalMinus(class), plan)?;
    let w = u.sub(v)?;
    let mid = isaacs.apply(u, node)? - isaacs.apply(v, node)?;
    Ok((minus.apply(&w, node)?, mid, plus.apply(&w, node)?))
}

/// Key identifying `y` and `-y` together.
fn point_key<T: Real>(y: &Point<T>) -> (u64, u64) {
    let (a, b) = (y[0].as_f64(), y[1].as_f64());
    let (a, b) = if a < 0.0 || (a == 0.0 && b < 0.0) { (-a, -b) } else { (a, b) };
    ((a + 0.0).to_bits(), (b + 0.0).to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample_function, ExteriorClosure};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(spec: &GridSpec<f64>) -> GridFunction<f64> {
        sample_function(spec.clone(), |x: &Point<f64>| (-(x[0] * x[0] + x[1] * x[1])).exp(), ExteriorClosure::Zero).unwrap()
    }

    fn random_function(spec: &GridSpec<f64>, rng: &mut ChaCha8Rng) -> GridFunction<f64> {
        let values = (0..spec.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridFunction::from_values(spec.clone(), values, ExteriorClosure::Zero).unwrap()
    }

    fn linear(dim: usize, sigma: f64) -> OperatorSpec<f64> {
        OperatorSpec::Linear(Kernel::fractional_laplacian(dim, sigma).unwrap())
    }

    /// 1D brute force over both half-lines: substitute y = t^4 on [0, 8] and integrate with
    /// composite Simpson; beyond 8 the Gaussian terms are below 1e-27.
    fn brute_1d(x: f64, sigma: f64) -> f64 {
        let u = |z: f64| (-z * z).exp();
        let top = 8f64.powf(0.25);
        let m = 40_000;
        let dt = top / m as f64;
        let f = |t: f64| {
            if t == 0.0 {
                return 0.0;
            }
            let y = t.powi(4);
            // cancellation-free second difference of the Gaussian
            let d = 2.0 * u(x) * (2.0 * (-y * y).exp() * (x * y).sinh().powi(2) + (-y * y).exp_m1());
            d * y.powf(-1.0 - sigma) * 4.0 * t.powi(3)
        };
        let mut s = f(0.0) + f(top);
        for k in 1..m {
            s += f(k as f64 * dt) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let body = s * dt / 3.0;
        let tail = -2.0 * u(x) * 8f64.powf(-sigma) / sigma;
        2.0 * (2.0 - sigma) * (body + tail)
    }

    #[test]
    fn gaussian_1d_matches_brute_force() {
        let spec = GridSpec::new(1, 4.0, 1.0 / 64.0).unwrap();
        let u = gaussian(&spec);
        for sigma in [0.5, 1.0, 1.5] {
            let ev = Evaluator::new(linear(1, sigma), spec.clone(), &QuadratureSpec::default()).unwrap();
            for x in [0.0, 0.5, 1.25] {
                let node = spec.node_at(&[x, 0.0]).unwrap();
                let got = ev.apply(&u, node).unwrap();
                let want = brute_1d(x, sigma);
                assert!((got - want).abs() <= 1e-3 * want.abs().max(1.0), "sigma {sigma} x {x}: {got} vs {want}");
            }
        }
        let want = -4.0 * std::f64::consts::PI.sqrt();
        assert!((brute_1d(0.0, 1.0) - want).abs() < 1e-6);
    }

    #[test]
    fn gaussian_2d_matches_closed_form() {
        let spec = GridSpec::new(2, 6.0, 1.0 / 32.0).unwrap();
        let u = gaussian(&spec);
        let ev = Evaluator::new(linear(2, 1.0), spec.clone(), &QuadratureSpec::default()).unwrap();
        let got = ev.apply(&u, spec.origin()).unwrap();
        let want = -4.0 * std::f64::consts::PI.powf(1.5);
        assert!((got - want).abs() <= 1e-3 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn extremal_operators_are_sign_symmetric_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (dim, h, r) in [(1, 1.0 / 32.0, 4.0), (2, 0.25, 6.0)] {
            let spec = GridSpec::new(dim, r, h).unwrap();
            let class = KernelClass::l0(dim, 1.3, Ellipticity::new(0.5, 2.0).unwrap()).unwrap();
            let plus = Evaluator::new(OperatorSpec::ExtremalPlus(class.clone()), spec.clone(), &QuadratureSpec::default()).unwrap();
            let minus = Evaluator::with_plan(OperatorSpec::ExtremalMinus(class), plus.shared_plan()).unwrap();
            let u = random_function(&spec, &mut rng);
            let nu = u.negated();
            let (iu, inu) = (minus.prepare(&u).unwrap(), plus.prepare(&nu).unwrap());
            let mut s = Scratch::default();
            for node in spec.nodes_in_ball(r - 1.0) {
                let a = minus.apply_at(&iu, node, &mut s).unwrap();
                let b = plus.apply_at(&inu, node, &mut s).unwrap();
                assert_eq!(a, -b);
            }
        }
    }

    #[test]
    fn optimal_kernel_reproduces_plus_and_random_kernels_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = GridSpec::new(1, 4.0, 1.0 / 32.0).unwrap();
        let bounds = Ellipticity::new(0.5, 2.0).unwrap();
        let class = KernelClass::l0(1, 0.8, bounds).unwrap();
        let plus = Evaluator::new(OperatorSpec::ExtremalPlus(class.clone()), spec.clone(), &QuadratureSpec::default()).unwrap();
        let minus = Evaluator::with_plan(OperatorSpec::ExtremalMinus(class), plus.shared_plan()).unwrap();
        let u = random_function(&spec, &mut rng);
        let (ip, im) = (plus.prepare(&u).unwrap(), minus.prepare(&u).unwrap());
        let mut s = Scratch::default();
        for node in [spec.origin(), spec.node_at(&[1.5, 0.0]).unwrap()] {
            let hi = plus.apply_at(&ip, node, &mut s).unwrap();
            let lo = minus.apply_at(&im, node, &mut s).unwrap();
            let best = plus.optimal_kernel(&ip, node).unwrap();
            let lin = Evaluator::with_plan(OperatorSpec::Linear(best), plus.shared_plan()).unwrap();
            assert_eq!(lin.apply(&u, node).unwrap(), hi);
            for seed in 0..20u64 {
                let m = Multiplier::custom("random", move |y: &Point<f64>| {
                    let k = point_key(y);
                    let mut r = ChaCha8Rng::seed_from_u64(seed ^ k.0.rotate_left(17) ^ k.1);
                    r.gen_range(0.5..2.0)
                });
                let k = Kernel::fractional(1, 0.8, bounds, m).unwrap();
                let v = Evaluator::with_plan(OperatorSpec::Linear(k), plus.shared_plan())
                    .unwrap()
                    .apply(&u, node)
                    .unwrap();
                assert!(v <= hi + 1e-10 && v >= lo - 1e-10, "{lo} <= {v} <= {hi}");
            }
        }
    }

    #[test]
    fn scaling_by_two() {
        let sigma = 1.4;
        let a = GridSpec::new(1, 4.0, 1.0 / 16.0).unwrap();
        let b = GridSpec::new(1, 8.0, 1.0 / 8.0).unwrap();
        let f = |x: &Point<f64>| (1.0 - x[0] * x[0] / 4.0).max(0.0).powi(3);
        let ua = sample_function(a.clone(), f, ExteriorClosure::Zero).unwrap();
        let ub = sample_function(b.clone(), |x: &Point<f64>| f(&[x[0] / 2.0, 0.0]), ExteriorClosure::Zero).unwrap();
        let ea = Evaluator::new(linear(1, sigma), a.clone(), &QuadratureSpec::default()).unwrap();
        let eb = Evaluator::new(linear(1, sigma), b.clone(), &QuadratureSpec::default()).unwrap();
        for x in [0.0, 0.5, 1.0, 1.75] {
            let va = ea.apply(&ua, a.node_at(&[x, 0.0]).unwrap()).unwrap();
            let vb = eb.apply(&ub, b.node_at(&[2.0 * x, 0.0]).unwrap()).unwrap();
            let want = 2f64.powf(-sigma) * va;
            assert!((vb - want).abs() <= 1e-11 * va.abs().max(1.0), "{vb} vs {want}");
        }
    }

    #[test]
    fn translation_invariance_2d() {
        let spec = GridSpec::new(2, 6.0, 0.25).unwrap();
        let bump = |c: [f64; 2]| {
            move |x: &Point<f64>| {
                let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                (1.0 - r2).max(0.0).powi(2)
            }
        };
        let u = sample_function(spec.clone(), bump([0.0, 0.0]), ExteriorClosure::Zero).unwrap();
        let v = sample_function(spec.clone(), bump([0.5, -0.75]), ExteriorClosure::Zero).unwrap();
        let class = KernelClass::l0(2, 1.1, Ellipticity::new(0.5, 1.5).unwrap()).unwrap();
        let ev = Evaluator::new(OperatorSpec::ExtremalMinus(class), spec.clone(), &QuadratureSpec::default()).unwrap();
        for p in [[0.0, 0.0], [0.25, 0.5], [-1.0, 1.0]] {
            let a = ev.apply(&u, spec.node_at(&p).unwrap()).unwrap();
            let b = ev.apply(&v, spec.node_at(&[p[0] + 0.5, p[1] - 0.75]).unwrap()).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn linearization_reproduces_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = GridSpec::new(1, 4.0, 1.0 / 16.0).unwrap();
        let u = random_function(&spec, &mut rng);
        let bounds = Ellipticity::new(0.5, 2.0).unwrap();
        let ops = [
            OperatorSpec::ExtremalPlus(KernelClass::l0(1, 1.2, bounds).unwrap()),
            OperatorSpec::ExtremalMinus(KernelClass::truncated(1, 1.2, bounds, 0.3).unwrap()),
            OperatorSpec::ExtremalPlus(KernelClass::truncated(1, 1.2, bounds, 0.3).unwrap()),
            OperatorSpec::Isaacs(vec![
                vec![Kernel::fractional_laplacian(1, 1.2).unwrap()],
                vec![
                    Kernel::fractional(1, 1.2, bounds, Multiplier::Constant(0.5)).unwrap(),
                    Kernel::fractional(1, 1.2, bounds, Multiplier::Constant(2.0)).unwrap(),
                ],
            ]),
        ];
        for op in ops {
            let ev = Evaluator::new(op, spec.clone(), &QuadratureSpec::default()).unwrap();
            let input = ev.prepare(&u).unwrap();
            let node = spec.origin();
            let mut s = Scratch::default();
            let v = ev.apply_at(&input, node, &mut s).unwrap();
            let e = ev.linearize(&input, node, &mut s).unwrap();
            let d = ev.deltas(&input, node).unwrap();
            let lin: f64 = e.iter().zip(&d).map(|(a, b)| a * b).sum();
            assert!((lin - v).abs() <= 1e-10 * v.abs().max(1.0), "{lin} vs {v}");
        }
    }

    #[test]
    fn truncated_class_loses_at_most_four_kappa_sup() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = GridSpec::new(1, 4.0, 1.0 / 16.0).unwrap();
        let bounds = Ellipticity::new(0.5, 2.0).unwrap();
        let kappa = 0.7;
        let plain = Evaluator::new(
            OperatorSpec::ExtremalMinus(KernelClass::l0(1, 0.9, bounds).unwrap()),
            spec.clone(),
            &QuadratureSpec::default(),
        )
        .unwrap();
        let trunc =
            Evaluator::with_plan(OperatorSpec::ExtremalMinus(KernelClass::truncated(1, 0.9, bounds, kappa).unwrap()), plain.shared_plan())
                .unwrap();
        for _ in 0..10 {
            let u = random_function(&spec, &mut rng);
            let node = spec.origin();
            let a = trunc.apply(&u, node).unwrap();
            let b = plain.apply(&u, node).unwrap();
            assert!(a <= b + 1e-12);
            assert!(a >= b - 4.0 * kappa * u.sup_norm() - 1e-10);
        }
    }

    #[test]
    fn boundary_nodes_are_rejected() {
        let spec = GridSpec::new(1, 4.0, 0.25).unwrap();
        let ev = Evaluator::new(linear(1, 1.0), spec.clone(), &QuadratureSpec::default()).unwrap();
        let u = gaussian(&spec);
        assert!(matches!(ev.apply(&u, 0), Err(Error::BoundaryMargin { .. })));
        assert!(ev.apply(&u, 1).is_ok());
    }

    #[test]
    fn near_field_extremal_on_definite_forms() {
        let b = Ellipticity::new(0.5, 2.0).unwrap();
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let (p, m) = near_field_extremal(&id, 2, 0.5, b, 1.0, 64);
        // theta^T I theta = 1, so both pick a single bound
        let base = 0.5f64 * 2.0 * std::f64::consts::PI;
        assert!((p - 2.0 * base).abs() < 1e-12 && (m - 0.5 * base).abs() < 1e-12);
    }

    #[test]
    fn second_difference_examples() {
        let spec = GridSpec::new(1, 4.0, 0.25).unwrap();
        let sq = sample_function(spec.clone(), |x: &Point<f64>| x[0] * x[0], ExteriorClosure::Zero).unwrap();
        let abs = sample_function(spec.clone(), |x: &Point<f64>| x[0].abs(), ExteriorClosure::Zero).unwrap();
        let node = spec.node_at(&[0.5, 0.0]).unwrap();
        assert!((second_difference(&sq, node, &[0.75, 0.0]) - 2.0 * 0.5625).abs() < 1e-14);
        assert_eq!(second_difference(&abs, spec.origin(), &[1.25, 0.0]), 2.5);
        let c = sample_function(spec.clone(), |_: &Point<f64>| 3.0, ExteriorClosure::Constant(3.0)).unwrap();
        assert_eq!(second_difference(&c, node, &[7.0, 0.0]), 0.0);
    }

    #[test]
    fn near_field_examples() {
        let b = Ellipticity::new(1.0, 2.0).unwrap();
        let (p, _) = near_field_extremal(&[[2.0, 0.0], [0.0, 0.0]], 1, 0.1, b, 1.3, 16);
        assert!((p - 8.0 * 0.1f64.powf(0.7)).abs() < 1e-14);
        let (p, m): (f64, f64) = near_field_extremal(&[[1.0, 0.0], [0.0, -1.0]], 2, 0.1, Ellipticity::unit(), 0.7, 64);
        assert!(p.abs() < 1e-14 && m.abs() < 1e-14);
        assert_eq!(near_field_extremal(&[[0.0; 2]; 2], 2, 0.1, b, 0.7, 64), (0.0, 0.0));
    }

    #[test]
    fn isaacs_sandwich_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = GridSpec::new(1, 4.0, 1.0 / 16.0).unwrap();
        let b = Ellipticity::new(0.5, 2.0).unwrap();
        let k = |a: f64| Kernel::fractional(1, 1.1, b, Multiplier::Constant(a)).unwrap();
        let family = vec![vec![k(0.5), k(1.0), k(1.7)], vec![k(0.8), k(2.0), k(1.2)]];
        let q = QuadratureSpec::default();
        for _ in 0..5 {
            let u = random_function(&spec, &mut rng);
            let v = random_function(&spec, &mut rng);
            let (lo, mid, hi) = isaacs_sandwich_check(&family, &u, &v, spec.origin(), &q).unwrap();
            assert!(lo <= mid + 1e-10 && mid <= hi + 1e-10, "{lo} {mid} {hi}");
            let (lo, mid, hi) = isaacs_sandwich_check(&family, &u, &u, spec.origin(), &q).unwrap();
            assert!(mid == 0.0 && lo <= 0.0 && hi >= 0.0);
        }
        let u = random_function(&spec, &mut rng);
        let v = random_function(&spec, &mut rng);
        let (lo, mid, hi) = isaacs_sandwich_check(&[vec![k(1.3)]], &u, &v, spec.origin(), &q).unwrap();
        assert!((lo - mid).abs() < 1e-12 && (hi - mid).abs() < 1e-12 && lo == hi);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn extremal_operators_are_monotone(seed in 0u64..1000, bump in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = GridSpec::new(1, 4.0, 0.125).unwrap();
            let u = random_function(&spec, &mut rng);
            let node = spec.origin();
            let extra: Vec<f64> = (0..spec.num_nodes()).map(|i| if i == node { 0.0 } else { bump * rng.gen::<f64>() }).collect();
            let v = GridFunction::from_values(
                spec.clone(),
                u.values().iter().zip(&extra).map(|(a, b)| a + b).collect(),
                ExteriorClosure::Zero,
            ).unwrap();
            let class = KernelClass::l0(1, 1.5, Ellipticity::new(0.3, 1.7).unwrap()).unwrap();
            for op in [OperatorSpec::ExtremalPlus(class.clone()), OperatorSpec::ExtremalMinus(class.clone())] {
                let ev = Evaluator::new(op, spec.clone(), &QuadratureSpec::default()).unwrap();
                prop_assert!(ev.apply(&u, node).unwrap() <= ev.apply(&v, node).unwrap() + 1e-12);
            }
        }
    }
}
