//! Dirichlet problems `Iu = f` in a ball or cube, `u = g` outside.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{norm, ExteriorClosure, GridFunction, GridSpec};
use crate::ops::{Evaluator, OperatorSpec, Scratch};
use crate::quadrature::QuadratureSpec;
use crate::scalar::Real;

/// Shape of the domain, centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain<T> {
    Ball(T),
    /// Cube `[-a, a]^n`.
    Cube(T),
}

impl<T: Real> Domain<T> {
    /// Open domain mask: nodes strictly inside.
    pub fn mask(&self, grid: &GridSpec<T>) -> Vec<bool> {
        let n = grid.dim();
        grid.nodes()
            .map(|k| {
                let x = grid.node_point(k);
                match *self {
                    Domain::Ball(r) => norm(&x, n) < r,
                    Domain::Cube(a) => (0..n).all(|d| x[d].abs() < a),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DirichletProblem<T> {
    eval: Evaluator<T>,
    rhs: GridFunction<T>,
    boundary: GridFunction<T>,
    mask: Vec<bool>,
    omega: Vec<usize>,
}

impl<T: Real> DirichletProblem<T> {
    /// `boundary` carries the data on the nodes outside the domain and the
    /// exterior closure; its values inside the domain are ignored.
    pub fn new(
        op: OperatorSpec<T>,
        rhs: GridFunction<T>,
        boundary: GridFunction<T>,
        mask: Vec<bool>,
        quad: &QuadratureSpec<T>,
    ) -> Result<Self> {
        let grid = *boundary.spec();
        if *rhs.spec() != grid || mask.len() != grid.num_nodes() {
            return Err(Error::Precondition("rhs, boundary data and mask must share one grid".into()));
        }
        let eval = Evaluator::new(op, grid, quad)?;
        let omega: Vec<usize> = grid.nodes().filter(|&k| mask[k]).collect();
        if omega.is_empty() {
            return Err(Error::Precondition("the domain contains no nodes".into()));
        }
        let r0 = eval.plan().near_radius();
        if let Some(&k) = omega.iter().find(|&&k| grid.boundary_margin(k) < r0) {
            return Err(Error::BoundaryMargin {
                node: grid.unflat(k)[..grid.dim()].to_vec(),
                margin: grid.boundary_margin(k).as_f64(),
                required: r0.as_f64(),
            });
        }
        Ok(Self {
            eval,
            rhs,
            boundary,
            mask,
            omega,
        })
    }

    pub fn grid(&self) -> &GridSpec<T> {
        self.boundary.spec()
    }

    pub fn evaluator(&self) -> &Evaluator<T> {
        &self.eval
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn domain_nodes(&self) -> &[usize] {
        &self.omega
    }

    pub fn rhs(&self) -> &GridFunction<T> {
        &self.rhs
    }

    pub fn boundary(&self) -> &GridFunction<T> {
        &self.boundary
    }

    /// The boundary data with zero on the domain.
    pub fn initial_guess(&self) -> GridFunction<T> {
        let vals = self
            .boundary
            .values()
            .iter()
            .zip(&self.mask)
            .map(|(&g, &inside)| if inside { T::zero() } else { g })
            .collect();
        GridFunction::from_values(*self.grid(), vals, self.boundary.exterior().clone()).unwrap()
    }

    /// Copies the domain values of `inner` onto the boundary data.
    fn assemble(&self, inner: &[T]) -> Result<GridFunction<T>> {
        let mut vals = self.boundary.values().to_vec();
        for (&k, &v) in self.omega.iter().zip(inner) {
            vals[k] = v;
        }
        GridFunction::from_values(*self.grid(), vals, self.boundary.exterior().clone())
    }

    /// `Iu - f` on the domain nodes, in domain order.
    fn residual_values(&self, u: &GridFunction<T>) -> Result<Vec<T>> {
        let input = self.eval.prepare(u)?;
        let iu = self.eval.apply_nodes(&input, &self.omega)?;
        Ok(iu.into_iter().zip(&self.omega).map(|(v, &k)| v - self.rhs.node_value(k)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub solution: GridFunction<T>,
    /// Sup norm of `Iu - f` over the domain before each update, plus the final one.
    pub residual_history: Vec<T>,
    pub iterations: usize,
    /// Explicit step; `None` for policy iteration.
    pub step_size: Option<T>,
    pub converged: bool,
}

fn sup_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// `Iu - f` on the domain, zero elsewhere.
pub fn residual<T: Real>(prob: &DirichletProblem<T>, u: &GridFunction<T>) -> Result<GridFunction<T>> {
    let r = prob.residual_values(u)?;
    let mut vals = vec![T::zero(); prob.grid().num_nodes()];
    for (&k, v) in prob.omega.iter().zip(r) {
        vals[k] = v;
    }
    GridFunction::from_values(*prob.grid(), vals, ExteriorClosure::Zero)
}

/// Step of the explicit scheme: `0.9 / W` with `W` the diagonal weight bound.
pub fn step_size<T: Real>(prob: &DirichletProblem<T>) -> Result<T> {
    let w = prob.eval.diagonal_bound()?;
    let tau = T::lit(0.9) / w;
    if !(tau > T::zero() && tau.is_finite()) {
        return Err(Error::Precondition(format!("step size {tau} is not positive")));
    }
    Ok(tau)
}

/// Damped explicit iteration `u <- u + tau (Iu - f)` on the domain, starting
/// from the boundary data extended by zero.
pub fn solve<T: Real>(prob: &DirichletProblem<T>, tol: T, max_iters: usize) -> Result<SolveReport<T>> {
    solve_from(prob, &prob.initial_guess(), tol, max_iters)
}

/// Explicit iteration from the domain values of `start`.
pub fn solve_from<T: Real>(
    prob: &DirichletProblem<T>,
    start: &GridFunction<T>,
    tol: T,
    max_iters: usize,
) -> Result<SolveReport<T>> {
    let tau = step_size(prob)?;
    let mut inner: Vec<T> = prob.omega.iter().map(|&k| start.node_value(k)).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let u = prob.assemble(&inner)?;
        let r = prob.residual_values(&u)?;
        let size = sup_abs(&r);
        if !size.is_finite() {
            return Err(Error::Diverged {
                iterations,
                residual: size.as_f64(),
            });
        }
        history.push(size);
        if iterations >= 100 && size > T::lit(10.0) * history[iterations - 100] {
            return Err(Error::Diverged {
                iterations,
                residual: size.as_f64(),
            });
        }
        if size < tol || iterations >= max_iters {
            return Ok(SolveReport {
                solution: u,
                residual_history: history,
                iterations,
                step_size: Some(tau),
                converged: size < tol,
            });
        }
        inner.par_iter_mut().zip(r.par_iter()).for_each(|(v, &d)| *v = *v + tau * d);
        iterations += 1;
    }
}

/// Sparse dependence of every term delta at one domain node on the domain
/// values: `(term, column, coefficient)`.
type Stencil<T> = Vec<(u32, u32, T)>;

fn stencils<T: Real>(prob: &DirichletProblem<T>) -> Result<Vec<Stencil<T>>> {
    let grid = *prob.grid();
    let m = prob.omega.len();
    let columns: Vec<Vec<(usize, Vec<(u32, T)>)>> = prob
        .omega
        .par_iter()
        .map(|&kj| -> Result<_> {
            let mut vals = vec![T::zero(); grid.num_nodes()];
            vals[kj] = T::one();
            let e = GridFunction::from_values(grid, vals, ExteriorClosure::Zero)?;
            let input = prob.eval.prepare(&e)?;
            let mut col = Vec::new();
            for (i, &ki) in prob.omega.iter().enumerate() {
                let d = prob.eval.deltas(&input, ki)?;
                let nz: Vec<(u32, T)> = d
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| **x != T::zero())
                    .map(|(t, &x)| (t as u32, x))
                    .collect();
                if !nz.is_empty() {
                    col.push((i, nz));
                }
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<Stencil<T>> = vec![Vec::new(); m];
    for (j, col) in columns.into_iter().enumerate() {
        for (i, nz) in col {
            rows[i].extend(nz.into_iter().map(|(t, x)| (t, j as u32, x)));
        }
    }
    Ok(rows)
}

/// Policy iteration: linearize at the current iterate, solve the linear
/// Dirichlet problem exactly, repeat until the residual drops below `tol`.
pub fn solve_policy<T: Real>(prob: &DirichletProblem<T>, tol: T, max_iters: usize) -> Result<SolveReport<T>> {
    let m = prob.omega.len();
    let rows = stencils(prob)?;
    let base_fn = prob.initial_guess();
    let base_input = prob.eval.prepare(&base_fn)?;
    let base: Vec<Vec<T>> = prob
        .omega
        .iter()
        .map(|&k| prob.eval.deltas(&base_input, k))
        .collect::<Result<_>>()?;

    let mut u = base_fn.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = prob.residual_values(&u)?;
        let size = sup_abs(&r);
        history.push(size);
        if !size.is_finite() {
            return Err(Error::Diverged {
                iterations,
                residual: size.as_f64(),
            });
        }
        if size < tol || iterations >= max_iters {
            return Ok(SolveReport {
                solution: u,
                residual_history: history,
                iterations,
                step_size: None,
                converged: size < tol,
            });
        }
        let input = prob.eval.prepare(&u)?;
        let coeffs: Vec<Vec<T>> = prob
            .omega
            .par_iter()
            .map_init(Scratch::default, |s, &k| prob.eval.linearize(&input, k, s))
            .collect::<Result<_>>()?;
        let mut a = vec![T::zero(); m * m];
        let mut b = vec![T::zero(); m];
        for i in 0..m {
            let e = &coeffs[i];
            for &(t, j, x) in &rows[i] {
                a[i * m + j as usize] = a[i * m + j as usize] + e[t as usize] * x;
            }
            let known: T = e.iter().zip(&base[i]).map(|(&c, &d)| c * d).sum();
            b[i] = prob.rhs.node_value(prob.omega[i]) - known;
        }
        let inner = T::solve_dense(a, b, m)
            .ok_or_else(|| Error::Numerical("singular linearized system in policy iteration".into()))?;
        u = prob.assemble(&inner)?;
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample_function, Point};
    use crate::kernels::{Ellipticity, Kernel, KernelClass, Multiplier};

    fn grid1(h: f64) -> GridSpec<f64> {
        GridSpec::new(1, 4.0, h).unwrap()
    }

    fn laplacian(sigma: f64) -> OperatorSpec<f64> {
        OperatorSpec::Linear(Kernel::fractional_laplacian(1, sigma).unwrap())
    }

    fn problem(op: OperatorSpec<f64>, spec: GridSpec<f64>, f: f64, g: GridFunction<f64>) -> DirichletProblem<f64> {
        let rhs = sample_function(spec, |_| f, ExteriorClosure::Zero).unwrap();
        let mask = Domain::Ball(1.0).mask(&spec);
        DirichletProblem::new(op, rhs, g, mask, &QuadratureSpec::default()).unwrap()
    }

    fn pucci(sigma: f64, plus: bool) -> OperatorSpec<f64> {
        let class = KernelClass::l0(1, sigma, Ellipticity::new(0.5, 2.0).unwrap()).unwrap();
        if plus {
            OperatorSpec::ExtremalPlus(class)
        } else {
            OperatorSpec::ExtremalMinus(class)
        }
    }

    #[test]
    fn constant_data_gives_constant_solution() {
        let spec = grid1(1.0 / 16.0);
        let g = sample_function(spec, |_| 2.5, ExteriorClosure::Constant(2.5)).unwrap();
        let prob = problem(laplacian(1.0), spec, 0.0, g.clone());
        let at_once = solve_from(&prob, &g, 1e-10, 10).unwrap();
        assert!(at_once.converged);
        assert_eq!(at_once.iterations, 0);
        let rep = solve(&prob, 1e-9, 100_000).unwrap();
        assert!(rep.converged);
        assert!(rep.solution.values().iter().all(|&v| (v - 2.5).abs() < 1e-8));
    }

    #[test]
    fn first_residual_is_the_initial_one() {
        let spec = grid1(1.0 / 16.0);
        let prob = problem(laplacian(1.2), spec, -1.0, GridFunction::zeros(spec));
        let rep = solve(&prob, 1e-9, 3).unwrap();
        let r0 = residual(&prob, &prob.initial_guess()).unwrap();
        assert_eq!(rep.residual_history[0], r0.max_abs_value());
        assert!(!rep.converged);
    }

    #[test]
    fn step_size_is_positive_and_monotone() {
        let spec = grid1(1.0 / 16.0);
        let prob = problem(laplacian(1.0), spec, -1.0, GridFunction::zeros(spec));
        let tau = step_size(&prob).unwrap();
        assert!(tau > 0.0);
        // the update u + tau (Iu - f) has a nonnegative coefficient on u(x)
        let e = {
            let mut v = vec![0.0; spec.num_nodes()];
            v[spec.origin()] = 1.0;
            GridFunction::from_values(spec, v, ExteriorClosure::Zero).unwrap()
        };
        let diag = prob.evaluator().apply(&e, spec.origin()).unwrap();
        assert!(1.0 + tau * diag >= 0.0);
        assert!(1.0 + tau * diag < 0.2);
    }

    #[test]
    fn fractional_torsion_is_positive_symmetric_and_peaked() {
        let spec = grid1(1.0 / 16.0);
        let prob = problem(laplacian(1.0), spec, -1.0, GridFunction::zeros(spec));
        let rep = solve(&prob, 1e-10, 200_000).unwrap();
        assert!(rep.converged);
        let u = &rep.solution;
        let half = spec.half();
        let o = spec.origin();
        for &k in prob.domain_nodes() {
            assert!(u.node_value(k) > 0.0);
            let mirror = 2 * half - k;
            assert!((u.node_value(k) - u.node_value(mirror)).abs() < 1e-9);
            assert!(u.node_value(k) <= u.node_value(o) + 1e-12);
        }
    }

    #[test]
    fn torsion_agrees_with_tenfold_refinement() {
        let coarse_spec = grid1(1.0 / 16.0);
        let fine_spec = grid1(1.0 / 160.0);
        let coarse = solve_policy(&problem(laplacian(1.0), coarse_spec, -1.0, GridFunction::zeros(coarse_spec)), 1e-10, 20).unwrap();
        let fine = solve_policy(&problem(laplacian(1.0), fine_spec, -1.0, GridFunction::zeros(fine_spec)), 1e-10, 20).unwrap();
        assert!(coarse.converged && fine.converged);
        for k in coarse_spec.nodes_in_ball(1.0) {
            let x = coarse_spec.node_point(k);
            let kf = fine_spec.node_at(&x).unwrap();
            let diff = (coarse.solution.node_value(k) - fine.solution.node_value(kf)).abs();
            assert!(diff < 1e-2, "x = {}: {diff}", x[0]);
        }
    }

    #[test]
    fn policy_iteration_matches_explicit() {
        let spec = grid1(1.0 / 16.0);
        for op in [laplacian(1.3), pucci(1.3, true), pucci(1.3, false)] {
            let g = sample_function(spec, |x: &Point<f64>| x[0].sin(), ExteriorClosure::SignStep { axis: 0, amplitude: 1.0 }).unwrap();
            let prob = problem(op, spec, -1.0, g);
            let a = solve(&prob, 1e-12, 500_000).unwrap();
            let b = solve_policy(&prob, 1e-12, 50).unwrap();
            assert!(a.converged && b.converged);
            let gap = a
                .solution
                .values()
                .iter()
                .zip(b.solution.values())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(gap < 1e-8, "gap {gap}");
        }
    }

    #[test]
    fn ordered_boundary_data_give_ordered_solutions() {
        let spec = grid1(1.0 / 16.0);
        let low = sample_function(spec, |x: &Point<f64>| x[0].cos() - 1.0, ExteriorClosure::Constant(-1.0)).unwrap();
        let high = low.map_values(|x, v| v + 0.1 * (x[0] * 3.0).sin().abs()).unwrap().with_exterior(ExteriorClosure::Constant(-0.5)).unwrap();
        for op in [pucci(0.8, true), laplacian(1.6)] {
            let a = solve(&problem(op.clone(), spec, 0.3, low.clone()), 1e-11, 500_000).unwrap();
            let b = solve(&problem(op, spec, 0.3, high.clone()), 1e-11, 500_000).unwrap();
            for k in spec.nodes() {
                assert!(a.solution.node_value(k) <= b.solution.node_value(k) + 1e-8);
            }
        }
    }

    #[test]
    fn maximum_principle_for_harmonic_data() {
        let spec = grid1(1.0 / 16.0);
        let g = sample_function(spec, |x: &Point<f64>| (2.0 * x[0]).sin() + 0.2, ExteriorClosure::Constant(0.7)).unwrap();
        let prob = problem(pucci(1.5, true), spec, 0.0, g.clone());
        let rep = solve(&prob, 1e-11, 500_000).unwrap();
        let outside = spec
            .nodes()
            .filter(|&k| !prob.mask()[k])
            .map(|k| g.node_value(k))
            .fold(0.7f64, f64::max);
        let inside = prob.domain_nodes().iter().map(|&k| rep.solution.node_value(k)).fold(f64::MIN, f64::max);
        assert!(inside <= outside + 1e-6);
    }

    #[test]
    fn single_node_perturbation_moves_residual_by_weights() {
        let spec = grid1(1.0 / 16.0);
        let prob = problem(laplacian(1.0), spec, 0.0, GridFunction::zeros(spec));
        let u = sample_function(spec, |x: &Point<f64>| (-x[0] * x[0]).exp(), ExteriorClosure::Zero).unwrap();
        let s = 1e-3;
        let at = spec.origin();
        let bumped = u.map_values(|x, v| if x[0] == 0.0 { v + s } else { v }).unwrap();
        let r0 = residual(&prob, &u).unwrap();
        let r1 = residual(&prob, &bumped).unwrap();
        let mut e = vec![0.0; spec.num_nodes()];
        e[at] = 1.0;
        let e = GridFunction::from_values(spec, e, ExteriorClosure::Zero).unwrap();
        for &k in prob.domain_nodes() {
            let weight = prob.evaluator().apply(&e, k).unwrap();
            let change = r1.node_value(k) - r0.node_value(k);
            assert!((change - s * weight).abs() < 1e-12);
            if k == at {
                assert!(weight < 0.0);
            } else {
                assert!(weight > 0.0);
            }
        }
    }

    #[test]
    fn isaacs_solution_is_sandwiched() {
        let spec = grid1(1.0 / 16.0);
        let bounds = Ellipticity::new(0.5, 2.0).unwrap();
        let k = |a: f64| Kernel::fractional(1, 1.4, bounds, Multiplier::Constant(a)).unwrap();
        let odd = |lo: f64, hi: f64| {
            Kernel::fractional(
                1,
                1.4,
                bounds,
                Multiplier::custom("split", move |y: &Point<f64>| if y[0].abs() < 0.5 { lo } else { hi }),
            )
            .unwrap()
        };
        let family = vec![vec![k(0.5), odd(0.6, 1.8)], vec![k(2.0), odd(1.5, 0.7)]];
        let all = KernelClass::finite(family.iter().flatten().cloned().collect()).unwrap();
        let g = sample_function(spec, |x: &Point<f64>| x[0] * 0.3, ExteriorClosure::SignStep { axis: 0, amplitude: 1.2 }).unwrap();
        let run = |op| solve(&problem(op, spec, -1.0, g.clone()), 1e-11, 500_000).unwrap();
        let mid = run(OperatorSpec::Isaacs(family.clone()));
        let hi = run(OperatorSpec::ExtremalPlus(all.clone()));
        let lo = run(OperatorSpec::ExtremalMinus(all));
        for k in spec.nodes() {
            assert!(lo.solution.node_value(k) <= mid.solution.node_value(k) + 1e-8);
            assert!(mid.solution.node_value(k) <= hi.solution.node_value(k) + 1e-8);
        }
        let policy = solve_policy(&problem(OperatorSpec::Isaacs(family), spec, -1.0, g.clone()), 1e-11, 50).unwrap();
        if policy.converged {
            let gap = policy
                .solution
                .values()
                .iter()
                .zip(mid.solution.values())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(gap < 1e-8);
        }
    }

    #[test]
    fn mask_outside_margin_is_rejected() {
        let spec = grid1(1.0 / 16.0);
        let mask = Domain::Ball(10.0).mask(&spec);
        let err = DirichletProblem::new(laplacian(1.0), GridFunction::zeros(spec), GridFunction::zeros(spec), mask, &QuadratureSpec::default())
            .unwrap_err();
        assert!(matches!(err, Error::BoundaryMargin { .. }));
    }
}
