use std::path::PathBuf;

use npde_core::barriers::{barrier_grid, build_phi, search_orders, BarrierVerifier};
use npde_core::envelope::{abp_bound, concave_envelope, cube_decompose, AbpConstants};
use npde_core::limits::sigma_limit_error;
use npde_core::regularity::{regularity_row, RegularityRow};
use npde_core::solver::{solve_from, solve_policy, DirichletProblem, Domain, SolveReport};
use npde_core::{sample_function, Closure, Ellipticity, Error, Evaluator, Function, Grid, KernelClass, OperatorSpec, Quadrature};

use crate::args::{AbpArgs, BarrierArgs, Cli, Command, EvalArgs, GridArgs, KernelArgs, LimitArgs, RegularityArgs, SolveArgs};
use crate::config::{pick, ConfigFile, GridSection, KernelSection};
use crate::error::{usage, CliResult};
use crate::output::{num, row, OutputDir, Provenance};
use crate::tags;

struct Context {
    config: ConfigFile,
    out: OutputDir,
    seed: u64,
}

pub fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let out = pick(cli.out, config.experiment.out.clone().map(PathBuf::from), PathBuf::from("."));
    let ctx = Context {
        seed: pick(cli.seed, config.experiment.seed, 0),
        out: OutputDir::create(&out)?,
        config,
    };
    match &cli.command {
        Command::Eval(a) => eval(&ctx, a),
        Command::Solve(a) => solve(&ctx, a),
        Command::Abp(a) => abp(&ctx, a),
        Command::Barrier(a) => barrier(&ctx, a),
        Command::Regularity(a) => regularity(&ctx, a),
        Command::Limit(a) => limit(&ctx, a),
    }
}

#[derive(Debug, Clone, Copy)]
struct GridSettings {
    n: usize,
    h: f64,
    box_radius: f64,
}

impl GridSettings {
    fn resolve(args: &GridArgs, cfg: &GridSection, default_h: impl Fn(usize) -> f64) -> Self {
        let n = pick(args.n, cfg.n, 1);
        let h = pick(args.grid_h, cfg.h, default_h(n));
        let box_radius = pick(args.grid_r, cfg.box_radius, 4.0 * (n as f64).sqrt());
        Self { n, h, box_radius }
    }

    /// The box radius is rounded up to a multiple of `h`.
    fn grid(&self) -> CliResult<Grid> {
        if !(self.h > 0.0) {
            return Err(usage(format!("grid spacing must be positive, got {}", self.h)));
        }
        Ok(Grid::new(self.n, (self.box_radius / self.h).ceil() * self.h, self.h)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct KernelSettings {
    sigma: f64,
    lower: f64,
    upper: f64,
}

impl KernelSettings {
    fn resolve(args: &KernelArgs, cfg: &KernelSection) -> CliResult<Self> {
        check_variant(cfg)?;
        Ok(Self {
            sigma: pick(args.sigma, cfg.sigma, 1.5),
            lower: pick(args.lambda, cfg.lambda, 1.0),
            upper: pick(args.upper, cfg.upper, 1.0),
        })
    }

    fn bounds(&self) -> CliResult<Ellipticity<f64>> {
        Ok(Ellipticity::new(self.lower, self.upper)?)
    }
}

fn check_variant(cfg: &KernelSection) -> CliResult<()> {
    match cfg.variant.as_deref() {
        None | Some("fractional") => Ok(()),
        Some(other) => Err(usage(format!("unknown kernel variant '{other}' (expected fractional)"))),
    }
}

fn check_sigmas(sigmas: &[f64]) -> CliResult<()> {
    if sigmas.is_empty() {
        return Err(usage("order list is empty"));
    }
    match sigmas.iter().find(|&&s| !(s > 0.0 && s < 2.0)) {
        Some(s) => Err(usage(format!("order {s} is outside (0, 2)"))),
        None => Ok(()),
    }
}

fn point_fields(grid: &Grid, node: usize) -> Vec<String> {
    let p = grid.node_point(node);
    (0..grid.dim()).map(|k| num(p[k])).collect()
}

fn coordinate_header(n: usize, prefix: &str) -> String {
    (1..=n).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(",")
}

#[derive(Debug)]
struct EvalSettings {
    op: String,
    kernel: KernelSettings,
    grid: GridSettings,
    function: String,
    seed: u64,
}

/// Operator values at the nodes of the closed unit ball.
fn eval(ctx: &Context, a: &EvalArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let s = EvalSettings {
        op: pick(a.op.clone(), cfg.kernel.op.clone(), "linear".into()),
        kernel: KernelSettings::resolve(&a.kernel, &cfg.kernel)?,
        grid: GridSettings::resolve(&a.grid, &cfg.grid, |_| 1.0 / 64.0),
        function: pick(a.function.clone(), cfg.experiment.function.clone(), "gaussian".into()),
        seed: ctx.seed,
    };
    let grid = s.grid.grid()?;
    let op = tags::operator(&s.op, grid.dim(), s.kernel.sigma, s.kernel.bounds()?)?;
    let u = tags::function(&s.function, grid, s.seed)?;
    let ev = Evaluator::new(op, grid, &Quadrature::default())?;
    let nodes = grid.nodes_in_ball(1.0);
    let values = ev.apply_nodes(&ev.prepare(&u)?, &nodes)?;
    let rows: Vec<String> = nodes
        .iter()
        .zip(&values)
        .map(|(&i, &v)| {
            let mut f = point_fields(&grid, i);
            f.push(num(v));
            row(&f)
        })
        .collect();
    let prov = Provenance::new("eval", &s, Some(&grid), &[s.kernel.sigma]);
    let header = format!("{},value", coordinate_header(grid.dim(), "x"));
    Ok(vec![ctx.out.write("eval.csv", &prov, &header, &rows)?])
}

#[derive(Debug)]
struct SolveSettings {
    op: String,
    kernel: KernelSettings,
    grid: GridSettings,
    omega: String,
    radius: f64,
    rhs: String,
    boundary: String,
    tol: f64,
    max_iters: Option<usize>,
    method: String,
    seed: u64,
}

fn solve(ctx: &Context, a: &SolveArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let e = &cfg.experiment;
    let s = SolveSettings {
        op: pick(a.op.clone(), cfg.kernel.op.clone(), "linear".into()),
        kernel: KernelSettings::resolve(&a.kernel, &cfg.kernel)?,
        grid: GridSettings::resolve(&a.grid, &cfg.grid, |_| 1.0 / 64.0),
        omega: pick(a.omega.clone(), e.omega.clone(), "ball".into()),
        radius: pick(a.radius, e.radius, 1.0),
        rhs: pick(a.rhs.clone(), e.rhs.clone(), "zero".into()),
        boundary: pick(a.boundary.clone(), e.boundary.clone(), "zero".into()),
        tol: pick(a.tol, e.tol, 1e-8),
        max_iters: a.max_iters.or(e.max_iters),
        method: pick(a.method.clone(), e.method.clone(), "policy".into()),
        seed: ctx.seed,
    };
    let grid = s.grid.grid()?;
    let domain = match s.omega.as_str() {
        "ball" => Domain::Ball(s.radius),
        "cube" => Domain::Cube(s.radius),
        other => return Err(usage(format!("unknown domain '{other}' (expected ball or cube)"))),
    };
    let op = tags::operator(&s.op, grid.dim(), s.kernel.sigma, s.kernel.bounds()?)?;
    let rhs = tags::function(&s.rhs, grid, s.seed)?;
    let boundary = tags::function(&s.boundary, grid, s.seed)?;
    let prob = DirichletProblem::new(op, rhs, boundary, domain.mask(&grid), &Quadrature::default())?;
    let report: SolveReport<f64> = match s.method.as_str() {
        "policy" => solve_policy(&prob, s.tol, s.max_iters.unwrap_or(50))?,
        "explicit" => solve_from(&prob, &prob.initial_guess(), s.tol, s.max_iters.unwrap_or(200_000))?,
        other => return Err(usage(format!("unknown method '{other}' (expected policy or explicit)"))),
    };
    let prov = Provenance::new("solve", &s, Some(&grid), &[s.kernel.sigma]);
    let solution = report.solution.to_csv();
    let lines: Vec<String> = solution.lines().map(str::to_string).collect();
    let mut written = vec![ctx.out.write("solution.csv", &prov, "", &lines)?];
    let rows: Vec<String> = report
        .residual_history
        .iter()
        .enumerate()
        .map(|(k, &r)| format!("{k},{}", num(r)))
        .collect();
    written.push(ctx.out.write("residuals.csv", &prov, "iteration,residual", &rows)?);
    if !report.converged {
        return Err(Error::Numerical(format!(
            "solve stopped after {} iterations with residual {:e} > tol {:e}",
            report.iterations,
            report.residual_history.last().copied().unwrap_or(f64::NAN),
            s.tol
        ))
        .into());
    }
    Ok(written)
}

#[derive(Debug)]
struct AbpSettings {
    sigma: f64,
    grid: GridSettings,
    case: String,
    max_depth: usize,
    c: f64,
    mu: f64,
}

/// Nonnegative subsolution data for the decomposition: `(u, f)` with
/// `M+ u >= -f` in `B_1` and `u = 0` outside.
pub fn abp_case(case: &str, grid: Grid, sigma: f64) -> CliResult<(Function, Function)> {
    let n = grid.dim();
    let class = KernelClass::l0(n, sigma, Ellipticity::unit())?;
    let inside = Domain::Ball(1.0).mask(&grid);
    let indicator = Function::from_values(
        grid,
        inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        Closure::Zero,
    )?;
    match case {
        "torsion" => {
            let rhs = indicator.negated();
            let prob = DirichletProblem::new(
                OperatorSpec::ExtremalPlus(class),
                rhs,
                Function::zeros(grid),
                inside,
                &Quadrature::default(),
            )?;
            let rep = solve_policy(&prob, npde_core::regularity::SOLVE_TOLERANCE, 50)?;
            if !rep.converged {
                return Err(Error::Numerical("torsion solve did not converge".into()).into());
            }
            Ok((rep.solution, indicator))
        }
        "cap" => {
            let u = sample_function(grid, |x| (1.0 - npde_core::grid::norm(x, n).powi(2)).max(0.0), Closure::Zero)?;
            let ev = Evaluator::new(OperatorSpec::ExtremalPlus(class), grid, &Quadrature::default())?;
            let nodes: Vec<usize> = grid.nodes().filter(|&i| inside[i]).collect();
            let vals = ev.apply_nodes(&ev.prepare(&u)?, &nodes)?;
            let mut f = vec![0.0; grid.num_nodes()];
            for (&i, &v) in nodes.iter().zip(&vals) {
                f[i] = (-v).max(0.0);
            }
            Ok((u, Function::from_values(grid, f, Closure::Zero)?))
        }
        other => Err(usage(format!("unknown abp case '{other}' (expected torsion or cap)"))),
    }
}

fn abp(ctx: &Context, a: &AbpArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let e = &cfg.experiment;
    check_variant(&cfg.kernel)?;
    let s = AbpSettings {
        sigma: pick(a.sigma, cfg.kernel.sigma, 1.5),
        grid: GridSettings::resolve(&a.grid, &cfg.grid, |n| if n == 1 { 1.0 / 128.0 } else { 1.0 / 32.0 }),
        case: pick(a.case.clone(), e.case.clone(), "torsion".into()),
        max_depth: pick(a.max_depth, e.max_depth, 6),
        c: pick(a.c, e.c, AbpConstants::<f64>::default().c),
        mu: pick(a.mu, e.mu, AbpConstants::<f64>::default().mu),
    };
    check_sigmas(&[s.sigma])?;
    let grid = s.grid.grid()?;
    let (u, f) = abp_case(&s.case, grid, s.sigma)?;
    let env = concave_envelope(&u)?;
    let dec = cube_decompose(&u, &env, &f, s.sigma, s.max_depth, AbpConstants { c: s.c, mu: s.mu })?;
    let (lhs, rhs) = abp_bound(&dec, &env);
    let n = grid.dim();
    let prov = Provenance::new("abp", &s, Some(&grid), &[s.sigma]);
    let cube_rows: Vec<String> = dec
        .cubes
        .iter()
        .map(|c| {
            let mut f: Vec<String> = (0..n).map(|k| num(c.center[k])).collect();
            f.extend([
                num(c.diameter),
                c.level.to_string(),
                num(c.maxf),
                c.passes_e.to_string(),
                c.passes_f.to_string(),
            ]);
            row(&f)
        })
        .collect();
    let centre = if n == 1 { "cx" } else { "cx,cy" };
    let mut written = vec![ctx.out.write(
        "cubes.csv",
        &prov,
        &format!("{centre},diam,level,maxf,passes_e,passes_f"),
        &cube_rows,
    )?];
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    let summary = row(&[
        num(lhs),
        num(rhs),
        num(ratio),
        num(dec.c_measured),
        num(dec.mu_measured),
        dec.depth.to_string(),
        dec.complete.to_string(),
    ]);
    written.push(ctx.out.write(
        "summary.csv",
        &prov,
        "lhs,rhs_sum,C_measured,cube_C,mu_measured,depth,complete",
        &[summary],
    )?);
    Ok(written)
}

#[derive(Debug)]
struct BarrierSettings {
    n: usize,
    sigma0: f64,
    lower: f64,
    upper: f64,
    h: f64,
    sigmas: Vec<f64>,
}

/// Orders checked by default: the search orders plus 1 and 1.5, from
/// `sigma0` up.
pub fn default_barrier_orders(sigma0: f64) -> Vec<f64> {
    let mut s: Vec<f64> = search_orders(sigma0).into_iter().chain([1.0, 1.5]).filter(|&x| x >= sigma0).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

fn barrier(ctx: &Context, a: &BarrierArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    check_variant(&cfg.kernel)?;
    let sigma0 = pick(a.sigma0, cfg.experiment.sigma0, 0.5);
    let n = pick(a.n, cfg.grid.n, 1);
    let s = BarrierSettings {
        n,
        sigma0,
        lower: pick(a.lambda, cfg.kernel.lambda, 1.0),
        upper: pick(a.upper, cfg.kernel.upper, 1.0),
        h: pick(a.grid_h, cfg.grid.h, if n == 1 { 1.0 / 128.0 } else { 1.0 / 64.0 }),
        sigmas: a
            .sigmas
            .clone()
            .or(cfg.experiment.sigmas.clone())
            .unwrap_or_else(|| default_barrier_orders(sigma0)),
    };
    check_sigmas(&s.sigmas)?;
    check_sigmas(&[s.sigma0])?;
    let grid = barrier_grid(s.n, s.h)?;
    let bounds = Ellipticity::new(s.lower, s.upper)?;
    let verifier = BarrierVerifier::new(grid, bounds, Quadrature::default());
    let build = build_phi(&verifier, s.sigma0)?;
    let p = &build.params;
    let q3 = grid
        .nodes()
        .filter(|&i| {
            let x = grid.node_point(i);
            (0..s.n).all(|k| x[k].abs() <= 1.5)
        })
        .map(|i| build.phi.node_value(i))
        .fold(f64::INFINITY, f64::min);
    let prov = Provenance::new("barrier", &s, Some(&grid), &s.sigmas);
    let params = row(&[
        s.n.to_string(),
        p.p.to_string(),
        num(p.delta),
        num(p.cap_a),
        num(p.cap_b),
        num(p.scale),
        num(p.sigma0),
        num(p.psi_bound),
        num(q3),
        num(build.phi.sup_norm()),
    ]);
    let mut written = vec![ctx.out.write(
        "barrier.csv",
        &prov,
        "n,p,delta,cap_a,cap_b,scale,sigma0,psi_bound,min_q3,sup_norm",
        &[params],
    )?];
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for &sigma in &s.sigmas {
        let v = verifier.verify(&build.phi, sigma)?;
        if !v.passed {
            failed.push(sigma);
        }
        let mut f = vec![num(sigma), num(v.min_value), v.argmin.to_string()];
        f.extend(point_fields(&grid, v.argmin));
        f.extend([num(v.psi_bound), v.passed.to_string()]);
        rows.push(row(&f));
    }
    let header = format!("sigma,min_value,argmin,{},psi_bound,passed", coordinate_header(s.n, "argmin_x"));
    written.push(ctx.out.write("verify.csv", &prov, &header, &rows)?);
    if !failed.is_empty() {
        return Err(Error::Numerical(format!("barrier verification failed at orders {failed:?}")).into());
    }
    Ok(written)
}

#[derive(Debug)]
struct RegularitySettings {
    experiment: String,
    sigmas: Vec<f64>,
    grid: GridSettings,
}

/// Columns of `report.csv` for each experiment.
pub fn regularity_columns(experiment: &str) -> CliResult<&'static [usize]> {
    Ok(match experiment {
        "all" => &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
        "holder" => &[0, 1, 2, 3, 10],
        "harnack" => &[0, 4, 10],
        "tail" => &[0, 5, 6, 7, 10],
        "c1a" => &[0, 8, 9, 10],
        other => {
            return Err(usage(format!(
                "unknown experiment '{other}' (expected holder, harnack, tail, c1a or all)"
            )))
        }
    })
}

fn regularity(ctx: &Context, a: &RegularityArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    check_variant(&cfg.kernel)?;
    let s = RegularitySettings {
        experiment: pick(a.experiment.clone(), cfg.experiment.experiment.clone(), "all".into()),
        sigmas: pick(a.sigmas.clone(), cfg.experiment.sigmas.clone(), vec![1.2, 1.5, 1.8, 1.95]),
        grid: GridSettings::resolve(&a.grid, &cfg.grid, |_| 1.0 / 128.0),
    };
    check_sigmas(&s.sigmas)?;
    let cols = regularity_columns(&s.experiment)?;
    let names: Vec<&str> = RegularityRow::<f64>::HEADER.split(',').collect();
    let header = cols.iter().map(|&c| names[c]).collect::<Vec<_>>().join(",");
    let mut rows = Vec::new();
    for &sigma in &s.sigmas {
        let r = regularity_row(sigma, s.grid.n, s.grid.h, &Quadrature::default())?;
        let line = r.csv_line();
        let fields: Vec<&str> = line.split(',').collect();
        rows.push(cols.iter().map(|&c| fields[c]).collect::<Vec<_>>().join(","));
    }
    let grid = s.grid.grid()?;
    let prov = Provenance::new("regularity", &s, Some(&grid), &s.sigmas);
    Ok(vec![ctx.out.write("report.csv", &prov, &header, &rows)?])
}

#[derive(Debug)]
struct LimitSettings {
    matrix: Vec<f64>,
    probe: String,
    sigmas: Vec<f64>,
    grid: GridSettings,
}

fn limit(ctx: &Context, a: &LimitArgs) -> CliResult<Vec<PathBuf>> {
    let cfg = &ctx.config;
    check_variant(&cfg.kernel)?;
    let grid_settings = GridSettings::resolve(&a.grid, &cfg.grid, |n| if n == 1 { 1.0 / 256.0 } else { 1.0 / 32.0 });
    let identity = if grid_settings.n == 1 { vec![1.0] } else { vec![1.0, 0.0, 0.0, 1.0] };
    let s = LimitSettings {
        matrix: pick(a.matrix.clone(), cfg.experiment.matrix.clone(), identity),
        probe: pick(a.probe.clone(), cfg.experiment.probe.clone(), "gaussian".into()),
        sigmas: pick(a.sigmas.clone(), cfg.experiment.sigmas.clone(), vec![1.5, 1.9, 1.99, 1.999]),
        grid: grid_settings,
    };
    check_sigmas(&s.sigmas)?;
    let grid = s.grid.grid()?;
    let m = tags::matrix(&s.matrix, grid.dim())?;
    let probe = tags::probe(&s.probe)?;
    let report = sigma_limit_error(&probe, m, &s.sigmas, grid, &Quadrature::default())?;
    if let Some(k) = report.first_increase() {
        eprintln!(
            "warning: limit error increases at sigma = {} ({:e} -> {:e})",
            report.sigmas[k],
            report.errors[k - 1],
            report.errors[k]
        );
    }
    let rows: Vec<String> = report
        .sigmas
        .iter()
        .zip(&report.errors)
        .map(|(&s, &e)| format!("{},{}", num(s), num(e)))
        .collect();
    let prov = Provenance::new("limit", &s, Some(&grid), &s.sigmas);
    Ok(vec![ctx.out.write("limit.csv", &prov, "sigma,error", &rows)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_orders_for_half() {
        assert_eq!(default_barrier_orders(0.5), vec![0.5, 1.0, 1.25, 1.5, 1.9, 1.99]);
        assert_eq!(default_barrier_orders(1.6), vec![1.6, 1.8, 1.9, 1.99]);
    }

    #[test]
    fn experiment_columns() {
        let names: Vec<&str> = RegularityRow::<f64>::HEADER.split(',').collect();
        let pick = |e| regularity_columns(e).unwrap().iter().map(|&c| names[c]).collect::<Vec<_>>();
        assert_eq!(pick("harnack"), vec!["sigma", "harnack_C", "C0"]);
        assert_eq!(pick("tail"), vec!["sigma", "tail_eps", "tail_C", "tail_r2", "C0"]);
        assert!(regularity_columns("other").is_err());
    }

    #[test]
    fn orders_outside_range_are_usage_errors() {
        assert!(check_sigmas(&[1.5, 2.0]).is_err());
        assert!(check_sigmas(&[]).is_err());
        assert!(check_sigmas(&[0.1, 1.99]).is_ok());
    }
}
