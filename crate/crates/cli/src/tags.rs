//! String tags naming operators, sampled functions and probes.

use npde_core::kernels::Sym2;
use npde_core::limits::Probe;
use npde_core::regularity::ExteriorCase;
use npde_core::{sample_function, Closure, Ellipticity, Function, Grid, Kernel, KernelClass, Multiplier, OperatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{usage, CliResult};

pub const FUNCTION_TAGS: &str = "zero, one, constant:<c>, gaussian, cutquad, tent, sign, bump, random";

pub fn operator(tag: &str, n: usize, sigma: f64, bounds: Ellipticity<f64>) -> CliResult<OperatorSpec<f64>> {
    let constant = |a: f64| Kernel::fractional(n, sigma, bounds, Multiplier::Constant(a));
    let mid = (bounds.lower() + bounds.upper()) / 2.0;
    Ok(match tag {
        "linear" => OperatorSpec::Linear(constant(mid)?),
        "mplus" => OperatorSpec::ExtremalPlus(KernelClass::l0(n, sigma, bounds)?),
        "mminus" => OperatorSpec::ExtremalMinus(KernelClass::l0(n, sigma, bounds)?),
        "isaacs" => OperatorSpec::Isaacs(vec![
            vec![constant(bounds.lower())?, constant(bounds.upper())?],
            vec![constant(mid)?],
        ]),
        other => return Err(usage(format!("unknown operator '{other}' (expected linear, mplus, mminus or isaacs)"))),
    })
}

pub fn function(tag: &str, grid: Grid, seed: u64) -> CliResult<Function> {
    let n = grid.dim();
    let norm = |x: &[f64; 2]| npde_core::grid::norm(x, n);
    if let Some(c) = tag.strip_prefix("constant:") {
        let c: f64 = c.parse().map_err(|_| usage(format!("bad constant in function tag '{tag}'")))?;
        return Ok(sample_function(grid, |_| c, Closure::Constant(c))?);
    }
    Ok(match tag {
        "zero" => Function::zeros(grid),
        "one" => sample_function(grid, |_| 1.0, Closure::Constant(1.0))?,
        "gaussian" => Probe::Gaussian { amplitude: 1.0 }.sample(grid)?,
        "cutquad" => cut_quadratic().sample(grid)?,
        "tent" => sample_function(grid, |x| (1.0 - norm(x)).max(0.0), Closure::Zero)?,
        "sign" => ExteriorCase::Sign.data(grid)?,
        "bump" => ExteriorCase::Bump.data(grid)?,
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = grid.nodes().map(|_| rng.gen_range(-1.0..1.0)).collect();
            Function::from_values(grid, values, Closure::Zero)?
        }
        other => return Err(usage(format!("unknown function '{other}' (expected one of {FUNCTION_TAGS})"))),
    })
}

fn cut_quadratic() -> Probe<f64> {
    Probe::CutQuadratic { hessian: [[2.0, 0.0], [0.0, 0.0]] }
}

pub fn probe(tag: &str) -> CliResult<Probe<f64>> {
    match tag {
        "gaussian" => Ok(Probe::Gaussian { amplitude: 1.0 }),
        "cutquad" => Ok(cut_quadratic()),
        other => Err(usage(format!("unknown probe '{other}' (expected gaussian or cutquad)"))),
    }
}

pub fn matrix(entries: &[f64], n: usize) -> CliResult<Sym2<f64>> {
    match (n, entries) {
        (1, [a]) => Ok([[*a, 0.0], [0.0, 0.0]]),
        (2, [a, b, c, d]) => Ok([[*a, *b], [*c, *d]]),
        _ => Err(usage(format!("--A needs {} entries for n = {n}, got {}", n * n, entries.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_tag() {
        let g = Grid::new(1, 4.0, 0.5).unwrap();
        let u = function("constant:-1.5", g, 0).unwrap();
        assert!(u.values().iter().all(|&v| v == -1.5));
        assert!(function("constant:x", g, 0).is_err());
        assert!(function("nope", g, 0).is_err());
    }

    #[test]
    fn random_tag_depends_only_on_seed() {
        let g = Grid::new(1, 4.0, 0.25).unwrap();
        assert_eq!(function("random", g, 3).unwrap(), function("random", g, 3).unwrap());
        assert_ne!(function("random", g, 3).unwrap(), function("random", g, 4).unwrap());
    }

    #[test]
    fn matrix_shapes() {
        assert_eq!(matrix(&[2.0], 1).unwrap()[0][0], 2.0);
        assert_eq!(matrix(&[1.0, 0.0, 0.0, 2.0], 2).unwrap()[1][1], 2.0);
        assert!(matrix(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn operator_tags() {
        let b = Ellipticity::new(0.5, 2.0).unwrap();
        for t in ["linear", "mplus", "mminus", "isaacs"] {
            assert!(operator(t, 1, 1.5, b).is_ok());
        }
        assert!(operator("pucci", 1, 1.5, b).is_err());
    }
}
