//! The TOML experiment file: `[kernel]`, `[grid]` and `[experiment]` sections.
//! Every key is optional; command-line flags take precedence.

use std::path::Path;

use serde::Deserialize;

use crate::error::{usage, CliError, CliResult};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub variant: Option<String>,
    pub op: Option<String>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(rename = "Lambda")]
    pub upper: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Option<usize>,
    pub h: Option<f64>,
    #[serde(rename = "R")]
    pub box_radius: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub case: Option<String>,
    pub sigmas: Option<Vec<f64>>,
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub function: Option<String>,
    pub probe: Option<String>,
    #[serde(rename = "A")]
    pub matrix: Option<Vec<f64>>,
    pub omega: Option<String>,
    pub radius: Option<f64>,
    pub rhs: Option<String>,
    pub boundary: Option<String>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub method: Option<String>,
    pub max_depth: Option<usize>,
    pub sigma0: Option<f64>,
    pub experiment: Option<String>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub mu: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Flag, else config value, else default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse() {
        let c = ConfigFile::parse(
            "[kernel]\nsigma = 1.5\nlambda = 1.0\nLambda = 2.0\n[grid]\nn = 2\nh = 0.125\nR = 6.0\n[experiment]\nsigmas = [1.2, 1.5]\nseed = 4\n",
        )
        .unwrap();
        assert_eq!(c.kernel.sigma, Some(1.5));
        assert_eq!(c.kernel.upper, Some(2.0));
        assert_eq!(c.grid.box_radius, Some(6.0));
        assert_eq!(c.experiment.sigmas, Some(vec![1.2, 1.5]));
    }

    #[test]
    fn inline_kernel_table_parses() {
        let c = ConfigFile::parse("kernel = { variant = \"fractional\", sigma = 1.5, lambda = 1.0, Lambda = 2.0 }\n").unwrap();
        assert_eq!(c.kernel.variant.as_deref(), Some("fractional"));
        assert_eq!(c.kernel.lambda, Some(1.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("[grid]\nspacing = 0.1\n").is_err());
        assert!(ConfigFile::parse("[solver]\ntol = 1\n").is_err());
    }

    #[test]
    fn flags_win() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
    }
}
