use std::fmt::Debug;
use std::path::{Path, PathBuf};

use npde_core::Grid;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Fixed-width scientific format with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn row(fields: &[String]) -> String {
    fields.join(",")
}

/// First line of every CSV: a hash of the resolved settings plus the grid
/// and orders they name.
#[derive(Debug, Clone)]
pub struct Provenance(String);

impl Provenance {
    pub fn new(command: &str, settings: &impl Debug, grid: Option<&Grid>, sigmas: &[f64]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(format!("{command}\n{settings:?}").as_bytes());
        let hash = format!("{:x}", hasher.finalize());
        let grid = grid.map_or("none".to_string(), |g| format!("n={};h={};R={}", g.dim(), g.h(), g.box_radius()));
        let sigma = sigmas.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";");
        Self(format!("# provenance: config_hash={hash} command={command} grid={grid} sigma={sigma}"))
    }

    pub fn line(&self) -> &str {
        &self.0
    }
}

pub struct OutputDir(PathBuf);

impl OutputDir {
    pub fn create(path: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self(path.to_path_buf()))
    }

    /// Writes `provenance`, then `header` (if non-empty), then `rows`.
    pub fn write(&self, name: &str, provenance: &Provenance, header: &str, rows: &[String]) -> CliResult<PathBuf> {
        let mut text = String::with_capacity(64 * (rows.len() + 2));
        text.push_str(provenance.line());
        text.push('\n');
        if !header.is_empty() {
            text.push_str(header);
            text.push('\n');
        }
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let path = self.0.join(name);
        std::fs::write(&path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }
}
