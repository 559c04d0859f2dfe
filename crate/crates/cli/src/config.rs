//! Command-line flags and config files, folded into one [`RunConfig`].
//!
//! Flags are applied to the defaults first; a config file then overrides
//! whatever keys it sets.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::Value;
use workstat::{Direction, Execution, RunConfig};

use crate::error::CliError;

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file whose keys override the flags below
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Hydrogen offset (Hz)
    #[arg(long, global = true)]
    pub dnu_h: Option<f64>,

    /// Carbon offset (Hz)
    #[arg(long, global = true)]
    pub dnu_c: Option<f64>,

    /// Scalar coupling J (Hz)
    #[arg(long, global = true)]
    pub j_coupling: Option<f64>,

    /// Step-list file for the forward drive
    #[arg(long, global = true)]
    pub steps: Option<PathBuf>,

    /// Preparation temperatures kT in peV, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub temperatures: Option<Vec<f64>>,

    /// Noise standard deviation on each mean
    #[arg(long, global = true)]
    pub sigma: Option<f64>,

    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Monte Carlo trials for error propagation
    #[arg(long, global = true)]
    pub trials: Option<usize>,

    #[arg(long, global = true)]
    pub mle_tol: Option<f64>,

    #[arg(long, global = true)]
    pub mle_max_iter: Option<usize>,

    /// Directions to simulate, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub directions: Option<Vec<String>>,

    /// Use J = 0
    #[arg(long, global = true)]
    pub non_interacting: bool,

    /// Rescale energies so that E2 - E0 equals this many peV
    #[arg(long, global = true)]
    pub gap_override_pev: Option<f64>,

    /// Confidence level of the prediction interval
    #[arg(long, global = true)]
    pub confidence: Option<f64>,

    /// Probability floor for Crooks ratio pairs
    #[arg(long, global = true)]
    pub ratio_floor: Option<f64>,

    /// Return minimum-norm solutions for rank-deficient systems
    #[arg(long, global = true)]
    pub allow_rank_deficient: bool,

    /// Run Monte Carlo trials on one thread
    #[arg(long, global = true)]
    pub sequential: bool,
}

impl ConfigArgs {
    pub fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(v) = self.dnu_h {
            c.hamiltonian.dnu_h = v;
        }
        if let Some(v) = self.dnu_c {
            c.hamiltonian.dnu_c = v;
        }
        if let Some(v) = self.j_coupling {
            c.hamiltonian.j_coupling = v;
        }
        if let Some(v) = &self.steps {
            c.steps = Some(v.clone());
        }
        if let Some(v) = &self.temperatures {
            c.temperatures_pev = v.clone();
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.trials {
            c.trials = v;
        }
        if let Some(v) = self.mle_tol {
            c.mle_tol = v;
        }
        if let Some(v) = self.mle_max_iter {
            c.mle_max_iter = v;
        }
        if let Some(v) = &self.directions {
            c.directions = v
                .iter()
                .map(|d| d.parse::<Direction>())
                .collect::<workstat::Result<Vec<_>>>()?;
        }
        if self.non_interacting {
            c.non_interacting = true;
        }
        if let Some(v) = self.gap_override_pev {
            c.gap_override_pev = Some(v);
        }
        if let Some(v) = self.confidence {
            c.confidence = v;
        }
        if let Some(v) = self.ratio_floor {
            c.ratio_floor = v;
        }
        if self.allow_rank_deficient {
            c.allow_rank_deficient = true;
        }
        if let Some(path) = &self.config {
            c = apply_file(c, path)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Overrides `base` with the keys of a TOML file. Tables are merged one level deep.
pub fn apply_file(base: RunConfig, path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let overrides = serde_json::to_value(file).map_err(|e| CliError::Config(e.to_string()))?;
    let mut merged = serde_json::to_value(&base).map_err(|e| CliError::Config(e.to_string()))?;
    if let (Value::Object(target), Value::Object(source)) = (&mut merged, overrides) {
        for (key, value) in source {
            match (target.get_mut(&key), value) {
                (Some(Value::Object(inner)), Value::Object(fields)) => inner.extend(fields),
                (_, value) => {
                    target.insert(key, value);
                }
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_overrides_flags() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "sigma = 0.0\ntemperatures_pev = [30, 15, 10]\n[hamiltonian]\nj_coupling = 0.0").unwrap();
        let args = ConfigArgs {
            config: Some(f.path().to_path_buf()),
            sigma: Some(0.2),
            seed: Some(9),
            ..ConfigArgs::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.sigma, 0.0);
        assert_eq!(c.seed, 9);
        assert_eq!(c.temperatures_pev, vec![30.0, 15.0, 10.0]);
        assert_eq!(c.hamiltonian.j_coupling, 0.0);
        assert_eq!(c.hamiltonian.dnu_h, 2000.0);
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "sigmaa = 0.1").unwrap();
        let args = ConfigArgs {
            config: Some(f.path().to_path_buf()),
            ..ConfigArgs::default()
        };
        let err = args.resolve().unwrap_err();
        assert!(err.to_string().contains("sigmaa"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_direction_flag() {
        let args = ConfigArgs {
            directions: Some(vec!["sideways".into()]),
            ..ConfigArgs::default()
        };
        assert_eq!(args.resolve().unwrap_err().exit_code(), 2);
    }
}
