use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every method the runner knows, calibration first.
pub const ALL_METHODS: [&str; 8] = ["HB", "IGHB", "PS", "GCULR", "SC", "MVSC", "CQR", "GCCQR"];

fn default_methods() -> Vec<String> {
    ALL_METHODS.iter().map(|m| m.to_string()).collect()
}

fn default_alphas() -> Vec<f64> {
    vec![0.5, 0.4, 0.3, 0.2, 0.1]
}

fn default_cv_grid() -> Vec<f64> {
    vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Experiment configuration, read from TOML. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSONL dataset.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// TOML synthetic specification, generated with `seed`.
    #[serde(default)]
    pub synthetic: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Target error rates.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "ExperimentConfig::default_n_splits")]
    pub n_splits: usize,
    /// Calibration share of each split.
    #[serde(default = "ExperimentConfig::default_split_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Level-set grid resolution: `grid_m + 1` level sets.
    #[serde(default = "ExperimentConfig::default_grid_m")]
    pub grid_m: usize,
    /// Length of the interpolated score vector for quantile regression.
    #[serde(default = "ExperimentConfig::default_k")]
    pub k: usize,
    /// Patching iterations for IGHB and MVSC.
    #[serde(default = "ExperimentConfig::default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_cv_grid")]
    pub cv_grid: Vec<f64>,
    #[serde(default = "ExperimentConfig::default_cv_folds")]
    pub cv_folds: usize,
    /// Minimum share of test entities for a group to be reported.
    #[serde(default = "ExperimentConfig::default_group_floor")]
    pub group_floor: f64,
    #[serde(default = "ExperimentConfig::default_max_arity")]
    pub max_arity: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    fn default_n_splits() -> usize {
        10
    }
    fn default_split_fraction() -> f64 {
        0.8
    }
    fn default_grid_m() -> usize {
        4
    }
    fn default_k() -> usize {
        25
    }
    fn default_max_iter() -> usize {
        100
    }
    fn default_cv_folds() -> usize {
        5
    }
    fn default_group_floor() -> f64 {
        0.05
    }
    fn default_max_arity() -> usize {
        2
    }

    /// Parses TOML and applies defaults; paths are left as written.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every bound.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return bad("set only one of `data` and `synthetic`".into()),
            (None, None) => return bad("one of `data` or `synthetic` is required".into()),
            _ => {}
        }
        if self.methods.is_empty() {
            return bad("`methods` must name at least one method".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if !ALL_METHODS.contains(&m.as_str()) {
                return bad(format!("unknown method `{m}` (expected one of {})", ALL_METHODS.join(", ")));
            }
            if self.methods[..i].contains(m) {
                return bad(format!("method `{m}` listed twice"));
            }
        }
        if self.alphas.is_empty() {
            return bad("`alphas` must not be empty".into());
        }
        for (i, &a) in self.alphas.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("alpha {a} is outside (0, 1)"));
            }
            if self.alphas[..i].contains(&a) {
                return bad(format!("alpha {a} listed twice"));
            }
        }
        if self.n_splits == 0 {
            return bad("`n_splits` must be at least 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("`split_fraction` {} is outside (0, 1)", self.split_fraction));
        }
        if self.grid_m == 0 {
            return bad("`grid_m` must be at least 1".into());
        }
        if self.k < 2 {
            return bad(format!("`k` must be at least 2, got {}", self.k));
        }
        if self.max_iter == 0 {
            return bad("`max_iter` must be at least 1".into());
        }
        if self.cv_grid.is_empty() || self.cv_grid.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("`cv_grid` must hold finite non-negative penalties".into());
        }
        if self.cv_folds < 2 {
            return bad(format!("`cv_folds` must be at least 2, got {}", self.cv_folds));
        }
        if !(0.0..1.0).contains(&self.group_floor) {
            return bad(format!("`group_floor` {} is outside [0, 1)", self.group_floor));
        }
        if self.max_arity == 0 {
            return bad("`max_arity` must be at least 1".into());
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.data.as_mut() {
            fix(p);
        }
        if let Some(p) = self.synthetic.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }
}

/// Reads a config file, fills defaults, checks bounds, and resolves relative
/// paths against the file's directory.
pub fn validate_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    config.validate()?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("data = \"d.jsonl\"").unwrap();
        c.validate().unwrap();
        assert_eq!(c.methods.len(), 8);
        assert_eq!(c.alphas, vec![0.5, 0.4, 0.3, 0.2, 0.1]);
        assert_eq!((c.n_splits, c.split_fraction, c.grid_m, c.k, c.max_iter), (10, 0.8, 4, 25, 100));
        assert_eq!(c.cv_grid, vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]);
        assert_eq!((c.cv_folds, c.group_floor, c.max_arity), (5, 0.05, 2));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("data = \"d\"\nmethds = [\"HB\"]").unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("methds"), "{err}");
    }

    #[test]
    fn bounds() {
        let parse = |s: &str| ExperimentConfig::from_toml(s).unwrap().validate();
        assert!(parse("data = \"d\"\nalphas = [1.5]").is_err());
        assert!(parse("data = \"d\"\nmethods = []").is_err());
        assert!(parse("data = \"d\"\nmethods = [\"XX\"]").is_err());
        assert!(parse("alphas = [0.1]").is_err());
        assert!(parse("data = \"d\"\nsynthetic = \"s\"").is_err());
        assert!(parse("data = \"d\"\nsplit_fraction = 1.0").is_err());
        assert!(parse("data = \"d\"\ncv_folds = 1").is_err());
        assert!(parse("data = \"d\"\nk = 1").is_err());
        assert!(parse("synthetic = \"s\"\nmethods = [\"SC\"]\nalphas = [0.1, 0.2]").is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml("data = \"d.jsonl\"\nseed = 3").unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
