//! Run configuration: TOML file with [data], [model], [nuisance], and
//! [inference] sections, plus command-line overrides. A run is fully
//! reproducible from the effective config and seed; the SHA-256 of the
//! canonicalized effective config stamps every output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calsens::data::CsvSchema;
use calsens::error::Error;
use calsens::nuisance::{NuisanceConfig, OutcomeMethod, PropensityMethod, SmootherSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub groups: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_model")]
    pub kind: String,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: String,
    /// Leave-some-out family for the outcome model, as lists of covariate
    /// (or group) names; empty means leave-one-out over all groups.
    #[serde(default)]
    pub family: Vec<Vec<String>>,
}

fn default_model() -> String {
    "effect-diff".into()
}

fn default_gamma_grid() -> String {
    "0.5:5:0.5".into()
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: default_model(),
            gamma_grid: default_gamma_grid(),
            family: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSection {
    #[serde(default = "default_propensity")]
    pub propensity: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub knn_k: usize,
}

fn default_propensity() -> String {
    "logistic".into()
}

fn default_outcome() -> String {
    "linear".into()
}

fn default_epsilon() -> f64 {
    0.01
}

impl Default for NuisanceSection {
    fn default() -> Self {
        NuisanceSection {
            propensity: default_propensity(),
            outcome: default_outcome(),
            epsilon: default_epsilon(),
            knn_k: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// auto | influence | bootstrap; auto picks bootstrap for the odds
    /// model and influence otherwise.
    #[serde(default = "default_variance")]
    pub variance: String,
    /// "B,m" with m = 0 meaning the full sample size.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: String,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_folds() -> usize {
    5
}

fn default_seed() -> u64 {
    1
}

fn default_variance() -> String {
    "auto".into()
}

fn default_bootstrap() -> String {
    "100,0".into()
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            alpha: default_alpha(),
            folds: default_folds(),
            seed: default_seed(),
            variance: default_variance(),
            bootstrap: default_bootstrap(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub nuisance: NuisanceSection,
    #[serde(default)]
    pub inference: InferenceSection,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub gamma_grid: Option<String>,
    pub alpha: Option<f64>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub bootstrap: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        // data paths are relative to the config file
        if cfg.data.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(v) = &ov.model {
            self.model.kind = v.clone();
        }
        if let Some(v) = &ov.gamma_grid {
            self.model.gamma_grid = v.clone();
        }
        if let Some(v) = ov.alpha {
            self.inference.alpha = v;
        }
        if let Some(v) = ov.folds {
            self.inference.folds = v;
        }
        if let Some(v) = ov.seed {
            self.inference.seed = v;
        }
        if let Some(v) = ov.epsilon {
            self.nuisance.epsilon = v;
        }
        if let Some(v) = &ov.bootstrap {
            self.inference.bootstrap = v.clone();
        }
    }

    /// SHA-256 of the canonical (serialized) effective config.
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            treatment: self.data.treatment.clone(),
            outcome: self.data.outcome.clone(),
            covariates: self.data.covariates.clone(),
            groups: self
                .data
                .groups
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn nuisance_config(&self) -> Result<NuisanceConfig, Error> {
        let propensity = match self.nuisance.propensity.as_str() {
            "logistic" => PropensityMethod::Logistic,
            "knn" => PropensityMethod::Knn { k: self.nuisance.knn_k },
            other => {
                return Err(Error::Config(format!(
                    "unknown propensity method '{other}' (use logistic or knn)"
                )))
            }
        };
        let outcome = match self.nuisance.outcome.as_str() {
            "linear" => OutcomeMethod::Linear,
            "knn" => OutcomeMethod::Knn { k: self.nuisance.knn_k },
            "nadaraya-watson" => OutcomeMethod::NadarayaWatson,
            other => {
                return Err(Error::Config(format!(
                    "unknown outcome method '{other}' (use linear, knn, or nadaraya-watson)"
                )))
            }
        };
        Ok(NuisanceConfig {
            propensity,
            outcome,
            epsilon: self.nuisance.epsilon,
            theta_companion: SmootherSpec::Linear,
        })
    }

    pub fn gamma_grid(&self) -> Result<Vec<f64>, Error> {
        parse_gamma_grid(&self.model.gamma_grid)
    }

    /// (replicates, resample size or None).
    pub fn bootstrap_settings(&self) -> Result<(usize, Option<usize>), Error> {
        let parts: Vec<&str> = self.inference.bootstrap.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!(
                "bootstrap must be 'B,m', got '{}'",
                self.inference.bootstrap
            )));
        }
        let b: usize = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad bootstrap B '{}'", parts[0])))?;
        let m: usize = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad bootstrap m '{}'", parts[1])))?;
        Ok((b, if m == 0 { None } else { Some(m) }))
    }
}

/// Parse "a:b:step" (inclusive endpoints within float tolerance) or a
/// comma-separated list.
pub fn parse_gamma_grid(text: &str) -> Result<Vec<f64>, Error> {
    let bad = |msg: &str| Error::Config(format!("bad gamma grid '{text}': {msg}"));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected a:b:step"));
        }
        let a: f64 = parts[0].trim().parse().map_err(|_| bad("non-numeric start"))?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad("non-numeric end"))?;
        let step: f64 = parts[2].trim().parse().map_err(|_| bad("non-numeric step"))?;
        if step <= 0.0 || b < a {
            return Err(bad("need step > 0 and end >= start"));
        }
        let mut grid = Vec::new();
        let mut k = 0usize;
        loop {
            let v = a + step * k as f64;
            if v > b + 1e-9 {
                break;
            }
            grid.push(v);
            k += 1;
        }
        if grid.is_empty() {
            return Err(bad("empty grid"));
        }
        Ok(grid)
    } else {
        let grid: Result<Vec<f64>, _> =
            text.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let grid = grid.map_err(|_| bad("non-numeric entry"))?;
        if grid.is_empty() {
            return Err(bad("empty grid"));
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parses_range_and_list() {
        let g = parse_gamma_grid("0.5:2:0.5").unwrap();
        assert_eq!(g, vec![0.5, 1.0, 1.5, 2.0]);
        let g = parse_gamma_grid("1, 2.5, 4").unwrap();
        assert_eq!(g, vec![1.0, 2.5, 4.0]);
        assert!(parse_gamma_grid("5:1:1").is_err());
    }

    #[test]
    fn hash_changes_with_config() {
        let mut a = RunConfig::default();
        a.data.treatment = "a".into();
        let h1 = a.hash();
        a.inference.seed = 9;
        assert_ne!(h1, a.hash());
    }
}
