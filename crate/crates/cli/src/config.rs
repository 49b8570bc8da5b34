//! TOML configuration files for the `partition` and `run` commands.

use std::fmt;
use std::path::{Path, PathBuf};

use fedids::aggregate::FedPlusConfig;
use fedids::ingest::CleanPolicy;
use fedids::metrics::MetricKind;
use fedids::model::TrainConfig;
use fedids::partition::ScenarioKind;
use fedids::runtime::{ExperimentConfig, Mode, Normalization, Selection};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A problem with the configuration itself. The binary maps it to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Reads and parses a TOML file. Unknown keys are rejected by the target type.
pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| config_error(format!("invalid config {}: {e}", path.display())))
}

/// Resolves `p` against the directory holding the config file.
pub fn resolve(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config_path
        .parent()
        .map(|d| d.join(p))
        .unwrap_or_else(|| p.to_path_buf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub input: Option<CsvInput>,
    pub synthetic: Option<SyntheticInput>,
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvInput {
    pub csv: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_key_column")]
    pub key_column: String,
    #[serde(default)]
    pub clean: CleanPolicy,
}

fn default_label_column() -> String {
    "Label".into()
}

fn default_key_column() -> String {
    "Dst IP".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TonIotBasic,
    TonIotBalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticInput {
    pub preset: Option<Preset>,
    /// Count multiplier applied to the preset or to `counts`.
    #[serde(default = "one")]
    pub factor: f64,
    /// Per-party class counts, one row per party.
    pub counts: Option<Vec<Vec<u64>>>,
    pub class_names: Option<Vec<String>>,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_separability")]
    pub separability: f64,
    #[serde(default = "one")]
    pub noise_sd: f64,
}

fn one() -> f64 {
    1.0
}

fn default_features() -> usize {
    10
}

fn default_separability() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    #[serde(default = "ten")]
    pub top_n: usize,
    #[serde(default = "ten")]
    pub num_parties: usize,
    pub quotas: Option<Vec<u64>>,
    #[serde(default = "default_threshold")]
    pub entropy_threshold: f64,
    #[serde(default = "default_band")]
    pub band: [f64; 2],
    #[serde(default)]
    pub caps: Vec<CapEntry>,
}

fn ten() -> usize {
    10
}

fn default_threshold() -> f64 {
    0.2
}

fn default_band() -> [f64; 2] {
    [0.66, 0.71]
}

/// Upper bound on one class of one party in the mixed scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapEntry {
    pub party: usize,
    pub class: String,
    pub max: u64,
}

impl PartitionConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        match (&self.input, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(config_error("give either [input] or [synthetic], not both"))
            }
            (None, None) => return Err(config_error("one of [input] or [synthetic] is required")),
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            if s.preset.is_some() == s.counts.is_some() {
                return Err(config_error(
                    "[synthetic] needs exactly one of `preset` or `counts`",
                ));
            }
            if !(s.factor > 0.0 && s.factor <= 1.0) {
                return Err(config_error(format!(
                    "synthetic.factor must lie in (0, 1], got {}",
                    s.factor
                )));
            }
        }
        let sc = &self.scenario;
        if sc.band[0] > sc.band[1] {
            return Err(config_error(format!(
                "scenario.band is reversed: [{}, {}]",
                sc.band[0], sc.band[1]
            )));
        }
        if sc.kind == ScenarioKind::Basic && sc.top_n == 0 {
            return Err(config_error("scenario.top_n must be at least 1"));
        }
        if sc.kind == ScenarioKind::Balanced && sc.num_parties == 0 {
            return Err(config_error("scenario.num_parties must be at least 1"));
        }
        if sc.kind != ScenarioKind::Mixed && !sc.caps.is_empty() {
            return Err(config_error(
                "scenario.caps only applies to kind = \"mixed\"",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub partition_dir: PathBuf,
    pub output_dir: PathBuf,
    pub mode: Mode,
    pub rounds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub parallel: bool,
    /// Write model checkpoints every this many rounds; 0 disables them.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub train: TrainConfig,
    pub fedplus: Option<FedPlusConfig>,
    #[serde(default)]
    pub selection: Selection,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn all_metrics() -> Vec<MetricKind> {
    MetricKind::ALL.to_vec()
}

impl RunConfig {
    /// Builds the runtime configuration. A `[fedplus]` section under another
    /// mode produces a warning and is dropped.
    pub fn to_experiment(&self) -> anyhow::Result<(ExperimentConfig, Vec<String>)> {
        let mut warnings = Vec::new();
        let fedplus = match (self.mode, &self.fedplus) {
            (Mode::FederatedFedplus, fp) => Some(fp.clone().unwrap_or_default()),
            (mode, Some(_)) => {
                warnings.push(format!("[fedplus] is ignored in mode {mode}"));
                None
            }
            (_, None) => None,
        };
        let cfg = ExperimentConfig {
            mode: self.mode,
            rounds: self.rounds,
            train: self.train.clone(),
            fedplus,
            selection: self.selection.clone(),
            master_seed: self.master_seed,
            test_fraction: self.test_fraction,
            normalization: self.normalization,
            metrics: self.metrics.clone(),
            parallel: self.parallel,
        };
        cfg.validate().map_err(|e| config_error(e.to_string()))?;
        Ok((cfg, warnings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUN: &str = r#"
partition_dir = "parts"
output_dir = "out"
mode = "federated_fedplus"
rounds = 5
master_seed = 9

[train]
learning_rate = 0.05

[fedplus]
alpha = 0.3

[selection]
policy = "fixed_subset"
parties = [0, 2]
"#;

    #[test]
    fn run_config_defaults_and_conversion() {
        let rc: RunConfig = toml::from_str(RUN).unwrap();
        assert_eq!(rc.train.batch_size, 1);
        assert_eq!(rc.metrics.len(), 5);
        let (cfg, warnings) = rc.to_experiment().unwrap();
        assert!(warnings.is_empty());
        assert_eq!(cfg.fedplus.unwrap().alpha, 0.3);
        assert_eq!(cfg.selection, Selection::FixedSubset(vec![0, 2]));
    }

    #[test]
    fn fedplus_section_ignored_for_other_modes() {
        let rc: RunConfig =
            toml::from_str(&RUN.replace("federated_fedplus", "distributed")).unwrap();
        let (cfg, warnings) = rc.to_experiment().unwrap();
        assert!(cfg.fedplus.is_none());
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err =
            toml::from_str::<RunConfig>(&format!("agregator = \"fedavg\"\n{RUN}")).unwrap_err();
        assert!(err.to_string().contains("agregator"), "{err}");
    }

    #[test]
    fn zero_rounds_is_a_config_error() {
        let rc: RunConfig = toml::from_str(&RUN.replace("rounds = 5", "rounds = 0")).unwrap();
        let err = rc.to_experiment().unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn partition_config_needs_one_source() {
        let pc: PartitionConfig =
            toml::from_str("output_dir = \"o\"\n[scenario]\nkind = \"basic\"\n").unwrap();
        assert!(pc.validate().is_err());
    }
}
