//! `fedids run`: execute an experiment over a partition directory.

use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use fedids::ingest::Normalizer;
use fedids::metrics::{Averaging, MetricKind, MetricsHistory};
use fedids::runtime::{FederationState, Mode};
use fedids::seed::PRNG_NAME;
use fedids::{ModelParams, ScenarioPartition};
use serde::{Deserialize, Serialize};

use crate::config::{self, RunConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub fedids: String,
    pub fedids_cli: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerEntry {
    /// `None` for a normalizer shared by every party.
    pub party_id: Option<usize>,
    pub params: Normalizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// The configuration exactly as parsed.
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub versions: Versions,
    pub prng: String,
    pub master_seed: u64,
    pub partition_dir: PathBuf,
    /// Every file this run wrote, the manifest included.
    pub outputs: Vec<PathBuf>,
    pub normalizers: Vec<NormalizerEntry>,
}

pub fn cmd_run(config_path: &Path) -> anyhow::Result<()> {
    let rc: RunConfig = config::load(config_path)?;
    let (cfg, warnings) = rc.to_experiment()?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let started_at = now();
    let partition_dir = config::resolve(config_path, &rc.partition_dir);
    let out_dir = config::resolve(config_path, &rc.output_dir);
    let scenario = ScenarioPartition::read_dir(&partition_dir)
        .with_context(|| format!("loading partition from {}", partition_dir.display()))?;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut outputs = Vec::new();
    let mut state = FederationState::new(&scenario, &cfg)?;
    let mut history = MetricsHistory::default();
    for round in 0..cfg.rounds {
        history.extend(
            state
                .run_round(&cfg)
                .with_context(|| format!("round {round}"))?,
        );
        if rc.checkpoint_every > 0 && (round + 1) % rc.checkpoint_every == 0 {
            outputs.extend(write_checkpoints(&out_dir, round, cfg.mode, &state)?);
        }
    }
    eprintln!(
        "{} rounds of {} over {} parties",
        cfg.rounds,
        cfg.mode,
        state.parties().len()
    );

    let metrics_path = out_dir.join(METRICS_FILE);
    history.write_csv_file(&metrics_path)?;
    outputs.insert(0, metrics_path);
    let manifest_path = out_dir.join(RUN_MANIFEST_FILE);
    outputs.push(manifest_path.clone());

    let manifest = RunManifest {
        config: rc.clone(),
        started_at,
        finished_at: now(),
        versions: Versions {
            fedids: fedids::VERSION.into(),
            fedids_cli: env!("CARGO_PKG_VERSION").into(),
        },
        prng: PRNG_NAME.into(),
        master_seed: rc.master_seed,
        partition_dir,
        outputs,
        normalizers: state
            .normalizers()
            .iter()
            .map(|(party_id, params)| NormalizerEntry {
                party_id: *party_id,
                params: params.clone(),
            })
            .collect(),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    if let Some(last) = history.last_round() {
        if let Some(mean) = history.party_mean(last, MetricKind::Accuracy, Averaging::None) {
            println!("final round {last}: mean party accuracy {mean:.4}");
        }
    }
    Ok(())
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn write_checkpoints(
    out_dir: &Path,
    round: usize,
    mode: Mode,
    state: &FederationState,
) -> anyhow::Result<Vec<PathBuf>> {
    let dir = out_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&dir)?;
    let mut models: Vec<(String, &ModelParams)> = Vec::new();
    match mode {
        Mode::FederatedFedavg | Mode::Centralized => {
            models.extend(
                state
                    .global()
                    .map(|g| (format!("round_{round}_global.txt"), g)),
            );
        }
        Mode::FederatedFedplus | Mode::Distributed => {
            models.extend(
                state
                    .central()
                    .map(|c| (format!("round_{round}_central.txt"), c)),
            );
            for p in state.parties() {
                models.push((format!("round_{round}_party_{}.txt", p.party_id), &p.params));
            }
        }
    }
    let mut written = Vec::new();
    for (name, params) in models {
        let path = dir.join(name);
        std::fs::write(&path, params.to_text())?;
        written.push(path);
    }
    Ok(written)
}
