//! `fedids partition`: build a scenario from a flow CSV or a synthetic profile.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use fedids::ingest::{clean_features, parse_flow_csv_detailed, CleanReport};
use fedids::partition::{build_balanced, build_basic, build_mixed, MixedConfig, ScenarioKind};
use fedids::synthetic::{
    generate, scale_counts, SyntheticProfile, TON_IOT_BALANCED_QUOTAS, TON_IOT_BASIC,
    TON_IOT_CLASSES,
};
use fedids::ScenarioPartition;
use serde::Serialize;

use crate::config::{self, config_error, PartitionConfig, Preset, SyntheticInput};

pub const INGEST_REPORT_FILE: &str = "ingest.json";

#[derive(Serialize)]
struct IngestReport<'a> {
    source: String,
    label_column: &'a str,
    key_column: &'a str,
    dropped_columns: &'a [String],
    clean: &'a CleanReport,
}

pub fn cmd_partition(config_path: &Path) -> anyhow::Result<()> {
    let cfg: PartitionConfig = config::load(config_path)?;
    cfg.validate()?;
    let out_dir = config::resolve(config_path, &cfg.output_dir);
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let scenario = if let Some(input) = &cfg.input {
        let csv = config::resolve(config_path, &input.csv);
        let parsed = parse_flow_csv_detailed(&csv, &input.label_column, &input.key_column)
            .with_context(|| format!("reading {}", csv.display()))?;
        let (table, report) = clean_features(parsed.table, input.clean);
        eprintln!(
            "ingested {} rows, kept {} ({} dropped, {} cells replaced)",
            report.rows_in, report.rows_out, report.rows_dropped, report.cells_replaced
        );
        let sidecar = IngestReport {
            source: csv.display().to_string(),
            label_column: &input.label_column,
            key_column: &input.key_column,
            dropped_columns: &parsed.dropped_columns,
            clean: &report,
        };
        std::fs::write(
            out_dir.join(INGEST_REPORT_FILE),
            serde_json::to_string_pretty(&sidecar)?,
        )?;

        let sc = &cfg.scenario;
        match sc.kind {
            ScenarioKind::Basic => build_basic(&table, sc.top_n, &input.key_column)?,
            ScenarioKind::Balanced => {
                let quotas = sc
                    .quotas
                    .as_ref()
                    .ok_or_else(|| config_error("kind = \"balanced\" needs scenario.quotas"))?;
                build_balanced(
                    &table,
                    sc.num_parties,
                    quotas,
                    cfg.master_seed,
                    &input.key_column,
                )?
            }
            ScenarioKind::Mixed => {
                let basic = build_basic(&table, sc.top_n, &input.key_column)?;
                build_mixed(&basic, &mixed_config(&cfg, basic.class_names())?)?
            }
        }
    } else {
        let syn = cfg.synthetic.as_ref().expect("validated");
        synthetic_scenario(&cfg, syn)?
    };

    scenario
        .write_dir(&out_dir)
        .with_context(|| format!("writing partition to {}", out_dir.display()))?;
    print!("{}", scenario.entropy_table());
    eprintln!(
        "wrote {} parties to {}",
        scenario.parties.len(),
        out_dir.display()
    );
    Ok(())
}

fn synthetic_scenario(
    cfg: &PartitionConfig,
    syn: &SyntheticInput,
) -> anyhow::Result<ScenarioPartition> {
    let sc = &cfg.scenario;
    let counts = match (syn.preset, &syn.counts) {
        (Some(Preset::TonIotBasic), _) => scale_counts(&TON_IOT_BASIC, syn.factor)?,
        (Some(Preset::TonIotBalanced), _) => {
            vec![scale_counts(&[TON_IOT_BALANCED_QUOTAS], syn.factor)?.remove(0); sc.num_parties]
        }
        (None, Some(rows)) => scale_rows(rows, syn.factor),
        (None, None) => unreachable!("validated"),
    };
    let k = counts.first().map_or(0, Vec::len);
    let class_names = match &syn.class_names {
        Some(names) => names.clone(),
        None if k == TON_IOT_CLASSES.len() => {
            TON_IOT_CLASSES.iter().map(|s| s.to_string()).collect()
        }
        None => (0..k).map(|c| format!("class_{c}")).collect(),
    };
    let preset_balanced = syn.preset == Some(Preset::TonIotBalanced);
    if preset_balanced && sc.kind != ScenarioKind::Balanced {
        return Err(config_error(
            "preset \"ton-iot-balanced\" requires kind = \"balanced\"",
        ));
    }
    let profile = SyntheticProfile {
        class_names,
        d: syn.features,
        counts,
        separability: syn.separability,
        noise_sd: syn.noise_sd,
        seed: cfg.master_seed,
        kind: if preset_balanced {
            ScenarioKind::Balanced
        } else {
            ScenarioKind::Basic
        },
    };
    profile
        .validate()
        .map_err(|e| config_error(e.to_string()))?;
    let source = generate(&profile)?;

    Ok(match sc.kind {
        ScenarioKind::Basic => source,
        ScenarioKind::Balanced if preset_balanced => source,
        ScenarioKind::Balanced => {
            let quotas = sc
                .quotas
                .as_ref()
                .ok_or_else(|| config_error("kind = \"balanced\" needs scenario.quotas"))?;
            build_balanced(
                &source.pooled()?,
                sc.num_parties,
                quotas,
                cfg.master_seed,
                &source.key_column,
            )?
        }
        ScenarioKind::Mixed => build_mixed(&source, &mixed_config(cfg, source.class_names())?)?,
    })
}

/// Same rounding as the library's table scaling: nonzero counts stay nonzero.
fn scale_rows(rows: &[Vec<u64>], factor: f64) -> Vec<Vec<u64>> {
    rows.iter()
        .map(|row| {
            row.iter()
                .map(|&c| {
                    if c == 0 {
                        0
                    } else {
                        ((c as f64 * factor - 1e-9).ceil() as u64).max(1)
                    }
                })
                .collect()
        })
        .collect()
}

fn mixed_config(cfg: &PartitionConfig, class_names: &[String]) -> anyhow::Result<MixedConfig> {
    let sc = &cfg.scenario;
    let mut caps: BTreeMap<usize, Vec<Option<u64>>> = BTreeMap::new();
    for cap in &sc.caps {
        let class = class_names
            .iter()
            .position(|c| *c == cap.class)
            .ok_or_else(|| {
                config_error(format!("scenario.caps names unknown class `{}`", cap.class))
            })?;
        caps.entry(cap.party)
            .or_insert_with(|| vec![None; class_names.len()])[class] = Some(cap.max);
    }
    Ok(MixedConfig {
        entropy_threshold: sc.entropy_threshold,
        band: (sc.band[0], sc.band[1]),
        caps,
        seed: cfg.master_seed,
    })
}
