//! `fedids report`: final-round summaries of one or more metrics CSVs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fedids::metrics::{Averaging, MetricKind, MetricsHistory};

pub const SUMMARY_FILE: &str = "summary.txt";

/// Per-party accuracy at the last round of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalAccuracy {
    pub label: String,
    pub round: usize,
    pub by_party: BTreeMap<usize, f64>,
}

impl FinalAccuracy {
    pub fn from_history(label: String, history: &MetricsHistory) -> anyhow::Result<Self> {
        let round = history.last_round().context("no metric rows")?;
        let by_party: BTreeMap<usize, f64> = history
            .select(MetricKind::Accuracy, Averaging::None)
            .filter(|r| r.round == round)
            .map(|r| (r.party_id, r.value))
            .collect();
        if by_party.is_empty() {
            anyhow::bail!("{label}: no accuracy rows at round {round}");
        }
        Ok(Self {
            label,
            round,
            by_party,
        })
    }

    pub fn mean(&self) -> f64 {
        self.by_party.values().sum::<f64>() / self.by_party.len() as f64
    }
}

/// Label for a run: the file stem, or the parent directory for files named
/// `metrics.csv` as written by `fedids run`.
pub fn run_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if stem == "metrics" {
        if let Some(parent) = path.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

/// One row per party; with several runs, one accuracy column per run.
pub fn render(runs: &[FinalAccuracy]) -> String {
    let mut out = String::new();
    if let [run] = runs {
        writeln!(out, "run {} (final round {})", run.label, run.round).unwrap();
        writeln!(out, "{:<8}{:>12}", "party", "accuracy").unwrap();
        for (party, acc) in &run.by_party {
            writeln!(out, "{party:<8}{acc:>12.4}").unwrap();
        }
        writeln!(out, "{:<8}{:>12.4}", "mean", run.mean()).unwrap();
        return out;
    }

    let headers: Vec<String> = runs
        .iter()
        .map(|r| format!("Accuracy {}", r.label))
        .collect();
    let width = headers.iter().map(String::len).max().unwrap_or(0).max(10) + 2;
    write!(out, "{:<8}", "party").unwrap();
    for h in &headers {
        write!(out, "{h:>width$}").unwrap();
    }
    out.push('\n');
    let parties: BTreeSet<usize> = runs
        .iter()
        .flat_map(|r| r.by_party.keys().copied())
        .collect();
    for party in parties {
        write!(out, "{:<8}", format!("Party {party}")).unwrap();
        for r in runs {
            match r.by_party.get(&party) {
                Some(v) => write!(out, "{v:>width$.4}").unwrap(),
                None => write!(out, "{:>width$}", "-").unwrap(),
            }
        }
        out.push('\n');
    }
    write!(out, "{:<8}", "mean").unwrap();
    for r in runs {
        write!(out, "{:>width$.4}", r.mean()).unwrap();
    }
    out.push('\n');
    out
}

pub fn cmd_report(csvs: &[PathBuf], out_dir: &Path) -> anyhow::Result<()> {
    let mut runs = Vec::new();
    for path in csvs {
        let history = MetricsHistory::read_csv_file(path)?;
        runs.push(FinalAccuracy::from_history(run_label(path), &history)?);
    }
    let text = render(&runs);
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    std::fs::write(out_dir.join(SUMMARY_FILE), &text)?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(label: &str, vals: &[(usize, f64)]) -> FinalAccuracy {
        FinalAccuracy {
            label: label.into(),
            round: 9,
            by_party: vals.iter().copied().collect(),
        }
    }

    #[test]
    fn labels_prefer_directory_for_default_file_name() {
        assert_eq!(run_label(Path::new("out/fedplus/metrics.csv")), "fedplus");
        assert_eq!(run_label(Path::new("out/distributed.csv")), "distributed");
    }

    #[test]
    fn comparison_has_one_column_per_run() {
        let text = render(&[
            run("distributed", &[(0, 0.9), (1, 0.5)]),
            run("fedplus", &[(0, 0.8)]),
        ]);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("Accuracy distributed") && lines[0].contains("Accuracy fedplus"));
        assert!(
            lines[1].starts_with("Party 0")
                && lines[1].contains("0.9000")
                && lines[1].contains("0.8000")
        );
        assert!(lines[2].starts_with("Party 1") && lines[2].trim_end().ends_with('-'));
        assert_eq!(lines.len(), 4);
    }
}
