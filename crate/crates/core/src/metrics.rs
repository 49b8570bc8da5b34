//! Confusion matrices and one-vs-rest detection metrics.
//!
//! Per class `c`, with `M[t][p]` counting true `t` predicted as `p`:
//! `TP = M[c][c]`, `FP = col_c - TP`, `FN = row_c - TP`,
//! `TN = total - TP - FP - FN`. Any ratio with a zero denominator is 0.
//!
//! Macro and weighted averages run over the *active* classes, those that
//! occur among the labels or the predictions. Weighted averages use the
//! class support (row sum) as weight. Micro averages pool TP/FP/FN/TN over
//! the active classes before taking the ratio.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            cells: vec![0; k * k],
        }
    }

    /// Builds from rows, `rows[t][p]`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(Self {
            k,
            cells: rows.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.cells[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.cells[t * self.k..(t + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, p)).sum()
    }

    /// One-vs-rest counts for class `c`.
    pub fn counts(&self, c: usize) -> ClassCounts {
        let tp = self.get(c, c);
        let fp = self.col_sum(c) - tp;
        let fn_ = self.row_sum(c) - tp;
        ClassCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }

    fn active_classes(&self) -> Vec<usize> {
        (0..self.k)
            .filter(|&c| self.row_sum(c) > 0 || self.col_sum(c) > 0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassCounts {
    pub fn value(&self, kind: MetricKind) -> f64 {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        match kind {
            MetricKind::Accuracy => {
                ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn)
            }
            MetricKind::Precision => precision,
            MetricKind::Recall => recall,
            // 2PR/(P+R) in count form, which keeps micro F1 bit-equal to accuracy
            MetricKind::F1 => ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            MetricKind::Fpr => ratio(self.fp, self.fp + self.tn),
        }
    }
}

pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= k || t >= k {
            return Err(Error::invalid(format!(
                "class id {} out of range for k = {k}",
                p.max(t)
            )));
        }
        cm.cells[t * k + p] += 1;
    }
    Ok(cm)
}

/// `trace / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::EmptyInput("confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / cm.total() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Precision,
    Recall,
    F1,
    Fpr,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Accuracy,
        MetricKind::Precision,
        MetricKind::Recall,
        MetricKind::F1,
        MetricKind::Fpr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Precision => "precision",
            MetricKind::Recall => "recall",
            MetricKind::F1 => "f1",
            MetricKind::Fpr => "fpr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Micro,
    Macro,
    Weighted,
    None,
}

impl Averaging {
    pub const AVERAGED: [Averaging; 3] = [Averaging::Micro, Averaging::Macro, Averaging::Weighted];

    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Micro => "micro",
            Averaging::Macro => "macro",
            Averaging::Weighted => "weighted",
            Averaging::None => "none",
        }
    }
}

macro_rules! display_from_str {
    ($ty:ty, $($variant:expr),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                [$($variant),+]
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::invalid(format!("unknown {} `{s}`", stringify!($ty))))
            }
        }
    };
}

display_from_str!(
    MetricKind,
    MetricKind::Accuracy,
    MetricKind::Precision,
    MetricKind::Recall,
    MetricKind::F1,
    MetricKind::Fpr
);
display_from_str!(
    Averaging,
    Averaging::Micro,
    Averaging::Macro,
    Averaging::Weighted,
    Averaging::None
);

/// Per-class one-vs-rest values of `kind`, for every class `0..k`.
pub fn per_class(cm: &ConfusionMatrix, kind: MetricKind) -> Vec<f64> {
    (0..cm.k()).map(|c| cm.counts(c).value(kind)).collect()
}

/// Metric value under the given averaging.
///
/// `Averaging::None` is only meaningful for accuracy (`trace / total`); for
/// the other metrics it falls back to the weighted average.
pub fn metric(cm: &ConfusionMatrix, kind: MetricKind, averaging: Averaging) -> f64 {
    if cm.total() == 0 {
        return 0.0;
    }
    let active = cm.active_classes();
    match averaging {
        Averaging::None if kind == MetricKind::Accuracy => cm.trace() as f64 / cm.total() as f64,
        Averaging::Micro => {
            let pooled = active.iter().fold(ClassCounts::default(), |acc, &c| {
                let x = cm.counts(c);
                ClassCounts {
                    tp: acc.tp + x.tp,
                    fp: acc.fp + x.fp,
                    fn_: acc.fn_ + x.fn_,
                    tn: acc.tn + x.tn,
                }
            });
            pooled.value(kind)
        }
        Averaging::Macro => {
            let sum: f64 = active.iter().map(|&c| cm.counts(c).value(kind)).sum();
            sum / active.len() as f64
        }
        Averaging::Weighted | Averaging::None => {
            let total = cm.total() as f64;
            active
                .iter()
                .map(|&c| cm.row_sum(c) as f64 / total * cm.counts(c).value(kind))
                .sum()
        }
    }
}

/// One row of the metrics history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub round: usize,
    pub party_id: usize,
    pub metric: MetricKind,
    pub averaging: Averaging,
    pub value: f64,
}

/// `(metric, averaging)` pairs emitted for a requested set of metrics:
/// accuracy once (`none`), every other metric under micro, macro and
/// weighted averaging.
pub fn emitted_pairs(kinds: &[MetricKind]) -> Vec<(MetricKind, Averaging)> {
    let mut out = Vec::new();
    for &k in kinds {
        if k == MetricKind::Accuracy {
            out.push((k, Averaging::None));
        } else {
            out.extend(Averaging::AVERAGED.iter().map(|&a| (k, a)));
        }
    }
    out
}

pub fn evaluate(
    cm: &ConfusionMatrix,
    round: usize,
    party_id: usize,
    kinds: &[MetricKind],
) -> Vec<MetricRecord> {
    emitted_pairs(kinds)
        .into_iter()
        .map(|(metric, averaging)| MetricRecord {
            round,
            party_id,
            metric,
            averaging,
            value: self::metric(cm, metric, averaging),
        })
        .collect()
}

pub const HISTORY_HEADER: &str = "round,party_id,metric,averaging,value";

/// The experiment's output of record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsHistory {
    pub records: Vec<MetricRecord>,
}

impl MetricsHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, recs: impl IntoIterator<Item = MetricRecord>) {
        self.records.extend(recs);
    }

    pub fn select(
        &self,
        metric: MetricKind,
        averaging: Averaging,
    ) -> impl Iterator<Item = &MetricRecord> + '_ {
        self.records
            .iter()
            .filter(move |r| r.metric == metric && r.averaging == averaging)
    }

    pub fn last_round(&self) -> Option<usize> {
        self.records.iter().map(|r| r.round).max()
    }

    /// Mean over parties of `metric` at `round`.
    pub fn party_mean(
        &self,
        round: usize,
        metric: MetricKind,
        averaging: Averaging,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .select(metric, averaging)
            .filter(|r| r.round == round)
            .map(|r| r.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// CSV with a 6-decimal fixed-point value column.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{:.6}",
                r.round, r.party_id, r.metric, r.averaging, r.value
            )?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn parse_csv(text: &str, location: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, col: usize, msg: String| Error::Malformed {
            location: format!("{location}:{} column {}", line + 1, col + 1),
            message: msg,
        };
        match lines.next() {
            Some((_, h)) if h.trim() == HISTORY_HEADER => {}
            Some((i, h)) => {
                return Err(bad(
                    i,
                    0,
                    format!("expected header `{HISTORY_HEADER}`, found `{h}`"),
                ))
            }
            None => return Err(Error::EmptyInput(format!("{location}: no metric rows"))),
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(bad(
                    i,
                    cols.len().min(4),
                    format!("expected 5 fields, found {}", cols.len()),
                ));
            }
            let num = |c: usize| {
                cols[c]
                    .parse::<usize>()
                    .map_err(|_| bad(i, c, format!("`{}` is not an integer", cols[c])))
            };
            let record = MetricRecord {
                round: num(0)?,
                party_id: num(1)?,
                metric: cols[2]
                    .parse()
                    .map_err(|e: Error| bad(i, 2, e.to_string()))?,
                averaging: cols[3]
                    .parse()
                    .map_err(|e: Error| bad(i, 3, e.to_string()))?,
                value: cols[4]
                    .parse()
                    .map_err(|_| bad(i, 4, format!("`{}` is not a number", cols[4])))?,
            };
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::EmptyInput(format!("{location}: no metric rows")));
        }
        Ok(Self { records })
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse_csv(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_count() {
        let cm = confusion_matrix(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 2]]).unwrap()
        );
        assert_eq!(accuracy(&cm).unwrap(), 0.75);
    }

    #[test]
    fn diagonal_when_perfect() {
        let y = [0, 2, 1, 2, 2, 0];
        let cm = confusion_matrix(&y, &y, 4).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                if t != p {
                    assert_eq!(cm.get(t, p), 0);
                }
            }
        }
        for avg in Averaging::AVERAGED {
            assert_eq!(metric(&cm, MetricKind::F1, avg), 1.0);
            assert_eq!(metric(&cm, MetricKind::Fpr, avg), 0.0);
            assert_eq!(metric(&cm, MetricKind::Accuracy, avg), 1.0);
        }
        assert_eq!(metric(&cm, MetricKind::Accuracy, Averaging::None), 1.0);
    }

    #[test]
    fn input_errors() {
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
        assert!(confusion_matrix(&[2], &[0], 2).is_err());
        assert!(accuracy(&ConfusionMatrix::zeros(3)).is_err());
    }

    #[test]
    fn uniform_matrix_accuracy() {
        let cm = ConfusionMatrix::from_rows(&[vec![4; 3], vec![4; 3], vec![4; 3]]).unwrap();
        assert!((accuracy(&cm).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn swapped_labels_are_degenerate() {
        let cm = confusion_matrix(&[1, 1, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        for avg in Averaging::AVERAGED {
            assert_eq!(metric(&cm, MetricKind::Precision, avg), 0.0);
            assert_eq!(metric(&cm, MetricKind::Recall, avg), 0.0);
            assert_eq!(metric(&cm, MetricKind::F1, avg), 0.0);
            assert_eq!(metric(&cm, MetricKind::Fpr, avg), 1.0);
        }
    }

    #[test]
    fn history_csv_round_trip() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 1], vec![2, 7]]).unwrap();
        let mut h = MetricsHistory::default();
        h.extend(evaluate(&cm, 0, 3, &MetricKind::ALL));
        assert_eq!(h.len(), 13);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("round,party_id,metric,averaging,value\n0,3,accuracy,none,0.800000\n")
        );
        let back = MetricsHistory::parse_csv(&text, "mem").unwrap();
        assert_eq!(back.len(), 13);
        for (a, b) in back.records.iter().zip(&h.records) {
            assert!((a.value - b.value).abs() <= 5e-7);
            assert_eq!(
                (a.round, a.party_id, a.metric, a.averaging),
                (b.round, b.party_id, b.metric, b.averaging)
            );
        }
    }

    #[test]
    fn history_csv_errors() {
        let e = MetricsHistory::parse_csv("round,party_id,metric,averaging,value\n", "x.csv")
            .unwrap_err();
        assert!(e.to_string().contains("no metric rows"));
        let e = MetricsHistory::parse_csv(
            "round,party_id,metric,averaging,value\n0,1,f2,none,0.5\n",
            "x.csv",
        )
        .unwrap_err();
        assert!(e.to_string().contains("x.csv:2 column 3"), "{e}");
        assert!(MetricsHistory::parse_csv("a,b\n", "x.csv").is_err());
    }
}
