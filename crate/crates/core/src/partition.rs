//! Class-balance measurement and construction of federated scenarios.
//!
//! Three builders are provided:
//!
//! * [`build_basic`]: one party per partition key (destination IP), keeping
//!   the `top_n` busiest keys.
//! * [`build_balanced`]: disjoint parties that all receive the same per-class
//!   quota, sampled without replacement from a pooled table.
//! * [`build_mixed`]: keeps the basic parties whose entropy exceeds a
//!   threshold and trims their predominant classes until the entropy enters a
//!   target band.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_table_csv, write_table_csv, FlowRecord, FlowTable};
use crate::seed;

/// Per-class sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    counts: Vec<u64>,
}

impl ClassHistogram {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn of_table(table: &FlowTable) -> Self {
        Self::new(table.class_counts())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }
}

/// Normalized Shannon entropy of a class histogram over a universe of `k`
/// classes: `-sum(p_i ln p_i) / ln k`, with `0 ln 0 = 0`.
///
/// 0 means a single class, 1 means perfectly uniform over all `k` classes.
pub fn shannon_entropy(hist: &ClassHistogram, k: usize) -> Result<f64> {
    entropy_of_counts(hist.counts(), k)
}

pub(crate) fn entropy_of_counts(counts: &[u64], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::invalid(format!("entropy needs k >= 2, got {k}")));
    }
    if counts.len() > k {
        return Err(Error::invalid(format!(
            "histogram has {} classes but k = {k}",
            counts.len()
        )));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyHistogram);
    }
    let n = n as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok((h / (k as f64).ln()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Basic,
    Balanced,
    Mixed,
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioKind::Basic => "basic",
            ScenarioKind::Balanced => "balanced",
            ScenarioKind::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartyDataset {
    pub party_id: usize,
    pub table: FlowTable,
    pub histogram: ClassHistogram,
    pub entropy: f64,
}

impl PartyDataset {
    pub fn new(party_id: usize, table: FlowTable) -> Result<Self> {
        let histogram = ClassHistogram::of_table(&table);
        let entropy = shannon_entropy(&histogram, table.k())?;
        Ok(Self {
            party_id,
            table,
            histogram,
            entropy,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPartition {
    pub kind: ScenarioKind,
    pub parties: Vec<PartyDataset>,
    /// Header name of the partition-key column when persisted.
    pub key_column: String,
}

impl ScenarioPartition {
    pub fn class_names(&self) -> &[String] {
        self.parties
            .first()
            .map(|p| p.table.class_names())
            .unwrap_or(&[])
    }

    pub fn feature_names(&self) -> &[String] {
        self.parties
            .first()
            .map(|p| p.table.feature_names())
            .unwrap_or(&[])
    }

    pub fn party(&self, id: usize) -> Option<&PartyDataset> {
        self.parties.iter().find(|p| p.party_id == id)
    }

    pub fn party_ids(&self) -> Vec<usize> {
        self.parties.iter().map(|p| p.party_id).collect()
    }

    /// All party records concatenated in party order.
    pub fn pooled(&self) -> Result<FlowTable> {
        FlowTable::concat(self.parties.iter().map(|p| &p.table))
    }

    pub fn manifest(&self) -> PartitionManifest {
        PartitionManifest {
            kind: self.kind,
            key_column: self.key_column.clone(),
            class_names: self.class_names().to_vec(),
            feature_names: self.feature_names().to_vec(),
            prng: seed::PRNG_NAME.to_string(),
            parties: self
                .parties
                .iter()
                .map(|p| PartyManifest {
                    party_id: p.party_id,
                    file: party_file_name(p.party_id),
                    size: p.len(),
                    class_counts: p.histogram.counts().to_vec(),
                    entropy: round5(p.entropy),
                })
                .collect(),
        }
    }

    /// Writes `party_<id>.csv` for every party plus `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<PartitionManifest> {
        fs::create_dir_all(dir)?;
        for p in &self.parties {
            write_table_csv(
                &p.table,
                &self.key_column,
                &dir.join(party_file_name(p.party_id)),
            )?;
        }
        let manifest = self.manifest();
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(manifest)
    }

    /// Loads a directory written by [`ScenarioPartition::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let manifest: PartitionManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let mut parties = Vec::with_capacity(manifest.parties.len());
        for pm in &manifest.parties {
            let table = read_table_csv(
                &dir.join(&pm.file),
                &manifest.key_column,
                &manifest.class_names,
            )?;
            let party = PartyDataset::new(pm.party_id, table)?;
            if party.histogram.counts() != pm.class_counts.as_slice() {
                return Err(Error::Malformed {
                    location: dir.join(&pm.file).display().to_string(),
                    message: "class counts disagree with manifest".into(),
                });
            }
            parties.push(party);
        }
        Ok(Self {
            kind: manifest.kind,
            parties,
            key_column: manifest.key_column,
        })
    }

    /// Fixed-width rendering of the per-party class counts and entropies.
    pub fn entropy_table(&self) -> String {
        let classes = self.class_names();
        let mut out = format!("{:<10}{:>7}{:>10}", "Scenario", "Party", "Total");
        for c in classes {
            out += &format!("{:>11}", truncate(c, 10));
        }
        out += &format!("{:>10}\n", "Entropy");
        for p in &self.parties {
            out += &format!(
                "{:<10}{:>7}{:>10}",
                self.kind.to_string(),
                p.party_id,
                p.len()
            );
            for &c in p.histogram.counts() {
                let cell = if c == 0 {
                    "-".to_string()
                } else {
                    c.to_string()
                };
                out += &format!("{cell:>11}");
            }
            out += &format!("{:>10.5}\n", p.entropy);
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn round5(x: f64) -> f64 {
    (x * 1e5).round() / 1e5
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn party_file_name(id: usize) -> String {
    format!("party_{id}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyManifest {
    pub party_id: usize,
    pub file: String,
    pub size: usize,
    pub class_counts: Vec<u64>,
    /// Rounded to 5 decimals.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub kind: ScenarioKind,
    pub key_column: String,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub prng: String,
    pub parties: Vec<PartyManifest>,
}

/// One party per partition key among the `top_n` keys with most records.
/// Parties are numbered by descending size, ties broken by key.
pub fn build_basic(table: &FlowTable, top_n: usize, key_column: &str) -> Result<ScenarioPartition> {
    if top_n == 0 {
        return Err(Error::invalid("top_n must be positive"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.records().iter().enumerate() {
        groups.entry(r.key.as_str()).or_default().push(i);
    }
    if groups.len() < top_n {
        return Err(Error::NotEnoughKeys {
            needed: top_n,
            available: groups.len(),
        });
    }
    let mut ranked: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
    // BTreeMap order is lexicographic; a stable sort keeps it among ties.
    ranked.sort_by_key(|e| std::cmp::Reverse(e.1.len()));
    let parties = ranked
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(id, (_, idx))| {
            let records = idx.iter().map(|&i| table.records()[i].clone()).collect();
            PartyDataset::new(id, table.with_records(records))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioPartition {
        kind: ScenarioKind::Basic,
        parties,
        key_column: key_column.to_string(),
    })
}

/// `num_parties` disjoint parties, each holding exactly `quotas[c]` records of
/// class `c`, drawn without replacement from `table`.
pub fn build_balanced(
    table: &FlowTable,
    num_parties: usize,
    quotas: &[u64],
    seed: u64,
    key_column: &str,
) -> Result<ScenarioPartition> {
    if num_parties == 0 {
        return Err(Error::invalid("num_parties must be positive"));
    }
    if quotas.len() != table.k() {
        return Err(Error::DimensionMismatch {
            expected: table.k(),
            actual: quotas.len(),
        });
    }
    if quotas.iter().all(|&q| q == 0) {
        return Err(Error::invalid("all quotas are zero"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); table.k()];
    for (i, r) in table.records().iter().enumerate() {
        by_class[r.label].push(i);
    }
    for (c, (idx, &q)) in by_class.iter().zip(quotas).enumerate() {
        let needed = q as usize * num_parties;
        if idx.len() < needed {
            return Err(Error::InsufficientSamples {
                class: table.class_names()[c].clone(),
                needed,
                available: idx.len(),
            });
        }
    }
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); num_parties];
    for (c, (mut idx, &q)) in by_class.into_iter().zip(quotas).enumerate() {
        let q = q as usize;
        if q == 0 {
            continue;
        }
        let mut rng = seed::rng(seed::class_seed(seed, c));
        idx.shuffle(&mut rng);
        for (p, chunk) in idx.chunks(q).take(num_parties).enumerate() {
            assigned[p].extend_from_slice(chunk);
        }
    }
    let parties = assigned
        .into_iter()
        .enumerate()
        .map(|(id, mut idx)| {
            idx.sort_unstable();
            let records = idx.iter().map(|&i| table.records()[i].clone()).collect();
            PartyDataset::new(id, table.with_records(records))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioPartition {
        kind: ScenarioKind::Balanced,
        parties,
        key_column: key_column.to_string(),
    })
}

/// Parameters of the mixed-scenario construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedConfig {
    /// Parties with entropy at or below this are dropped.
    pub entropy_threshold: f64,
    /// Target entropy band `[low, high]`.
    pub band: (f64, f64),
    /// Optional per-party per-class maxima, applied before trimming.
    /// Keyed by party id; each vector has one entry per class.
    #[serde(default)]
    pub caps: BTreeMap<usize, Vec<Option<u64>>>,
    pub seed: u64,
}

/// Outcome of the count-level trimming for one party.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimPlan {
    pub counts: Vec<u64>,
    pub entropy: f64,
    pub steps: usize,
}

/// Decides how many records of each class a retained party keeps.
///
/// Caps are applied first. Then, while the entropy is below `band.0`, the
/// strictly largest class loses `max(1, 1% of the original party size)`
/// records per step, never dropping below the runner-up class in a single
/// step. A step that would overshoot `band.1` is retried with half the size.
/// Parties that enter at or above `band.0` are returned unmodified.
pub fn plan_trim(
    party: usize,
    counts: &[u64],
    k: usize,
    band: (f64, f64),
    caps: Option<&[Option<u64>]>,
) -> Result<TrimPlan> {
    let (low, high) = band;
    if !(low < high) {
        return Err(Error::invalid(format!("band [{low}, {high}] is empty")));
    }
    let mut counts = counts.to_vec();
    let original: u64 = counts.iter().sum();
    if let Some(caps) = caps {
        if caps.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: counts.len(),
                actual: caps.len(),
            });
        }
        for (c, cap) in counts.iter_mut().zip(caps) {
            if let Some(cap) = *cap {
                *c = (*c).min(cap);
            }
        }
    }
    let mut h = entropy_of_counts(&counts, k)?;
    let step = (original / 100).max(1);
    let mut steps = 0usize;
    while h < low {
        let (top, largest) = counts
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty histogram");
        let runner_up = counts
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, &c)| c)
            .max()
            .unwrap_or(0);
        if largest <= 1 || (largest == runner_up && counts.iter().all(|&c| c == 0 || c == largest))
        {
            return Err(Error::BandUnreachable {
                party,
                reason: format!(
                    "classes already equal at entropy {h:.5}, below the band floor {low}"
                ),
            });
        }
        let mut s = step.min((largest - runner_up).max(1));
        loop {
            let mut next = counts.clone();
            next[top] -= s;
            let hn = entropy_of_counts(&next, k)?;
            if hn + 1e-12 < h {
                return Err(Error::BandUnreachable {
                    party,
                    reason: format!(
                        "removing {s} from class {top} lowered entropy {h:.6} -> {hn:.6}"
                    ),
                });
            }
            if hn > high {
                if s == 1 {
                    return Err(Error::BandUnreachable {
                        party,
                        reason: format!("a single removal jumps over the band ({h:.6} -> {hn:.6})"),
                    });
                }
                s = (s / 2).max(1);
                continue;
            }
            counts = next;
            h = hn;
            steps += 1;
            break;
        }
    }
    Ok(TrimPlan {
        counts,
        entropy: h,
        steps,
    })
}

/// Mixed scenario: parties of `basic` above the entropy threshold, trimmed
/// into the target band. Which records of a class are removed is seeded
/// per party (`seed ^ party_id`).
pub fn build_mixed(basic: &ScenarioPartition, cfg: &MixedConfig) -> Result<ScenarioPartition> {
    let mut parties = Vec::new();
    for p in &basic.parties {
        if p.entropy <= cfg.entropy_threshold {
            continue;
        }
        let k = p.table.k();
        let plan = plan_trim(
            p.party_id,
            p.histogram.counts(),
            k,
            cfg.band,
            cfg.caps.get(&p.party_id).map(|v| v.as_slice()),
        )?;
        let party_seed = seed::party_seed(cfg.seed, p.party_id);
        let mut keep = vec![false; p.len()];
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, r) in p.table.records().iter().enumerate() {
            by_class[r.label].push(i);
        }
        for (c, mut idx) in by_class.into_iter().enumerate() {
            let mut rng = seed::rng(seed::class_seed(party_seed, c));
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(plan.counts[c] as usize) {
                keep[i] = true;
            }
        }
        let records: Vec<FlowRecord> = p
            .table
            .records()
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect();
        parties.push(PartyDataset::new(
            p.party_id,
            p.table.with_records(records),
        )?);
    }
    Ok(ScenarioPartition {
        kind: ScenarioKind::Mixed,
        parties,
        key_column: basic.key_column.clone(),
    })
}
