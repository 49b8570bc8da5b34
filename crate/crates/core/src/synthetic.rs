//! Seeded synthetic flow data shaped like the CIC-ToN-IoT scenarios.
//!
//! Class `c` is drawn from an isotropic Gaussian centred on the anchor
//! `(s / sqrt 2) * e_c`, so any two anchors are exactly `s` apart.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FlowRecord, FlowTable};
use crate::partition::{PartyDataset, ScenarioKind, ScenarioPartition};
use crate::seed;

/// Class universe of the CIC-ToN-IoT setting, in table column order.
pub const TON_IOT_CLASSES: [&str; 9] = [
    "Benign",
    "XSS",
    "Injection",
    "Password",
    "Scanning",
    "MITM",
    "DDoS",
    "DoS",
    "Backdoor",
];

/// Per-party class counts of the basic scenario (10 busiest destination IPs).
pub const TON_IOT_BASIC: [[u64; 9]; 10] = [
    [42527, 474520, 140519, 140519, 13419, 0, 0, 0, 0],
    [763516, 2, 0, 0, 0, 0, 0, 0, 0],
    [116540, 594627, 16271, 1138, 10923, 253, 202, 145, 18],
    [519804, 2, 0, 0, 0, 0, 0, 0, 0],
    [2794, 307962, 66812, 38009, 8954, 0, 0, 0, 0],
    [10537, 206036, 44043, 67431, 2909, 0, 0, 0, 0],
    [3587, 209637, 9868, 0, 0, 0, 0, 0, 0],
    [217737, 0, 0, 0, 0, 0, 0, 0, 0],
    [8981, 177910, 0, 0, 0, 0, 0, 0, 0],
    [8551, 177381, 0, 0, 0, 0, 0, 0, 0],
];

/// Per-class quota every party receives in the balanced scenario.
pub const TON_IOT_BALANCED_QUOTAS: [u64; 9] = [10000, 10000, 10000, 10000, 3500, 20, 18, 10, 1];

/// Mixed-scenario parties (basic ids) and their class counts.
pub const TON_IOT_MIXED: [(usize, [u64; 9]); 4] = [
    (0, [42527, 50000, 50000, 50000, 13419, 0, 0, 0, 0]),
    (2, [10000, 10000, 10000, 1138, 10923, 253, 202, 145, 18]),
    (4, [2794, 20000, 20000, 20000, 8954, 0, 0, 0, 0]),
    (5, [10537, 20000, 20000, 20000, 2909, 0, 0, 0, 0]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub class_names: Vec<String>,
    pub d: usize,
    /// `counts[party][class]`.
    pub counts: Vec<Vec<u64>>,
    /// Distance between any two class anchors.
    pub separability: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub kind: ScenarioKind,
}

impl SyntheticProfile {
    /// Profile over the nine ToN-IoT classes with `d = 10`, unit noise and
    /// separability 5.
    pub fn new(counts: Vec<Vec<u64>>) -> Self {
        Self {
            class_names: TON_IOT_CLASSES.iter().map(|s| s.to_string()).collect(),
            d: 10,
            counts,
            separability: 5.0,
            noise_sd: 1.0,
            seed: 0,
            kind: ScenarioKind::Basic,
        }
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 {
            return Err(Error::invalid("a profile needs at least 2 classes"));
        }
        if self.d < k {
            return Err(Error::invalid(format!(
                "feature dimension {} is smaller than the class count {k}",
                self.d
            )));
        }
        if self.counts.is_empty() {
            return Err(Error::invalid("a profile needs at least one party"));
        }
        for (p, row) in self.counts.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!(
                    "party {p} has {} counts, expected {k}",
                    row.len()
                )));
            }
            if row.iter().all(|&c| c == 0) {
                return Err(Error::invalid(format!("party {p} has no samples")));
            }
        }
        if !self
            .counts
            .iter()
            .any(|row| row.iter().filter(|&&c| c > 0).count() >= 2)
        {
            return Err(Error::invalid(
                "at least one party must hold two or more classes",
            ));
        }
        if !(self.separability > 0.0 && self.noise_sd > 0.0) {
            return Err(Error::invalid("separability and noise_sd must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_separability(mut self, separability: f64, noise_sd: f64) -> Self {
        self.separability = separability;
        self.noise_sd = noise_sd;
        self
    }

    pub fn with_dim(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    pub fn with_kind(mut self, kind: ScenarioKind) -> Self {
        self.kind = kind;
        self
    }

    fn feature_names(&self) -> Vec<String> {
        (0..self.d).map(|j| format!("f{j}")).collect()
    }
}

/// Multiplies every count by `factor`, rounding up so that every class
/// present in a party stays present.
pub fn scale_counts<const K: usize>(counts: &[[u64; K]], factor: f64) -> Result<Vec<Vec<u64>>> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!(
            "scale factor must lie in (0, 1], got {factor}"
        )));
    }
    Ok(counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| {
                    if c == 0 {
                        0
                    } else {
                        // tolerance keeps exact products like 10000 * 1e-3 at 10
                        ((c as f64 * factor - 1e-9).ceil() as u64).max(1)
                    }
                })
                .collect()
        })
        .collect())
}

/// [`scale_counts`] wrapped into a default [`SyntheticProfile`].
pub fn scale_profile<const K: usize>(counts: &[[u64; K]], factor: f64) -> Result<SyntheticProfile> {
    let scaled = scale_counts(counts, factor)?;
    let mut profile = SyntheticProfile::new(scaled);
    if K != TON_IOT_CLASSES.len() {
        profile.class_names = (0..K).map(|c| format!("class{c}")).collect();
        profile.d = profile.d.max(K);
    }
    Ok(profile)
}

/// Draws the scenario. Party `p` uses the seed `profile.seed ^ p`, so parties
/// can be generated independently.
pub fn generate(profile: &SyntheticProfile) -> Result<ScenarioPartition> {
    profile.validate()?;
    let k = profile.k();
    let anchor = profile.separability / std::f64::consts::SQRT_2;
    let noise = Normal::new(0.0, profile.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let parties = profile
        .counts
        .iter()
        .enumerate()
        .map(|(p, row)| {
            let mut rng = seed::rng(seed::party_seed(profile.seed, p));
            let key = format!("party_{p}");
            let mut records = Vec::with_capacity(row.iter().sum::<u64>() as usize);
            for (c, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    let mut features: Vec<f64> =
                        (0..profile.d).map(|_| noise.sample(&mut rng)).collect();
                    features[c] += anchor;
                    records.push(FlowRecord {
                        features,
                        label: c,
                        key: key.clone(),
                    });
                }
            }
            let table = FlowTable::new(
                records,
                profile.class_names.clone(),
                profile.feature_names(),
            )?;
            PartyDataset::new(p, table)
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(parties.len(), profile.counts.len());
    debug_assert!(parties.iter().all(|p| p.table.k() == k));
    Ok(ScenarioPartition {
        kind: profile.kind,
        parties,
        key_column: "dst_ip".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(counts: Vec<Vec<u64>>) -> SyntheticProfile {
        SyntheticProfile {
            class_names: vec!["A".into(), "B".into()],
            d: 3,
            counts,
            separability: 4.0,
            noise_sd: 0.5,
            seed: 9,
            kind: ScenarioKind::Basic,
        }
    }

    #[test]
    fn exact_counts() {
        let s = generate(&two_class(vec![vec![10, 10]])).unwrap();
        assert_eq!(s.parties[0].histogram.counts(), &[10, 10]);
        assert_eq!(s.parties[0].table.records()[0].key, "party_0");
    }

    #[test]
    fn deterministic() {
        let p = two_class(vec![vec![5, 3], vec![0, 4]]);
        assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
        assert_ne!(
            generate(&p).unwrap(),
            generate(&p.clone().with_seed(10)).unwrap()
        );
    }

    #[test]
    fn scaling_party0() {
        let scaled = scale_counts(&TON_IOT_BASIC[..1], 1e-3).unwrap();
        assert_eq!(scaled[0][..5], [43, 475, 141, 141, 14]);
        let same = scale_counts(&TON_IOT_BASIC, 1.0).unwrap();
        assert_eq!(
            same,
            TON_IOT_BASIC.iter().map(|r| r.to_vec()).collect::<Vec<_>>()
        );
        assert!(scale_counts(&TON_IOT_BASIC, 0.0).is_err());
        assert!(scale_counts(&TON_IOT_BASIC, 1.5).is_err());
    }

    #[test]
    fn scaling_keeps_presence() {
        for factor in [1e-6, 1e-3, 0.37] {
            let scaled = scale_counts(&TON_IOT_BASIC, factor).unwrap();
            for (a, b) in TON_IOT_BASIC.iter().zip(&scaled) {
                for (x, y) in a.iter().zip(b) {
                    assert_eq!(*x > 0, *y > 0);
                }
            }
        }
    }

    #[test]
    fn invalid_profiles() {
        assert!(generate(&two_class(vec![vec![10, 0]])).is_err());
        assert!(generate(&two_class(vec![vec![1, 1, 1]])).is_err());
        let mut p = two_class(vec![vec![1, 1]]);
        p.d = 1;
        assert!(generate(&p).is_err());
    }

    #[test]
    fn anchors_are_separated() {
        let p = two_class(vec![vec![400, 400]]).with_separability(6.0, 0.1);
        let s = generate(&p).unwrap();
        let mean = |label: usize| {
            let rows: Vec<&FlowRecord> = s.parties[0]
                .table
                .records()
                .iter()
                .filter(|r| r.label == label)
                .collect();
            (0..3)
                .map(|j| rows.iter().map(|r| r.features[j]).sum::<f64>() / rows.len() as f64)
                .collect::<Vec<_>>()
        };
        let (a, b) = (mean(0), mean(1));
        let dist = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((dist - 6.0).abs() < 0.05, "{dist}");
    }
}
