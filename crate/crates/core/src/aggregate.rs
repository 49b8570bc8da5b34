//! FedAvg and Fed+ aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// A party's contribution to one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdate {
    pub party_id: usize,
    pub params: ModelParams,
    /// Local training-set size, the FedAvg weight.
    pub sample_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentralFn {
    #[default]
    WeightedMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceFn {
    #[default]
    SquaredEuclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedPlusConfig {
    /// Pull strength towards the central point, in `[0, 1]`.
    pub alpha: f64,
    /// Per-party overrides of `alpha`.
    #[serde(default)]
    pub party_alpha: BTreeMap<usize, f64>,
    #[serde(default)]
    pub central_fn: CentralFn,
    #[serde(default)]
    pub distance_fn: DistanceFn,
}

impl Default for FedPlusConfig {
    fn default() -> Self {
        Self::uniform(0.5)
    }
}

impl FedPlusConfig {
    pub fn uniform(alpha: f64) -> Self {
        Self {
            alpha,
            party_alpha: BTreeMap::new(),
            central_fn: CentralFn::WeightedMean,
            distance_fn: DistanceFn::SquaredEuclidean,
        }
    }

    pub fn alpha_for(&self, party_id: usize) -> f64 {
        self.party_alpha
            .get(&party_id)
            .copied()
            .unwrap_or(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        for (who, a) in std::iter::once((None, self.alpha))
            .chain(self.party_alpha.iter().map(|(p, a)| (Some(*p), *a)))
        {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(match who {
                    Some(p) => format!("alpha for party {p} must lie in [0, 1], got {a}"),
                    None => format!("alpha must lie in [0, 1], got {a}"),
                }));
            }
        }
        Ok(())
    }
}

fn sorted_by_party(updates: &[RoundUpdate]) -> Result<Vec<&RoundUpdate>> {
    let first = updates.first().ok_or(Error::NoUpdates)?;
    let mut sorted: Vec<&RoundUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.party_id);
    for u in &sorted {
        first.params.same_shape(&u.params)?;
        if u.sample_count == 0 {
            return Err(Error::Party {
                party: u.party_id,
                message: "update has zero samples".into(),
            });
        }
    }
    Ok(sorted)
}

/// Sample-size weighted average `sum_k (d_k / D) w^k`, accumulated in
/// ascending party order.
pub fn fedavg(updates: &[RoundUpdate]) -> Result<ModelParams> {
    let sorted = sorted_by_party(updates)?;
    let total: u64 = sorted.iter().map(|u| u.sample_count).sum();
    let mut out = ModelParams::zeros(sorted[0].params.k(), sorted[0].params.d());
    for u in sorted {
        let share = u.sample_count as f64 / total as f64;
        for (o, v) in out.iter_flat_mut().zip(u.params.iter_flat()) {
            *o += share * v;
        }
    }
    Ok(out)
}

/// Central point of the round's updates.
pub fn fedplus_central(updates: &[RoundUpdate], cfg: &FedPlusConfig) -> Result<ModelParams> {
    match cfg.central_fn {
        CentralFn::WeightedMean => fedavg(updates),
    }
}

/// Closed-form proximal step for the squared-Euclidean penalty:
/// `(1 - alpha) * local + alpha * central`.
pub fn fedplus_fuse(local: &ModelParams, central: &ModelParams, alpha: f64) -> Result<ModelParams> {
    local.same_shape(central)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let mut out = local.clone();
    for (o, c) in out.iter_flat_mut().zip(central.iter_flat()) {
        *o = (1.0 - alpha) * *o + alpha * c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> ModelParams {
        ModelParams::from_parts(2, 1, vec![w, 0.0], vec![0.0, 0.0]).unwrap()
    }

    fn upd(id: usize, p: ModelParams, n: u64) -> RoundUpdate {
        RoundUpdate {
            party_id: id,
            params: p,
            sample_count: n,
        }
    }

    #[test]
    fn weighted_two_parties() {
        let out = fedavg(&[upd(0, scalar(0.0), 1), upd(1, scalar(4.0), 3)]).unwrap();
        assert_eq!(out.weights()[0], 3.0);
    }

    #[test]
    fn identical_updates_are_fixed_points() {
        let p = ModelParams::from_parts(2, 2, vec![0.1, 0.2, -0.3, 0.4], vec![0.5, -0.6]).unwrap();
        let ups: Vec<_> = (0..4).map(|i| upd(i, p.clone(), 7 + i as u64)).collect();
        let out = fedavg(&ups).unwrap();
        for (a, b) in out.iter_flat().zip(p.iter_flat()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(
            fedplus_central(&ups[..1], &FedPlusConfig::default()).unwrap(),
            p
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(fedavg(&[]), Err(Error::NoUpdates)));
        let bad = ModelParams::zeros(3, 1);
        assert!(matches!(
            fedavg(&[upd(0, scalar(1.0), 1), upd(1, bad.clone(), 1)]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(fedplus_fuse(&scalar(1.0), &bad, 0.5).is_err());
        assert!(fedplus_fuse(&scalar(1.0), &scalar(2.0), 1.5).is_err());
    }

    #[test]
    fn fuse_endpoints_and_midpoint() {
        let local = ModelParams::from_parts(2, 1, vec![2.0, 0.0], vec![0.0, 0.0]).unwrap();
        let central = ModelParams::from_parts(2, 1, vec![0.0, 4.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(fedplus_fuse(&local, &central, 0.0).unwrap(), local);
        assert_eq!(fedplus_fuse(&local, &central, 1.0).unwrap(), central);
        assert_eq!(
            fedplus_fuse(&local, &central, 0.5).unwrap().weights(),
            &[1.0, 2.0]
        );
    }

    #[test]
    fn alpha_validation() {
        let mut cfg = FedPlusConfig::uniform(0.3);
        assert!(cfg.validate().is_ok());
        cfg.party_alpha.insert(4, 1.2);
        assert!(cfg.validate().unwrap_err().to_string().contains("party 4"));
        assert_eq!(cfg.alpha_for(0), 0.3);
        assert_eq!(cfg.alpha_for(4), 1.2);
    }
}
