//! Round orchestration for federated, distributed and centralized training.
//!
//! A round is: select clients, hand each selected party its starting
//! parameters (the FedAvg broadcast, or its retained model), train locally,
//! then aggregate. FedAvg replaces the global model with the weighted mean.
//! Fed+ computes the same mean as a central point and pulls every selected
//! party's model towards it. Distributed mode skips aggregation. Every party
//! is evaluated on its own held-out split after every round.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{fedavg, fedplus_central, fedplus_fuse, FedPlusConfig, RoundUpdate};
use crate::error::{Error, Result};
use crate::ingest::{split_train_test, FlowTable, Normalizer};
use crate::metrics::{confusion_matrix, evaluate, MetricKind, MetricRecord, MetricsHistory};
use crate::model::{predict_table, sgd_epoch_seeded, ModelParams, TrainConfig};
use crate::partition::ScenarioPartition;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FederatedFedavg,
    FederatedFedplus,
    Distributed,
    Centralized,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::FederatedFedavg => "federated_fedavg",
            Mode::FederatedFedplus => "federated_fedplus",
            Mode::Distributed => "distributed",
            Mode::Centralized => "centralized",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "parties")]
pub enum Selection {
    #[default]
    All,
    FixedSubset(Vec<usize>),
}

/// Where min-max bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// One normalizer fitted on the union of all training splits.
    #[default]
    Global,
    /// Each party fits its own.
    PerParty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub rounds: usize,
    pub train: TrainConfig,
    /// Present exactly when `mode` is `FederatedFedplus`.
    pub fedplus: Option<FedPlusConfig>,
    pub selection: Selection,
    pub master_seed: u64,
    pub test_fraction: f64,
    pub normalization: Normalization,
    pub metrics: Vec<MetricKind>,
    /// Train selected parties on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, rounds: usize) -> Self {
        Self {
            mode,
            rounds,
            train: TrainConfig::default(),
            fedplus: (mode == Mode::FederatedFedplus).then(FedPlusConfig::default),
            selection: Selection::All,
            master_seed: 0,
            test_fraction: 0.2,
            normalization: Normalization::Global,
            metrics: MetricKind::ALL.to_vec(),
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        self.train.validate()?;
        match (&self.fedplus, self.mode) {
            (Some(fp), Mode::FederatedFedplus) => fp.validate()?,
            (None, Mode::FederatedFedplus) => {
                return Err(Error::invalid(
                    "federated_fedplus needs a Fed+ configuration",
                ))
            }
            (Some(_), mode) => {
                return Err(Error::invalid(format!(
                    "a Fed+ configuration is not valid for mode {mode}"
                )))
            }
            (None, _) => {}
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.metrics.is_empty() {
            return Err(Error::invalid("at least one metric must be requested"));
        }
        Ok(())
    }
}

/// Party ids taking part in `round`, ascending.
pub fn select_clients(
    _round: usize,
    policy: &Selection,
    party_ids: &[usize],
) -> Result<Vec<usize>> {
    if party_ids.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut out = match policy {
        Selection::All => party_ids.to_vec(),
        Selection::FixedSubset(ids) => {
            if let Some(&bad) = ids.iter().find(|id| !party_ids.contains(id)) {
                return Err(Error::UnknownParty(bad));
            }
            ids.clone()
        }
    };
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(out)
}

/// Raw (unnormalized) train/test split of one party.
#[derive(Debug, Clone, PartialEq)]
pub struct PartySplit {
    pub party_id: usize,
    pub train: FlowTable,
    pub test: FlowTable,
}

/// Splits every party with its seed derived from `master_seed`.
pub fn split_parties(
    scenario: &ScenarioPartition,
    cfg: &ExperimentConfig,
) -> Result<Vec<PartySplit>> {
    scenario
        .parties
        .iter()
        .map(|p| {
            let s = seed::split_seed(seed::party_seed(cfg.master_seed, p.party_id));
            let (train, test) = split_train_test(&p.table, cfg.test_fraction, s)?;
            Ok(PartySplit {
                party_id: p.party_id,
                train,
                test,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartyState {
    pub party_id: usize,
    pub train: FlowTable,
    pub test: FlowTable,
    /// The party's current model. Under FedAvg this mirrors the global model.
    pub params: ModelParams,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    round: usize,
    parties: Vec<PartyState>,
    global: Option<ModelParams>,
    central: Option<ModelParams>,
    pooled: Option<(FlowTable, FlowTable)>,
    normalizers: Vec<(Option<usize>, Normalizer)>,
}

fn normalize(
    splits: Vec<PartySplit>,
    how: Normalization,
) -> Result<(Vec<PartySplit>, Vec<(Option<usize>, Normalizer)>)> {
    match how {
        Normalization::None => Ok((splits, Vec::new())),
        Normalization::Global => {
            let pooled = FlowTable::concat(splits.iter().map(|s| &s.train))?;
            let norm = Normalizer::fit(&pooled)?;
            let splits = splits
                .into_iter()
                .map(|s| {
                    Ok(PartySplit {
                        party_id: s.party_id,
                        train: norm.apply(&s.train)?,
                        test: norm.apply(&s.test)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((splits, vec![(None, norm)]))
        }
        Normalization::PerParty => {
            let mut norms = Vec::new();
            let splits = splits
                .into_iter()
                .map(|s| {
                    let norm = Normalizer::fit(&s.train).map_err(|_| Error::Party {
                        party: s.party_id,
                        message: "empty training split".into(),
                    })?;
                    let out = PartySplit {
                        party_id: s.party_id,
                        train: norm.apply(&s.train)?,
                        test: norm.apply(&s.test)?,
                    };
                    norms.push((Some(s.party_id), norm));
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((splits, norms))
        }
    }
}

/// Runs `epochs_per_round` seeded epochs of local SGD.
fn local_train(
    params: &ModelParams,
    train: &FlowTable,
    cfg: &TrainConfig,
    party_seed: u64,
    round: usize,
) -> Result<ModelParams> {
    let mut p = params.clone();
    for e in 0..cfg.epochs_per_round {
        let s = seed::round_seed(party_seed, round * cfg.epochs_per_round + e);
        p = sgd_epoch_seeded(&p, train, cfg, s)?;
    }
    Ok(p)
}

fn eval_records(
    params: &ModelParams,
    test: &FlowTable,
    round: usize,
    party_id: usize,
    kinds: &[MetricKind],
) -> Result<Vec<MetricRecord>> {
    let preds = predict_table(params, test)?;
    let labels: Vec<usize> = test.records().iter().map(|r| r.label).collect();
    let cm = confusion_matrix(&preds, &labels, params.k())?;
    Ok(evaluate(&cm, round, party_id, kinds))
}

impl FederationState {
    /// Splits the scenario and prepares round 0.
    pub fn new(scenario: &ScenarioPartition, cfg: &ExperimentConfig) -> Result<Self> {
        Self::from_splits(split_parties(scenario, cfg)?, cfg)
    }

    /// Prepares round 0 from raw per-party splits. Normalization is applied
    /// here. All models start at zero.
    pub fn from_splits(splits: Vec<PartySplit>, cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if splits.is_empty() {
            return Err(Error::invalid("scenario has no parties"));
        }
        for s in &splits {
            if s.train.is_empty() {
                return Err(Error::Party {
                    party: s.party_id,
                    message: "empty training split".into(),
                });
            }
            if s.test.is_empty() {
                return Err(Error::Party {
                    party: s.party_id,
                    message: "empty test split".into(),
                });
            }
        }
        let mut ids: Vec<usize> = splits.iter().map(|s| s.party_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate party ids"));
        }
        let (mut splits, normalizers) = normalize(splits, cfg.normalization)?;
        splits.sort_by_key(|s| s.party_id);

        let (k, d) = (splits[0].train.k(), splits[0].train.d());
        let zero = ModelParams::zeros(k, d);
        let pooled = if cfg.mode == Mode::Centralized {
            Some((
                FlowTable::concat(splits.iter().map(|s| &s.train))?,
                FlowTable::concat(splits.iter().map(|s| &s.test))?,
            ))
        } else {
            None
        };
        let global =
            matches!(cfg.mode, Mode::FederatedFedavg | Mode::Centralized).then(|| zero.clone());
        let parties = splits
            .into_iter()
            .map(|s| PartyState {
                party_id: s.party_id,
                seed: seed::party_seed(cfg.master_seed, s.party_id),
                train: s.train,
                test: s.test,
                params: zero.clone(),
            })
            .collect();
        Ok(Self {
            round: 0,
            parties,
            global,
            central: None,
            pooled,
            normalizers,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn parties(&self) -> &[PartyState] {
        &self.parties
    }

    pub fn party_ids(&self) -> Vec<usize> {
        self.parties.iter().map(|p| p.party_id).collect()
    }

    pub fn party_params(&self, id: usize) -> Option<&ModelParams> {
        self.parties
            .iter()
            .find(|p| p.party_id == id)
            .map(|p| &p.params)
    }

    /// The shared model (FedAvg and centralized modes).
    pub fn global(&self) -> Option<&ModelParams> {
        self.global.as_ref()
    }

    /// The last Fed+ central point.
    pub fn central(&self) -> Option<&ModelParams> {
        self.central.as_ref()
    }

    /// Fitted normalizers; `None` as the key means shared by all parties.
    pub fn normalizers(&self) -> &[(Option<usize>, Normalizer)] {
        &self.normalizers
    }

    /// Pooled train and test tables in centralized mode.
    pub fn pooled(&self) -> Option<(&FlowTable, &FlowTable)> {
        self.pooled.as_ref().map(|(a, b)| (a, b))
    }

    fn train_selected(
        &self,
        selected: &[usize],
        start: impl Fn(&PartyState) -> ModelParams + Sync,
        cfg: &ExperimentConfig,
    ) -> Result<Vec<RoundUpdate>> {
        let work: Vec<&PartyState> = self
            .parties
            .iter()
            .filter(|p| selected.binary_search(&p.party_id).is_ok())
            .collect();
        let run = |p: &&PartyState| -> Result<RoundUpdate> {
            let params = local_train(&start(p), &p.train, &cfg.train, p.seed, self.round)?;
            if !params.is_finite() {
                return Err(Error::Party {
                    party: p.party_id,
                    message: format!("training diverged in round {}", self.round),
                });
            }
            Ok(RoundUpdate {
                party_id: p.party_id,
                params,
                sample_count: p.train.len() as u64,
            })
        };
        if cfg.parallel {
            work.par_iter().map(run).collect()
        } else {
            work.iter().map(run).collect()
        }
    }

    /// Advances one round and returns the metrics recorded after it.
    pub fn run_round(&mut self, cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
        if self.round >= cfg.rounds {
            return Err(Error::invalid(format!(
                "all {} rounds have already run",
                cfg.rounds
            )));
        }
        match cfg.mode {
            Mode::Centralized => self.centralized_round(cfg),
            Mode::FederatedFedavg => {
                let selected = select_clients(self.round, &cfg.selection, &self.party_ids())?;
                let global = self
                    .global
                    .clone()
                    .expect("FedAvg state holds a global model");
                let updates = self.train_selected(&selected, |_| global.clone(), cfg)?;
                let next = fedavg(&updates)?;
                for p in &mut self.parties {
                    p.params = next.clone();
                }
                self.global = Some(next);
                self.finish_round(cfg)
            }
            Mode::FederatedFedplus | Mode::Distributed => {
                let selected = select_clients(self.round, &cfg.selection, &self.party_ids())?;
                let updates = self.train_selected(&selected, |p| p.params.clone(), cfg)?;
                let fed = match (cfg.mode, &cfg.fedplus) {
                    (Mode::FederatedFedplus, Some(fp)) => {
                        Some((fp, fedplus_central(&updates, fp)?))
                    }
                    _ => None,
                };
                for u in updates {
                    let party = self
                        .parties
                        .iter_mut()
                        .find(|p| p.party_id == u.party_id)
                        .expect("update from a known party");
                    party.params = match &fed {
                        Some((fp, central)) => {
                            fedplus_fuse(&u.params, central, fp.alpha_for(u.party_id))?
                        }
                        None => u.params,
                    };
                }
                self.central = fed.map(|(_, c)| c);
                self.finish_round(cfg)
            }
        }
    }

    fn centralized_round(&mut self, cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
        let (train, test) = self
            .pooled
            .as_ref()
            .expect("centralized state holds pooled data");
        let global = self
            .global
            .as_ref()
            .expect("centralized state holds a global model");
        // The pooled model trains with party 0's seed stream.
        let next = local_train(
            global,
            train,
            &cfg.train,
            seed::party_seed(cfg.master_seed, 0),
            self.round,
        )?;
        if !next.is_finite() {
            return Err(Error::invalid(format!(
                "training diverged in round {}",
                self.round
            )));
        }
        let recs = eval_records(&next, test, self.round, 0, &cfg.metrics)?;
        self.global = Some(next);
        self.round += 1;
        Ok(recs)
    }

    fn finish_round(&mut self, cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
        let round = self.round;
        let eval =
            |p: &PartyState| eval_records(&p.params, &p.test, round, p.party_id, &cfg.metrics);
        let per_party: Vec<Vec<MetricRecord>> = if cfg.parallel {
            self.parties.par_iter().map(eval).collect::<Result<_>>()?
        } else {
            self.parties.iter().map(eval).collect::<Result<_>>()?
        };
        self.round += 1;
        Ok(per_party.into_iter().flatten().collect())
    }
}

/// Runs all rounds and returns the history together with the final state.
pub fn run_experiment_with_state(
    scenario: &ScenarioPartition,
    cfg: &ExperimentConfig,
) -> Result<(MetricsHistory, FederationState)> {
    let state = FederationState::new(scenario, cfg)?;
    run_from_state(state, cfg)
}

/// Runs all remaining rounds starting from `state`.
pub fn run_from_state(
    mut state: FederationState,
    cfg: &ExperimentConfig,
) -> Result<(MetricsHistory, FederationState)> {
    let mut history = MetricsHistory::default();
    while state.round() < cfg.rounds {
        history.extend(state.run_round(cfg)?);
    }
    Ok((history, state))
}

pub fn run_experiment(
    scenario: &ScenarioPartition,
    cfg: &ExperimentConfig,
) -> Result<MetricsHistory> {
    run_experiment_with_state(scenario, cfg).map(|(h, _)| h)
}
