//! Round orchestration: counting, determinism and structural equivalences.

use fedids::aggregate::FedPlusConfig;
use fedids::metrics::{Averaging, MetricKind};
use fedids::model::sgd_epoch_seeded;
use fedids::partition::{ScenarioKind, ScenarioPartition};
use fedids::runtime::{
    run_experiment, run_experiment_with_state, run_from_state, split_parties, ExperimentConfig,
    FederationState, Mode, PartySplit, Selection,
};
use fedids::seed;
use fedids::synthetic::{generate, SyntheticProfile};
use fedids::FlowTable;

fn scenario(counts: Vec<Vec<u64>>, seed: u64) -> ScenarioPartition {
    let profile = SyntheticProfile {
        class_names: vec!["a".into(), "b".into(), "c".into()],
        d: 4,
        counts,
        separability: 3.0,
        noise_sd: 1.0,
        seed,
        kind: ScenarioKind::Basic,
    };
    generate(&profile).unwrap()
}

fn three_parties() -> ScenarioPartition {
    scenario(vec![vec![40, 20, 5], vec![10, 30, 30], vec![25, 0, 15]], 7)
}

fn cfg(mode: Mode, rounds: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(mode, rounds);
    c.master_seed = 1234;
    c.train.learning_rate = 0.05;
    c
}

#[test]
fn counts_one_record_per_party_round_metric() {
    let mut c = cfg(Mode::FederatedFedavg, 5);
    c.metrics = vec![MetricKind::Accuracy];
    let h = run_experiment(&three_parties(), &c).unwrap();
    assert_eq!(h.select(MetricKind::Accuracy, Averaging::None).count(), 15);
    assert_eq!(h.len(), 15);

    c.metrics = MetricKind::ALL.to_vec();
    let h = run_experiment(&three_parties(), &c).unwrap();
    assert_eq!(h.len(), 5 * 3 * 13);
    let rounds: std::collections::BTreeSet<usize> = h.records.iter().map(|r| r.round).collect();
    assert_eq!(
        rounds.into_iter().collect::<Vec<_>>(),
        (0..5).collect::<Vec<_>>()
    );
}

#[test]
fn same_seed_same_history() {
    for mode in [
        Mode::FederatedFedavg,
        Mode::FederatedFedplus,
        Mode::Distributed,
        Mode::Centralized,
    ] {
        let c = cfg(mode, 4);
        assert_eq!(
            run_experiment(&three_parties(), &c).unwrap(),
            run_experiment(&three_parties(), &c).unwrap()
        );
    }
}

#[test]
fn parallel_matches_sequential() {
    for mode in [
        Mode::FederatedFedavg,
        Mode::FederatedFedplus,
        Mode::Distributed,
    ] {
        let mut c = cfg(mode, 6);
        let seq = run_experiment_with_state(&three_parties(), &c).unwrap();
        c.parallel = true;
        let par = run_experiment_with_state(&three_parties(), &c).unwrap();
        assert_eq!(seq.0, par.0);
        assert_eq!(seq.1, par.1);
    }
}

#[test]
fn distributed_round_equals_independent_training() {
    let s = scenario(vec![vec![30, 10, 10], vec![5, 25, 20]], 3);
    let c = cfg(Mode::Distributed, 1);
    let (_, state) = run_experiment_with_state(&s, &c).unwrap();
    let init = FederationState::new(&s, &c).unwrap();
    for p in init.parties() {
        let ps = seed::party_seed(c.master_seed, p.party_id);
        let want =
            sgd_epoch_seeded(&p.params, &p.train, &c.train, seed::round_seed(ps, 0)).unwrap();
        assert_eq!(state.party_params(p.party_id).unwrap(), &want);
    }
}

#[test]
fn single_party_fedavg_is_local_training() {
    let s = scenario(vec![vec![30, 30, 30]], 5);
    let c = cfg(Mode::FederatedFedavg, 4);
    let (_, fed) = run_experiment_with_state(&s, &c).unwrap();
    let (_, dist) = run_experiment_with_state(&s, &cfg(Mode::Distributed, 4)).unwrap();
    assert_eq!(fed.global().unwrap(), dist.party_params(0).unwrap());
}

#[test]
fn fedplus_alpha_zero_reduces_to_distributed() {
    let mut c = cfg(Mode::FederatedFedplus, 10);
    c.fedplus = Some(FedPlusConfig::uniform(0.0));
    let (hf, sf) = run_experiment_with_state(&three_parties(), &c).unwrap();
    let (hd, sd) =
        run_experiment_with_state(&three_parties(), &cfg(Mode::Distributed, 10)).unwrap();
    assert_eq!(hf, hd);
    for id in sf.party_ids() {
        assert_eq!(sf.party_params(id), sd.party_params(id));
    }
}

#[test]
fn fedplus_alpha_one_with_identical_data_coincides() {
    let one = scenario(vec![vec![20, 20, 20]], 9);
    let mut copies = one.clone();
    for id in 1..3 {
        let mut p = one.parties[0].clone();
        p.party_id = id;
        copies.parties.push(p);
    }
    let mut c = cfg(Mode::FederatedFedplus, 3);
    c.fedplus = Some(FedPlusConfig::uniform(1.0));
    let mut state = FederationState::new(&copies, &c).unwrap();
    for _ in 0..3 {
        state.run_round(&c).unwrap();
        let first = state.party_params(0).unwrap();
        for id in 1..3 {
            assert_eq!(state.party_params(id).unwrap(), first);
        }
        assert_eq!(state.central().unwrap(), first);
    }
}

#[test]
fn centralized_equals_one_party_holding_everything() {
    let s = three_parties();
    let c = cfg(Mode::Centralized, 6);
    let (_, central) = run_experiment_with_state(&s, &c).unwrap();

    let splits = split_parties(&s, &c).unwrap();
    let pooled = PartySplit {
        party_id: 0,
        train: FlowTable::concat(splits.iter().map(|p| &p.train)).unwrap(),
        test: FlowTable::concat(splits.iter().map(|p| &p.test)).unwrap(),
    };
    let fc = cfg(Mode::FederatedFedavg, 6);
    let state = FederationState::from_splits(vec![pooled], &fc).unwrap();
    let (_, fed) = run_from_state(state, &fc).unwrap();

    let (a, b) = (central.global().unwrap(), fed.global().unwrap());
    for (x, y) in a.iter_flat().zip(b.iter_flat()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn fedavg_broadcast_keeps_parties_identical() {
    let c = cfg(Mode::FederatedFedavg, 3);
    let mut state = FederationState::new(&three_parties(), &c).unwrap();
    for _ in 0..3 {
        state.run_round(&c).unwrap();
        let g = state.global().unwrap();
        assert!(state.parties().iter().all(|p| &p.params == g));
    }
    assert!(state.run_round(&c).is_err());
}

#[test]
fn distributed_parties_are_isolated() {
    let base = three_parties();
    let mut perturbed = base.clone();
    let other = scenario(vec![vec![1, 1, 1], vec![33, 3, 30], vec![1, 1, 1]], 99);
    perturbed.parties[1] = other.parties[1].clone();
    perturbed.parties[1].party_id = 1;

    let mut c = cfg(Mode::Distributed, 5);
    c.normalization = fedids::runtime::Normalization::PerParty;
    let a = run_experiment(&base, &c).unwrap();
    let b = run_experiment(&perturbed, &c).unwrap();
    let of = |h: &fedids::metrics::MetricsHistory, id: usize| {
        h.records
            .iter()
            .filter(|r| r.party_id == id)
            .cloned()
            .collect::<Vec<_>>()
    };
    assert_eq!(of(&a, 0), of(&b, 0));
    assert_eq!(of(&a, 2), of(&b, 2));
    assert_ne!(of(&a, 1), of(&b, 1));
}

#[test]
fn unselected_parties_keep_their_models() {
    let mut c = cfg(Mode::FederatedFedplus, 2);
    c.selection = Selection::FixedSubset(vec![0, 2]);
    let (_, state) = run_experiment_with_state(&three_parties(), &c).unwrap();
    assert!(state
        .party_params(1)
        .unwrap()
        .iter_flat()
        .all(|v| *v == 0.0));
    assert!(state
        .party_params(0)
        .unwrap()
        .iter_flat()
        .any(|v| *v != 0.0));
}

#[test]
fn run_errors() {
    let mut c = cfg(Mode::Distributed, 2);
    c.selection = Selection::FixedSubset(vec![99]);
    assert!(run_experiment(&three_parties(), &c).is_err());

    // a party whose only record lands in train has an empty test split
    let tiny = scenario(vec![vec![5, 5, 0], vec![1, 0, 0]], 1);
    let err = run_experiment(&tiny, &cfg(Mode::Distributed, 1)).unwrap_err();
    assert!(err.to_string().contains("party 1"), "{err}");
}
