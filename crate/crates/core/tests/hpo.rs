use std::collections::BTreeSet;

use sysid::hpo::*;
use sysid::Error;

/// Deterministic loss whose ranking shifts with the training budget.
fn loss(trial: usize, epochs: usize) -> f64 {
    let a = ((trial * 7919) % 101) as f64 / 101.0;
    let b = ((trial * 104_729 + 13) % 97) as f64 / 97.0;
    a / epochs as f64 + b * (1.0 - 1.0 / epochs as f64) * 0.5
}

fn synchronous_halving(n: usize, asha: &AshaConfig) -> BTreeSet<usize> {
    let mut alive: Vec<usize> = (0..n).collect();
    for r in 0..asha.rungs - 1 {
        let epochs = asha.resource(r);
        alive.sort_by(|&a, &b| loss(a, epochs).total_cmp(&loss(b, epochs)).then(a.cmp(&b)));
        alive.truncate(alive.len().div_ceil(asha.eta));
    }
    alive.into_iter().collect()
}

fn top_rung_set(out: &SearchOutcome, top: usize) -> BTreeSet<usize> {
    out.trials
        .iter()
        .filter(|t| t.top_rung() == Some(top))
        .map(|t| t.trial_id)
        .collect()
}

#[test]
fn lr_draws_are_log_uniform() {
    let space = SearchSpace::default();
    let mut lrs: Vec<f64> = (0..1000).map(|i| sample_config(&space, 5, i).unwrap().lr).collect();
    lrs.sort_by(f64::total_cmp);
    let median = 0.5 * (lrs[499] + lrs[500]);
    assert!((8e-4..=1.3e-3).contains(&median), "median {median}");
    assert!(lrs.iter().all(|&v| (1e-4..=1e-2).contains(&v)));
}

#[test]
fn sampling_is_deterministic_and_in_range() {
    let space = SearchSpace::default();
    for i in 0..200 {
        let c = sample_config(&space, 3, i).unwrap();
        assert_eq!(c, sample_config(&space, 3, i).unwrap());
        assert!([16, 32, 64, 128].contains(&c.hidden));
        assert!([128, 256, 512, 1024].contains(&c.chunk_len));
        assert!((2..=10).contains(&c.depth));
        assert!((1e-6..=1e-3).contains(&c.weight_decay));
    }
    assert_ne!(sample_config(&space, 3, 0).unwrap(), sample_config(&space, 3, 1).unwrap());
}

#[test]
fn degenerate_space_yields_one_config() {
    let space = SearchSpace {
        lr: LogRange { low: 1e-3, high: 1e-3 },
        weight_decay: LogRange { low: 1e-5, high: 1e-5 },
        hidden_exp: IntRange { low: 5, high: 5 },
        depth: IntRange { low: 3, high: 3 },
        chunk_exp: IntRange { low: 8, high: 8 },
        residual: vec![false],
    };
    let first = sample_config(&space, 0, 0).unwrap();
    assert!((0..20).all(|i| sample_config(&space, 9, i).unwrap() == first));
    assert_eq!(first.hidden, 32);
    assert_eq!(first.chunk_len, 256);
}

#[test]
fn invalid_space_and_budget_are_rejected() {
    let mut space = SearchSpace::default();
    space.lr.low = 0.0;
    assert!(matches!(sample_config(&space, 0, 0), Err(Error::Parameter(_))));
    let asha = AshaConfig::default();
    let ok = SearchSpace::default();
    assert!(run_search(&ok, &asha, 0, 1, 0, None, |_, _, _| Ok(1.0)).is_err());
    assert!(run_search(&ok, &asha, 3, 0, 0, None, |_, _, _| Ok(1.0)).is_err());
}

#[test]
fn serial_breadth_first_matches_synchronous_halving() {
    let asha = AshaConfig {
        order: JobOrder::BreadthFirst,
        ..AshaConfig::default()
    };
    let out = run_search(&SearchSpace::default(), &asha, 27, 1, 1, None, |id, _, e| Ok(loss(id, e))).unwrap();
    let expect = synchronous_halving(27, &asha);
    assert_eq!(expect.len(), 3);
    assert_eq!(top_rung_set(&out, 2), expect);
    let rung1: BTreeSet<usize> = out.trials.iter().filter(|t| t.rungs.len() >= 2).map(|t| t.trial_id).collect();
    assert_eq!(rung1.len(), 9);
    let replay = replay_decisions(&out.events, &asha).unwrap();
    assert_eq!(replay, out.events.iter().map(|e| e.decision).collect::<Vec<_>>());
}

#[test]
fn eta_two_halves_each_rung() {
    let asha = AshaConfig {
        eta: 2,
        r_min: 1,
        rungs: 4,
        order: JobOrder::BreadthFirst,
    };
    let out = run_search(&SearchSpace::default(), &asha, 16, 1, 0, None, |id, _, e| Ok(loss(id, e))).unwrap();
    for (r, n) in [(0, 16), (1, 8), (2, 4), (3, 2)] {
        assert_eq!(out.trials.iter().filter(|t| t.rungs.len() > r).count(), n, "rung {r}");
    }
    assert_eq!(top_rung_set(&out, 3), synchronous_halving(16, &asha));
}

#[test]
fn log_replays_and_parses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("search.jsonl");
    let asha = AshaConfig::default();
    let out = run_search(&SearchSpace::default(), &asha, 12, 1, 4, Some(&path), |id, _, e| Ok(loss(id, e))).unwrap();
    let events = read_events(&path).unwrap();
    assert_eq!(events.len(), out.events.len());
    assert!(events.iter().zip(&out.events).all(|(a, b)| a.trial_id == b.trial_id && a.decision == b.decision));
    let replay = replay_decisions(&events, &asha).unwrap();
    assert_eq!(replay, events.iter().map(|e| e.decision).collect::<Vec<_>>());
    assert!(events.iter().all(|e| e.epochs == asha.resource(e.rung)));
}

#[test]
fn sequential_asha_order_promotes_eagerly() {
    let asha = AshaConfig::default();
    let out = run_search(&SearchSpace::default(), &asha, 27, 1, 1, None, |id, _, e| Ok(loss(id, e))).unwrap();
    // The first result of every rung is promotable, so trial 0 climbs first.
    let first: Vec<_> = out.events.iter().take(3).map(|e| (e.trial_id, e.rung)).collect();
    assert_eq!(first, [(0, 0), (0, 1), (0, 2)]);
}

#[test]
fn failed_trials_do_not_stop_the_search() {
    let out = run_search(&SearchSpace::default(), &AshaConfig::default(), 9, 2, 0, None, |id, _, e| {
        if id == 4 {
            Err(Error::Training { step: 3, message: "boom".into() })
        } else if id == 5 {
            Ok(f64::NAN)
        } else {
            Ok(loss(id, e))
        }
    })
    .unwrap();
    assert_eq!(out.trials.len(), 9);
    let failed: Vec<_> = out.trials.iter().filter(|t| t.status == TrialStatus::Failed).map(|t| t.trial_id).collect();
    assert_eq!(failed.len(), 2);
    assert!(out.trials[7..].iter().all(|t| t.status == TrialStatus::Failed));
    let best: Vec<f64> = out.trials[..7].iter().map(|t| t.best_rmse()).collect();
    assert!(best.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn parallel_workers_cover_every_trial() {
    let asha = AshaConfig::default();
    let out = run_search(&SearchSpace::default(), &asha, 20, 4, 2, None, |id, _, e| {
        std::thread::sleep(std::time::Duration::from_millis((id % 3) as u64));
        Ok(loss(id, e))
    })
    .unwrap();
    assert!(out.trials.iter().all(|t| !t.rungs.is_empty()));
    assert_eq!(out.events.len(), out.trials.iter().map(|t| t.rungs.len()).sum::<usize>());
    let replay = replay_decisions(&out.events, &asha).unwrap();
    assert_eq!(replay, out.events.iter().map(|e| e.decision).collect::<Vec<_>>());
}
