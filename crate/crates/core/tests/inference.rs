mod common;

use common::{random, random_model, rng};
use sysid::data::{Sequence, Standardizer};
use sysid::inference::*;
use sysid::models::{Arch, ConvCache, Mode, ModelSpec};
use sysid::numkit::Tensor;
use sysid::Error;

fn col(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
}

#[test]
fn rmse_examples() {
    let y_hat = col(&[9.0, 0.0, 3.0]);
    let y = col(&[0.0, 4.0, 0.0]);
    let r = evaluate_rmse(&y_hat, &y, 1, 1.0).unwrap();
    assert!((r - 12.5f64.sqrt()).abs() < 1e-12);
    assert!((r - 3.5355).abs() < 1e-4);
    assert!((evaluate_rmse(&y_hat, &y, 1, 1000.0).unwrap() - 1000.0 * r).abs() < 1e-9);
    assert_eq!(evaluate_rmse(&y, &y, 0, 1.0).unwrap(), 0.0);
    assert!(matches!(evaluate_rmse(&y_hat, &y, 3, 1.0), Err(Error::Parameter(_))));
    assert!(evaluate_rmse(&y_hat, &col(&[1.0, 2.0]), 0, 1.0).is_err());
}

fn identity() -> Standardizer {
    Standardizer {
        u_mean: vec![0.0],
        u_std: vec![1.0],
        y_mean: vec![0.0],
        y_std: vec![1.0],
    }
}

#[test]
fn nar_simulation_is_the_destandardized_forward_pass() {
    let mut r = rng(4);
    for arch in [Arch::Gru, Arch::Tcn] {
        let model = random_model(ModelSpec::new(arch, Mode::Nar, 1, 1, 6, 3), 2, 0.4);
        let u = random(&mut r, &[50, 1], 1.0);
        let std = Standardizer {
            u_mean: vec![0.3],
            u_std: vec![2.0],
            y_mean: vec![-1.0],
            y_std: vec![0.5],
        };
        let y = simulate(&model, &u, &std).unwrap();
        let u_std = u.map(|v| (v - 0.3) / 2.0).reshape(&[1, 50, 1]).unwrap();
        let (y_ref, _) = model.forward(&u_std, &model.zero_state(1)).unwrap();
        let expect = y_ref.map(|v| v * 0.5 - 1.0).reshape(&[50, 1]).unwrap();
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
        assert_eq!(y, simulate(&model, &u, &std).unwrap());
    }
}

#[test]
fn simulation_rejects_wrong_channels() {
    let model = random_model(ModelSpec::gru(Mode::Ar, 2, 1, 4, 1), 0, 0.3);
    let mut r = rng(0);
    let u = random(&mut r, &[10, 1], 1.0);
    assert!(matches!(simulate_standardized(&model, &u), Err(Error::Input(_))));
    assert!(matches!(simulate(&model, &u, &identity()), Err(Error::Input(_))));
}

#[test]
fn report_skips_the_transient() {
    let model = random_model(ModelSpec::tcn(Mode::Ar, 1, 1, 4, 2), 1, 0.3);
    let mut r = rng(8);
    let seq = Sequence::new(random(&mut r, &[40, 1], 1.0), random(&mut r, &[40, 1], 1.0)).unwrap();
    let a = simulate_report(&model, &seq, &identity(), 0, 1000.0).unwrap();
    let b = simulate_report(&model, &seq, &identity(), 10, 1000.0).unwrap();
    assert_eq!(a.y_hat, b.y_hat);
    assert_eq!(b.transient_skipped, 10);
    assert_ne!(a.rmse, b.rmse);
    let direct = evaluate_rmse(&b.y_hat, &seq.y, 10, 1000.0).unwrap();
    assert_eq!(b.rmse, direct);
    let pooled = pooled_rmse(&model, &[seq.clone(), seq], &identity(), 10).unwrap();
    assert!((pooled * 1000.0 - b.rmse).abs() < 1e-9);
}

#[test]
fn first_cached_step_matches_a_length_one_forward() {
    let model = random_model(ModelSpec::tcn(Mode::Nar, 2, 1, 5, 4), 3, 0.5);
    let mut r = rng(1);
    let x = random(&mut r, &[3, 2], 1.0);
    let mut cache = ConvCache::new(&model.spec, 3).unwrap();
    let y = fast_ar_step(&mut cache, &model, &x).unwrap();
    let full = model.tcn_forward(&x.clone().reshape(&[3, 1, 2]).unwrap()).unwrap();
    assert!(y.max_abs_diff(&full.reshape(&[3, 1]).unwrap()).unwrap() < 1e-14);
}

#[test]
fn cache_memory_does_not_grow() {
    let model = random_model(ModelSpec::tcn(Mode::Ar, 1, 1, 4, 5), 3, 0.3);
    let mut cache = ConvCache::new(&model.spec, 1).unwrap();
    let sizes: Vec<usize> = (0..5).map(|l| cache.buffer_len(l)).collect();
    let x = Tensor::from_vec(&[1, 2], vec![0.1, -0.2]).unwrap();
    for _ in 0..5000 {
        fast_ar_step(&mut cache, &model, &x).unwrap();
    }
    assert_eq!(cache.steps(), 5000);
    assert_eq!((0..5).map(|l| cache.buffer_len(l)).collect::<Vec<_>>(), sizes);
}

fn specs() -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for arch in [Arch::Gru, Arch::Tcn] {
        for mode in [Mode::Nar, Mode::Ar] {
            out.push(ModelSpec::new(arch, mode, 1, 1, 4, if arch == Arch::Tcn { 4 } else { 1 }));
        }
    }
    out
}

// The harnesses share a process-wide lock, so they run inside one test.
#[test]
fn bench_tables() {
    let t = bench_training_time::<f64>(&specs(), &[8, 32], 2, 5, 0).unwrap();
    assert_eq!(t.rows.len(), 5 * (2 + 2 + 1 + 1));
    assert_eq!(t.skipped.len(), 2);
    assert!(t.skipped.iter().all(|s| s.contains("TCN") && s.contains('8')));
    assert!(t.rows.iter().all(|r| r.wall_seconds > 0.0));
    assert_eq!(t.medians().len(), 6);
    assert!(t.median("TCN-AR", 32).is_some());
    assert!(t.median("TCN-AR", 8).is_none());

    let i = bench_inference_time::<f32>(&specs(), &[20], 3, 0).unwrap();
    assert_eq!(i.rows.len(), 12);
    assert!(i.rows.iter().all(|r| r.repeat < 3));

    let empty = bench_inference_time::<f64>(&[], &[20], 3, 0).unwrap();
    assert!(empty.rows.is_empty() && empty.medians().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let (raw, med) = i.write_csv(dir.path(), "infer", "a").unwrap();
    assert_eq!(std::fs::read_to_string(&raw).unwrap().lines().count(), 13);
    assert_eq!(std::fs::read_to_string(&med).unwrap().lines().count(), 5);
    assert!(matches!(i.write_csv(dir.path(), "infer", "a"), Err(Error::Io { .. })));

    let busy = std::thread::scope(|s| {
        let long = s.spawn(|| bench_inference_time::<f64>(&specs(), &[4000], 20, 0));
        std::thread::sleep(std::time::Duration::from_millis(50));
        let second = bench_inference_time::<f64>(&specs()[..1], &[10], 1, 0);
        long.join().unwrap().unwrap();
        second
    });
    assert!(matches!(busy, Err(Error::Bench(_))));
}
