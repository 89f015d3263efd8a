use std::collections::HashSet;
use std::io::Write;

use proptest::prelude::*;
use sysid::data::*;
use sysid::numkit::Tensor;
use sysid::Error;

fn csv_file(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn load_csv_examples() {
    let f = csv_file("u,y\n1,2\n3,4\n");
    let d: SequenceData<f64> = load_csv(f.path(), &cols(&["u"]), &cols(&["y"])).unwrap();
    assert_eq!(d.sequences[0].u.data(), &[1.0, 3.0]);
    assert_eq!(d.sequences[0].y.data(), &[2.0, 4.0]);

    let f = csv_file("a,b\n1,2\n");
    match load_csv::<f64>(f.path(), &cols(&["u"]), &cols(&["b"])) {
        Err(Error::Schema(m)) => assert!(m.contains("'u'")),
        other => panic!("{other:?}"),
    }

    let f = csv_file("u,y\n1,xx\n");
    assert!(matches!(
        load_csv::<f64>(f.path(), &cols(&["u"]), &cols(&["y"])),
        Err(Error::Parse { row: 2, .. })
    ));
}

#[test]
fn load_csv_reorders_columns_and_keeps_rows() {
    let f = csv_file("t,y1,u1,u2\n0,10,1,2\n1,11,3,4\n2,12,5,6\n");
    let d: SequenceData<f32> = load_csv(f.path(), &cols(&["u2", "u1"]), &cols(&["y1"])).unwrap();
    assert_eq!(d.sequences[0].u.data(), &[2.0, 1.0, 4.0, 3.0, 6.0, 5.0]);
    assert_eq!(d.sequences[0].y.data(), &[10.0, 11.0, 12.0]);
}

#[test]
fn missing_file_is_io_error() {
    let r = load_csv::<f64>(std::path::Path::new("/nonexistent/x.csv"), &cols(&["u"]), &cols(&["y"]));
    assert!(matches!(r, Err(Error::Io { .. })));
}

fn data_from(u: Vec<f64>, y: Vec<f64>) -> SequenceData<f64> {
    let n = u.len();
    let seq = Sequence::new(Tensor::from_vec(&[n, 1], u).unwrap(), Tensor::from_vec(&[n, 1], y).unwrap()).unwrap();
    SequenceData::new(vec![seq], cols(&["u"]), cols(&["y"])).unwrap()
}

proptest! {
    #[test]
    fn standardizer_round_trip(u in prop::collection::vec(-1e3f64..1e3, 3..50), shift in -10.0f64..10.0) {
        let y: Vec<f64> = u.iter().enumerate().map(|(i, v)| v * 0.5 + shift + i as f64).collect();
        prop_assume!(u.iter().any(|&v| (v - u[0]).abs() > 1e-3));
        let d = data_from(u, y);
        let s = Standardizer::fit(&d).unwrap();
        let back = s.invert(&s.apply(&d).unwrap()).unwrap();
        let diff = back.sequences[0].u.max_abs_diff(&d.sequences[0].u).unwrap()
            .max(back.sequences[0].y.max_abs_diff(&d.sequences[0].y).unwrap());
        prop_assert!(diff <= 1e-12 * 1e3);
    }

    #[test]
    fn standardized_training_data_has_zero_mean_unit_std(u in prop::collection::vec(-5f64..5.0, 4..60)) {
        prop_assume!(u.iter().any(|&v| (v - u[0]).abs() > 1e-2));
        let y = u.iter().map(|v| v * v).collect::<Vec<_>>();
        prop_assume!(y.iter().any(|&v| (v - y[0]).abs() > 1e-2));
        let d = data_from(u, y);
        let z = Standardizer::fit(&d).unwrap().apply(&d).unwrap();
        let x = z.sequences[0].u.data();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-12);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn validation_keeps_a_residual_mean_under_training_statistics() {
    let d = synth_wiener_hammerstein::<f64>(4000, 3, 0.0).unwrap();
    let (train, valid) = split_estimation(&d, 0.25, 0).unwrap();
    let s = Standardizer::fit(&train).unwrap();
    let v = s.apply(&valid).unwrap();
    let mean = v.sequences[0].y.sum() / v.sequences[0].len() as f64;
    assert!(mean != 0.0);
    let expect = (valid.sequences[0].y.sum() / 1000.0 - s.y_mean[0]) / s.y_std[0];
    assert!((mean - expect).abs() < 1e-12);
}

#[test]
fn split_is_deterministic() {
    let d = synth_wiener_hammerstein::<f64>(1000, 1, 0.1).unwrap();
    let a = split_estimation(&d, 0.2, 7).unwrap();
    let b = split_estimation(&d, 0.2, 7).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

fn ramp_data(lens: &[usize]) -> SequenceData<f64> {
    let seqs = lens
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let u: Vec<f64> = (0..n).map(|i| (k * 100_000 + i) as f64).collect();
            Sequence::new(Tensor::from_vec(&[n, 1], u.clone()).unwrap(), Tensor::from_vec(&[n, 1], u).unwrap()).unwrap()
        })
        .collect();
    SequenceData::new(seqs, cols(&["u"]), cols(&["y"])).unwrap()
}

#[test]
fn single_chunk_windows_are_all_first() {
    let d = ramp_data(&[100]);
    let plan = WindowPlan::new(10, 10, 4, 1);
    let chunks: Vec<_> = sample_windows(&d, &plan, 0).unwrap().collect();
    assert!(!chunks.is_empty());
    assert!(chunks.iter().all(|c| c.first && c.chunk_index == 0));
}

#[test]
fn four_chunk_windows_are_flagged_and_contiguous() {
    let d = ramp_data(&[200, 150]);
    let mut plan = WindowPlan::new(40, 10, 3, 9);
    plan.batches_per_epoch = Some(5);
    let chunks: Vec<_> = sample_windows(&d, &plan, 2).unwrap().collect();
    assert_eq!(chunks.len(), 20);
    let mut seen = HashSet::new();
    for group in chunks.chunks(4) {
        assert_eq!(group.iter().map(|c| c.first).collect::<Vec<_>>(), [true, false, false, false]);
        let ids: Vec<_> = group[0].windows.iter().map(|w| w.id).collect();
        for (ci, c) in group.iter().enumerate() {
            assert_eq!(c.chunk_index, ci);
            assert_eq!(c.windows.iter().map(|w| w.id).collect::<Vec<_>>(), ids);
            for (b, w) in c.windows.iter().enumerate() {
                // Ramp values encode (sequence, position): windows stay inside
                // their sequence and chunks tile them in order.
                let first = c.u.data()[b * 10];
                assert_eq!(first, (w.sequence * 100_000 + w.start + ci * 10) as f64);
                assert!(w.start + 40 <= d.sequences[w.sequence].len());
                assert!(seen.insert((w.id, ci)), "chunk emitted twice");
            }
        }
    }
    assert_eq!(seen.len(), 15 * 4);
}

#[test]
fn epochs_draw_different_offsets_and_repeat_per_seed() {
    let d = ramp_data(&[5000]);
    let plan = WindowPlan::new(64, 16, 8, 3);
    let starts = |e| window_starts(&d, &plan, e).unwrap();
    assert_eq!(starts(0), starts(0));
    assert_ne!(starts(0), starts(1));
}

#[test]
fn plan_errors() {
    let d = ramp_data(&[50]);
    assert!(matches!(sample_windows(&d, &WindowPlan::new(60, 10, 2, 0), 0), Err(Error::Plan(_))));
    assert!(matches!(sample_windows(&d, &WindowPlan::new(30, 20, 2, 0), 0), Err(Error::Plan(_))));
    assert!(sample_windows(&d, &WindowPlan::new(50, 25, 2, 0), 0).is_ok());
}

#[test]
fn default_epoch_draws_one_window_per_chunk_of_start_positions() {
    let d = ramp_data(&[1000, 1000]);
    // 2·901 start positions / 50 → 37 windows → 10 batches of 4.
    let plan = WindowPlan::new(100, 50, 4, 0);
    assert_eq!(plan.batches_for(&d), 10);
}

#[test]
fn wiener_hammerstein_is_deterministic() {
    let a = synth_wiener_hammerstein::<f64>(500, 11, 0.0).unwrap();
    let b = synth_wiener_hammerstein::<f64>(500, 11, 0.0).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, synth_wiener_hammerstein::<f64>(500, 12, 0.0).unwrap());
}

#[test]
fn wiener_hammerstein_rests_at_zero_input() {
    assert!(wiener_hammerstein_response(&[0.0; 64]).iter().all(|&v| v == 0.0));
}

#[test]
fn measurement_noise_adds_its_variance() {
    let sigma = 0.1;
    let mut excess = 0.0;
    for seed in 0..10 {
        let noisy = synth_wiener_hammerstein::<f64>(20_000, seed, sigma).unwrap();
        let clean = synth_wiener_hammerstein::<f64>(20_000, seed, 0.0).unwrap();
        let var = |t: &Tensor<f64>| {
            let m = t.sum() / t.len() as f64;
            t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.len() as f64
        };
        excess += var(&noisy.sequences[0].y) - var(&clean.sequences[0].y);
    }
    let excess = excess / 10.0;
    assert!((excess - sigma * sigma).abs() < 0.2 * sigma * sigma, "excess variance {excess}");
}

#[test]
fn descriptor_loads_synthetic_and_csv() {
    let json = r#"{"synthetic": {"n": 300, "seed": 4, "noise_std": 0.01, "test_n": 100}, "transient_n": 7, "unit_scale": 1000}"#;
    let desc: DatasetDescriptor = serde_json::from_str(json).unwrap();
    let loaded = desc.load::<f64>(std::path::Path::new(".")).unwrap();
    assert_eq!(loaded.estimation.sequences[0].len(), 300);
    assert_eq!(loaded.test.as_ref().unwrap().transient_n, 7);

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "u,y\n1,2\n3,4\n5,7\n").unwrap();
    let desc: DatasetDescriptor =
        serde_json::from_str(r#"{"files": ["a.csv"], "u_cols": ["u"], "y_cols": ["y"]}"#).unwrap();
    let loaded = desc.load::<f64>(dir.path()).unwrap();
    assert_eq!(loaded.estimation.total_len(), 3);
    assert!(loaded.test.is_none());

    let bad: DatasetDescriptor = serde_json::from_str(r#"{"files": []}"#).unwrap();
    assert!(matches!(bad.validate(), Err(Error::Schema(_))));
    assert!(serde_json::from_str::<DatasetDescriptor>(r#"{"filez": []}"#).is_err());
}
