mod common;

use common::*;
use sysid::data::{sample_windows, split_estimation, Sequence, SequenceData, WindowPlan};
use sysid::models::{ForwardOpts, Mode, Model, ModelSpec, ParamStore};
use sysid::numkit::Tensor;
use sysid::training::*;
use sysid::Error;

fn store(values: &[f64]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::from_vec(&[values.len()], values.to_vec()).unwrap()).unwrap();
    p
}

fn w(p: &ParamStore<f64>) -> Vec<f64> {
    p.get("w").unwrap().data().to_vec()
}

/// Scalar RAdam written out independently, no lookahead.
fn reference_radam(theta0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut m, mut v, mut th) = (0.0, 0.0, theta0);
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    for (i, &g) in grads.iter().enumerate() {
        let t = (i + 1) as f64;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powf(t));
        let rho = rho_inf - 2.0 * t * b2.powf(t) / (1.0 - b2.powf(t));
        if rho > 4.0 {
            let v_hat = (v / (1.0 - b2.powf(t))).sqrt();
            let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
            th -= lr * r * m_hat / (v_hat + eps);
        } else {
            th -= lr * m_hat;
        }
    }
    th
}

fn no_lookahead() -> TrainConfig {
    TrainConfig {
        lookahead_k: 1,
        lookahead_alpha: 1.0,
        ..TrainConfig::default()
    }
}

#[test]
fn radam_matches_reference_trace() {
    let cfg = no_lookahead();
    let grads = [0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.2, 0.05, 0.3, 0.7];
    let mut p = store(&[1.5]);
    let mut st = OptimizerState::new(&p);
    for &g in &grads {
        radam_lookahead_step(&mut p, &store(&[g]), &mut st, &cfg, 0.01).unwrap();
    }
    let expect = reference_radam(1.5, &grads, 0.01, 0.9, 0.999, 1e-8);
    assert!((w(&p)[0] - expect).abs() < 1e-15, "{} vs {expect}", w(&p)[0]);
}

#[test]
fn lookahead_k1_alpha1_is_plain_radam_bitwise() {
    let grads = [0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.2];
    let cfg = no_lookahead();
    let mut with = store(&[0.7, -0.1]);
    let mut st = OptimizerState::new(&with);
    for &g in &grads {
        radam_lookahead_step(&mut with, &store(&[g, -g]), &mut st, &cfg, 0.05).unwrap();
    }
    // Never syncing is plain RAdam.
    let never = TrainConfig { lookahead_k: 1000, ..cfg };
    let mut plain = store(&[0.7, -0.1]);
    let mut st = OptimizerState::new(&plain);
    for &g in &grads {
        radam_lookahead_step(&mut plain, &store(&[g, -g]), &mut st, &never, 0.05).unwrap();
    }
    assert_eq!(w(&with), w(&plain));
}

#[test]
fn lookahead_moves_slow_weights_halfway_after_k_steps() {
    let cfg = TrainConfig {
        lookahead_k: 6,
        lookahead_alpha: 0.5,
        ..TrainConfig::default()
    };
    let theta0 = 2.0;
    let fast6 = reference_radam(theta0, &[0.4; 6], 0.1, 0.9, 0.999, 1e-8);
    let mut p = store(&[theta0]);
    let mut st = OptimizerState::new(&p);
    for step in 1..=6 {
        radam_lookahead_step(&mut p, &store(&[0.4]), &mut st, &cfg, 0.1).unwrap();
        if step < 6 {
            assert_eq!(w(&st.slow), [theta0]);
        }
    }
    let halfway = theta0 + 0.5 * (fast6 - theta0);
    assert!((w(&st.slow)[0] - halfway).abs() < 1e-14);
    assert_eq!(w(&p), w(&st.slow));
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = store(&[1.0, -2.0, 3.0]);
    let mut st = OptimizerState::new(&p);
    let cfg = TrainConfig::default();
    for _ in 0..13 {
        radam_lookahead_step(&mut p, &store(&[0.0; 3]), &mut st, &cfg, 0.1).unwrap();
    }
    assert_eq!(w(&p), [1.0, -2.0, 3.0]);
}

#[test]
fn weight_decay_is_decoupled() {
    let cfg = TrainConfig {
        weight_decay: 0.1,
        ..no_lookahead()
    };
    let mut p = store(&[2.0]);
    let mut st = OptimizerState::new(&p);
    radam_lookahead_step(&mut p, &store(&[0.0]), &mut st, &cfg, 0.5).unwrap();
    assert!((w(&p)[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let mut p = store(&[1.0]);
    let mut st = OptimizerState::new(&p);
    match radam_lookahead_step(&mut p, &store(&[f64::NAN]), &mut st, &TrainConfig::default(), 0.1) {
        Err(Error::Optimizer(name)) => assert_eq!(name, "w"),
        other => panic!("{other:?}"),
    }
    assert_eq!(w(&p), [1.0]);
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut g = store(&[3.0, 4.0]);
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g.global_norm() - 1.0).abs() < 1e-15);
    let mut g = store(&[0.3, 0.4]);
    clip_global_norm(&mut g, 1.0);
    assert_eq!(w(&g), [0.3, 0.4]);
}

/// Gradient descent on `a/2·x²`.
struct Quadratic {
    a: f64,
    x: f64,
}

impl FinderTarget for Quadratic {
    fn train_step(&mut self, lr: f64) -> sysid::Result<f64> {
        let loss = 0.5 * self.a * self.x * self.x;
        self.x -= lr * self.a * self.x;
        Ok(loss)
    }
}

#[test]
fn finder_follows_the_closed_form_quadratic_trajectory() {
    let (a, x0) = (4.0, 1.0);
    let cfg = FinderConfig::default();
    let res = lr_sweep(&mut Quadratic { a, x: x0 }, &cfg).unwrap();

    // x_i = x0·Π_{j<i}(1 − lr_j·a); smoothing and the stopping rule applied
    // to that product.
    let ratio = (cfg.end_lr / cfg.start_lr).powf(1.0 / (cfg.steps - 1) as f64);
    let (mut x, mut avg, mut best, mut at) = (x0, 0.0, f64::INFINITY, 0.0);
    let mut n = 0;
    for i in 0..cfg.steps {
        let lr = cfg.start_lr * ratio.powi(i as i32);
        let loss = 0.5 * a * x * x;
        x *= 1.0 - lr * a;
        avg = 0.98 * avg + 0.02 * loss;
        let s = avg / (1.0 - 0.98f64.powi(i as i32 + 1));
        n += 1;
        if s < best {
            best = s;
            at = lr;
        }
        if s > 4.0 * best {
            break;
        }
    }
    assert_eq!(res.smoothed.len(), n);
    assert_eq!(res.lr_at_min, at);
    assert_eq!(res.suggestion, at / 10.0);
    // Fastest stable step is 1/a; the suggestion sits between a tenth of it
    // and the divergence bound 2/a.
    assert!(res.suggestion >= 1.0 / (10.0 * a) && res.suggestion < 2.0 / a, "{}", res.suggestion);
}

struct Exploding;

impl FinderTarget for Exploding {
    fn train_step(&mut self, _: f64) -> sysid::Result<f64> {
        Ok(f64::INFINITY)
    }
}

#[test]
fn finder_rejects_divergence_at_the_first_step() {
    assert!(matches!(lr_sweep(&mut Exploding, &FinderConfig::default()), Err(Error::Finder(_))));
}

fn linear_system(n: usize, seed: u64) -> SequenceData<f64> {
    let mut r = rng(seed);
    let u = random(&mut r, &[n, 1], 1.0);
    let y: Vec<f64> = (0..n)
        .map(|t| 0.5 * u.data()[t] + if t > 0 { 0.3 * u.data()[t - 1] } else { 0.0 })
        .collect();
    let seq = Sequence::new(u, Tensor::from_vec(&[n, 1], y).unwrap()).unwrap();
    SequenceData::new(vec![seq], vec!["u".into()], vec!["y".into()]).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 30,
        window_len: 256,
        chunk_len: 64,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn finder_is_deterministic_and_leaves_the_model_alone() {
    let data = linear_system(2000, 1);
    let model = Model::<f64>::init(ModelSpec::gru(Mode::Nar, 1, 1, 4, 1), 3).unwrap();
    let before = model.clone();
    let cfg = small_config();
    let a = lr_finder(&model, &data, &cfg).unwrap();
    let b = lr_finder(&model, &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(model, before);
    assert!(a.suggestion > 0.0);
}

#[test]
fn fit_learns_a_linear_fir_system() {
    let data = linear_system(6000, 2);
    let cfg = small_config();
    let (train, valid) = split_estimation(&data, cfg.valid_fraction, cfg.seed).unwrap();
    let model = Model::init(ModelSpec::gru(Mode::Nar, 1, 1, 8, 1), 0).unwrap();
    let res = fit(model, &train, &valid, &cfg).unwrap();
    assert_eq!(res.history.len(), 30);
    let min = res.history.iter().map(|r| r.valid_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(res.best_valid_rmse, min);
    assert_eq!(res.history[res.best_epoch].valid_rmse, min);
    assert!(res.best_valid_rmse < 0.01, "valid RMSE {}", res.best_valid_rmse);
    let check = sysid::inference::pooled_rmse(&res.model, &valid.sequences, &res.standardizer, 0).unwrap();
    assert_eq!(check, res.best_valid_rmse);
}

#[test]
fn fit_is_deterministic() {
    let data = linear_system(3000, 5);
    let cfg = TrainConfig {
        max_epochs: 4,
        ..small_config()
    };
    let (train, valid) = split_estimation(&data, 0.2, 0).unwrap();
    let run = || {
        let m = Model::init(ModelSpec::tcn(Mode::Ar, 1, 1, 4, 3), 1).unwrap();
        fit(m, &train, &valid, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    let strip = |h: &[EpochRecord]| h.iter().map(|r| (r.train_rmse, r.valid_rmse, r.lr)).collect::<Vec<_>>();
    assert_eq!(strip(&a.history), strip(&b.history));
    assert_eq!(a.model, b.model);
}

#[test]
fn single_chunk_gradients_equal_full_window_bptt() {
    let data = linear_system(400, 3);
    for spec in [
        ModelSpec::gru(Mode::Ar, 1, 1, 5, 2),
        ModelSpec::gru(Mode::Nar, 1, 1, 5, 2),
        ModelSpec::tcn(Mode::Ar, 1, 1, 4, 3),
        ModelSpec::tcn(Mode::Nar, 1, 1, 4, 3),
    ] {
        let model = random_model(spec, 4, 0.5);
        let plan = WindowPlan::new(64, 64, 3, 0);
        let chunk = sample_windows(&data, &plan, 0).unwrap().next().unwrap();
        let mask = LossMask::leading(3, 64, 7);
        let out = chunk_gradients(&model, &chunk.u, &chunk.y, &model.zero_state(3), &mask, false, None).unwrap();

        // Independent assembly of the same windows straight from the data.
        let seq = &data.sequences[0];
        let pick = |t: &Tensor<f64>| {
            let v: Vec<f64> = chunk.windows.iter().flat_map(|w| t.data()[w.start..w.start + 64].to_vec()).collect();
            Tensor::from_vec(&[3, 64, 1], v).unwrap()
        };
        let (u, y) = (pick(&seq.u), pick(&seq.y));
        let (y_hat, _, tape) = model.forward_taped(&u, &model.zero_state(3), ForwardOpts::default()).unwrap();
        let mut grad = Tensor::zeros(&[3, 64, 1]);
        let n = (3 * 57) as f64;
        for b in 0..3 {
            for t in 7..64 {
                let i = b * 64 + t;
                grad.data_mut()[i] = 2.0 * (y_hat.data()[i] - y.data()[i]) / n;
            }
        }
        let full = model.backward(&tape, &grad).unwrap();
        for ((name, a), (_, b)) in out.grads.iter().zip(full.iter()) {
            assert!(a.max_abs_diff(b).unwrap() <= 1e-10, "{name}");
        }
    }
}

#[test]
fn chained_chunk_states_reproduce_the_monolithic_ar_trajectory() {
    let data = linear_system(300, 6);
    let model = random_model(ModelSpec::gru(Mode::Ar, 1, 1, 4, 1), 2, 0.5);
    let plan = WindowPlan::new(128, 32, 2, 1);
    let chunks: Vec<_> = sample_windows(&data, &plan, 0).unwrap().take(4).collect();
    let mut state = model.zero_state(2);
    for c in &chunks {
        let out = chunk_gradients(&model, &c.u, &c.y, &state, &LossMask::none(2, 32), false, None).unwrap();
        state = out.state;
    }
    let u = Tensor::concat_axis1(&chunks.iter().map(|c| &c.u).collect::<Vec<_>>()).unwrap();
    let (_, mono) = model.forward(&u, &model.zero_state(2)).unwrap();
    assert!(state.last_output.as_ref().unwrap().max_abs_diff(mono.last_output.as_ref().unwrap()).unwrap() <= 1e-12);
    assert!(state.layers[0].max_abs_diff(&mono.layers[0]).unwrap() <= 1e-12);
}

#[test]
fn masked_targets_never_influence_updates() {
    let data = linear_system(500, 7);
    let model = random_model(ModelSpec::tcn(Mode::Ar, 1, 1, 4, 2), 1, 0.5);
    let plan = WindowPlan::new(32, 32, 4, 0);
    let c = sample_windows(&data, &plan, 0).unwrap().next().unwrap();
    let mask = LossMask::leading(4, 32, 3);
    let mut corrupted = c.y.clone();
    for b in 0..4 {
        for t in 0..3 {
            corrupted.data_mut()[b * 32 + t] = f64::NAN;
        }
    }
    let step = |y: &Tensor<f64>| {
        let out = chunk_gradients(&model, &c.u, y, &model.zero_state(4), &mask, false, None).unwrap();
        let mut p = model.params.clone();
        let mut st = OptimizerState::new(&p);
        radam_lookahead_step(&mut p, &out.grads, &mut st, &TrainConfig::default(), 0.01).unwrap();
        (out.loss.to_bits(), p)
    };
    assert_eq!(step(&c.y), step(&corrupted));
}

#[test]
fn free_running_feedback_ignores_ground_truth() {
    let data = linear_system(200, 8);
    let model = random_model(ModelSpec::tcn(Mode::Ar, 1, 1, 3, 2), 3, 0.5);
    let c = sample_windows(&data, &WindowPlan::new(40, 40, 2, 0), 0).unwrap().next().unwrap();
    let mask = LossMask::none(2, 40);
    let a = chunk_gradients(&model, &c.u, &c.y, &model.zero_state(2), &mask, false, None).unwrap();
    let shifted = c.y.map(|v| v + 3.0);
    let b = chunk_gradients(&model, &c.u, &shifted, &model.zero_state(2), &mask, false, None).unwrap();
    assert_eq!(a.state, b.state);
    assert_ne!(a.loss, b.loss);
}

#[test]
fn teacher_forcing_with_own_outputs_equals_free_running() {
    for spec in [ModelSpec::gru(Mode::Ar, 1, 1, 4, 2), ModelSpec::tcn(Mode::Ar, 1, 1, 4, 2)] {
        let model = random_model(spec, 5, 0.5);
        let u = random(&mut rng(1), &[2, 30, 1], 1.0);
        let (y_free, _) = model.forward(&u, &model.zero_state(2)).unwrap();
        let mask = LossMask::none(2, 30);
        let free = chunk_gradients(&model, &u, &y_free, &model.zero_state(2), &mask, false, None).unwrap();
        let forced = chunk_gradients(&model, &u, &y_free, &model.zero_state(2), &mask, true, None).unwrap();
        assert_eq!(forced.loss, 0.0);
        assert_eq!(free.loss, 0.0);
        assert!(forced.state.layers[0].max_abs_diff(&free.state.layers[0]).unwrap() <= 1e-15);
        // Teacher forcing cuts the feedback path from the gradient.
        let y_off = y_free.map(|v| v + 0.1);
        let g_free = chunk_gradients(&model, &u, &y_off, &model.zero_state(2), &mask, false, None).unwrap();
        let g_forced = chunk_gradients(&model, &u, &y_off, &model.zero_state(2), &mask, true, None).unwrap();
        assert_ne!(g_free.grads, g_forced.grads);
    }
}

#[test]
fn gradients_stop_at_chunk_boundaries() {
    let model = random_model(ModelSpec::gru(Mode::Nar, 1, 1, 4, 1), 9, 0.5);
    let u = random(&mut rng(2), &[1, 20, 1], 1.0);
    let (_, carried) = model.forward(&u.slice_axis1(0, 10).unwrap(), &model.zero_state(1)).unwrap();
    let u2 = u.slice_axis1(10, 20).unwrap();
    let y2 = random(&mut rng(3), &[1, 10, 1], 1.0);
    let mask = LossMask::none(1, 10);
    let g = chunk_gradients(&model, &u2, &y2, &carried, &mask, false, None).unwrap();
    // The same chunk from the same state, however the state was produced.
    let again = chunk_gradients(&model, &u2, &y2, &carried.clone(), &mask, false, None).unwrap();
    assert_eq!(g.grads, again.grads);
    let analytic = params_to_vec(&g.grads);
    let err = sysid::numkit::grad_check(&params_to_vec(&model.params), 1e-6, |p| {
        let m = Model::new(model.spec.clone(), params_from_vec(&model.params, p)).unwrap();
        let out = chunk_gradients(&m, &u2, &y2, &carried, &mask, false, None).unwrap();
        Ok((out.loss, analytic.clone()))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn fully_masked_windows_are_a_loss_error() {
    let data = linear_system(300, 1);
    let mut model = Model::<f64>::init(ModelSpec::tcn(Mode::Nar, 1, 1, 3, 6), 0).unwrap();
    // Receptive field 63 covers a 32-sample window entirely.
    let cfg = TrainConfig {
        window_len: 32,
        chunk_len: 16,
        batch_size: 2,
        lr_max: Some(0.01),
        ..TrainConfig::default()
    };
    let mut st = TrainState::new(&model.params, 0.01);
    assert!(matches!(train_epoch(&mut model, &data, &cfg, &mut st, 0), Err(Error::Loss(_))));
}

#[test]
fn tcn_first_chunks_mask_exactly_the_receptive_field() {
    let model = Model::<f64>::init(ModelSpec::tcn(Mode::Nar, 1, 1, 3, 10), 0).unwrap();
    assert_eq!(TrainConfig::default().mask_len(&model).unwrap(), 1023);
    let gru = Model::<f64>::init(ModelSpec::gru(Mode::Nar, 1, 1, 3, 2), 0).unwrap();
    assert_eq!(TrainConfig::default().mask_len(&gru).unwrap(), 3);
    let cfg = TrainConfig {
        chunk_len: 4,
        window_len: 8,
        ..TrainConfig::default()
    };
    let deep = Model::<f64>::init(ModelSpec::gru(Mode::Nar, 1, 1, 3, 5), 0).unwrap();
    assert_eq!(cfg.mask_len(&deep).unwrap(), 2);
}

#[test]
fn config_problems_are_listed_together() {
    let cfg = TrainConfig {
        lookahead_k: 0,
        lookahead_alpha: 1.5,
        window_len: 100,
        chunk_len: 30,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.problems().len(), 3);
    assert!(TrainConfig::default().problems().is_empty());
}
