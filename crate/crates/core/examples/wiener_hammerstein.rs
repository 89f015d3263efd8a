//! Trains a GRU-NAR model on a synthetic Wiener-Hammerstein recording and
//! scores it on a separately seeded test recording.
//!
//! `cargo run --release --example wiener_hammerstein [hidden] [layers]`

use std::time::Instant;

use sysid::data::{split_estimation, synth_wiener_hammerstein};
use sysid::inference::simulate_report;
use sysid::models::{Mode, Model, ModelSpec};
use sysid::training::{fit_with, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let hidden: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(32);
    let layers: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1);

    let est = synth_wiener_hammerstein::<f64>(20_000, 0, 0.01)?;
    let test = synth_wiener_hammerstein::<f64>(5_000, 1, 0.01)?;
    let config = TrainConfig::default();
    let (train, valid) = split_estimation(&est, config.valid_fraction, config.seed)?;
    let model = Model::init(ModelSpec::gru(Mode::Nar, 1, 1, hidden, layers), config.seed)?;

    let start = Instant::now();
    let result = fit_with(model, &train, &valid, &config, |r| {
        println!("epoch {:>2}  train {:.5}  valid {:.5}  lr {:.2e}", r.epoch, r.train_rmse, r.valid_rmse, r.lr);
    })?;
    let report = simulate_report(&result.model, &test.sequences[0], &result.standardizer, 0, 1.0)?;
    println!(
        "lr_max {:.3e}, best epoch {}, test RMSE {:.5} ({:.0} s)",
        result.lr_max,
        result.best_epoch,
        report.rmse,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
