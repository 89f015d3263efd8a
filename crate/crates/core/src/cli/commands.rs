use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::{DatasetRef, RunConfig};
use crate::data::{split_estimation, SequenceData, Standardizer};
use crate::error::{Error, Result};
use crate::hpo::{run_search, SearchOutcome};
use crate::inference::{bench_inference_time, bench_training_time, simulate};
use crate::models::Model;
use crate::numkit::Tensor;
use crate::training::{fit, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.sidnn";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVALUATION_FILE: &str = "evaluation.json";

/// Written by `train`. RMSE values are in reporting units (data units times
/// `unit_scale`) for the best-validation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: String,
    pub dataset: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub lr_max: f64,
    pub unit_scale: f64,
    pub train_rmse: f64,
    pub valid_rmse: f64,
    pub test_rmse: f64,
    /// `test` or `validation` when the dataset has no separate test set.
    pub test_source: String,
    pub wall_seconds: f64,
}

/// Written by `evaluate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub variant: String,
    pub dataset: String,
    pub split: String,
    pub rmse: f64,
    pub unit_scale: f64,
    pub transient_skipped: usize,
    pub samples: usize,
    pub wall_seconds: f64,
}

/// Which part of a dataset `evaluate` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// The test recordings, or the validation split when there are none.
    Test,
    Estimation,
    Train,
    Valid,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "test" => Split::Test,
            "estimation" => Split::Estimation,
            "train" => Split::Train,
            "valid" => Split::Valid,
            other => return Err(Error::Usage(format!("unknown split '{other}' (test, estimation, train, valid)"))),
        })
    }
}

fn dataset_label(name: &Option<String>) -> String {
    name.clone().unwrap_or_else(|| "unnamed".into())
}

/// Pooled RMSE over all sequences after the transient, in reporting units,
/// plus the simulated outputs.
fn score(
    model: &Model<f64>,
    data: &SequenceData<f64>,
    standardizer: &Standardizer,
    unit_scale: f64,
) -> Result<(f64, Vec<Tensor<f64>>)> {
    let (mut sq, mut n) = (0.0, 0usize);
    let mut outs = Vec::with_capacity(data.sequences.len());
    for seq in &data.sequences {
        let y_hat = simulate(model, &seq.u, standardizer)?;
        let len = seq.len();
        if data.transient_n >= len {
            return Err(Error::Parameter(format!(
                "transient_n {} must be smaller than the sequence length {len}",
                data.transient_n
            )));
        }
        let c = seq.y.dim(1);
        for (a, b) in y_hat.data()[data.transient_n * c..].iter().zip(&seq.y.data()[data.transient_n * c..]) {
            sq += (a - b) * (a - b);
        }
        n += (len - data.transient_n) * c;
        outs.push(y_hat);
    }
    Ok(((sq / n as f64).sqrt() * unit_scale, outs))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn check_channels(ckpt: &Checkpoint<f64>, data: &SequenceData<f64>) -> Result<()> {
    if data.input_dim() != ckpt.spec.input_dim || data.output_dim() != ckpt.spec.output_dim {
        return Err(Error::Compatibility(format!(
            "checkpoint expects {} inputs and {} outputs, dataset has {} and {}",
            ckpt.spec.input_dim,
            ckpt.spec.output_dim,
            data.input_dim(),
            data.output_dim()
        )));
    }
    Ok(())
}

/// Finds the learning rate (unless configured), trains, and writes the
/// best checkpoint, `history.csv`, `timing.csv` and `summary.json` to the
/// output directory.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    let start = Instant::now();
    let (desc, data_dir) = config.require_dataset()?;
    let loaded = desc.load::<f64>(&data_dir)?;
    let (train, valid) = split_estimation(&loaded.estimation, config.train.valid_fraction, config.seed)?;
    let spec = config.model.spec(train.input_dim(), train.output_dim());
    let model = Model::init(spec, config.seed)?;
    let out = config.out_path();
    create_dir(&out)?;
    let result = fit(model, &train, &valid, &config.train)?;

    let ckpt = Checkpoint {
        spec: result.model.spec.clone(),
        standardizer: result.standardizer.clone(),
        params: result.model.params.clone(),
        u_names: loaded.estimation.u_names.clone(),
        y_names: loaded.estimation.y_names.clone(),
        valid_fraction: Some(config.train.valid_fraction),
    };
    save_checkpoint(&ckpt, &out.join(CHECKPOINT_FILE))?;

    let mut history = String::from("epoch,train_rmse,valid_rmse,lr\n");
    let mut timing = String::from("epoch,wall_seconds\n");
    for r in &result.history {
        writeln!(history, "{},{},{},{}", r.epoch, r.train_rmse, r.valid_rmse, r.lr).expect("string write");
        writeln!(timing, "{},{}", r.epoch, r.wall_seconds).expect("string write");
    }
    write_file(&out.join(HISTORY_FILE), &history)?;
    write_file(&out.join(TIMING_FILE), &timing)?;

    let (test_data, test_source) = match &loaded.test {
        Some(t) => (t, "test"),
        None => (&valid, "validation"),
    };
    let (test_rmse, _) = score(&result.model, test_data, &result.standardizer, desc.unit_scale)?;
    let best = &result.history[result.best_epoch];
    let summary = TrainSummary {
        variant: result.model.spec.variant(),
        dataset: dataset_label(&desc.name),
        seed: config.seed,
        best_epoch: result.best_epoch,
        epochs_run: result.history.len(),
        lr_max: result.lr_max,
        unit_scale: desc.unit_scale,
        train_rmse: best.train_rmse * desc.unit_scale,
        valid_rmse: best.valid_rmse * desc.unit_scale,
        test_rmse,
        test_source: test_source.into(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Simulates one split of `dataset` with a checkpoint, writes `y_hat.csv`
/// and `evaluation.json` to `out` and returns the pooled RMSE.
pub fn cmd_evaluate(checkpoint: &Path, dataset: &DatasetRef, base_dir: &Path, split: Split, out: &Path) -> Result<Evaluation> {
    let ckpt = load_checkpoint::<f64>(checkpoint)?;
    let (desc, data_dir) = dataset.resolve(base_dir)?;
    let loaded = desc.load::<f64>(&data_dir)?;
    check_channels(&ckpt, &loaded.estimation)?;
    let fraction = || ckpt.valid_fraction.unwrap_or(TrainConfig::default().valid_fraction);
    let (data, split_name) = match split {
        Split::Estimation => (loaded.estimation, "estimation"),
        Split::Train => (split_estimation(&loaded.estimation, fraction(), 0)?.0, "train"),
        Split::Valid => (split_estimation(&loaded.estimation, fraction(), 0)?.1, "valid"),
        Split::Test => match loaded.test {
            Some(t) => (t, "test"),
            None => (split_estimation(&loaded.estimation, fraction(), 0)?.1, "valid"),
        },
    };
    check_channels(&ckpt, &data)?;
    let model = ckpt.model()?;
    let start = Instant::now();
    let (rmse, y_hats) = score(&model, &data, &ckpt.standardizer, desc.unit_scale)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    create_dir(out)?;
    let mut csv = String::from("sequence,t");
    for name in &ckpt.y_names {
        write!(csv, ",{name}_hat,{name}").expect("string write");
    }
    csv.push('\n');
    for (k, (seq, y_hat)) in data.sequences.iter().zip(&y_hats).enumerate() {
        let c = seq.y.dim(1);
        for t in 0..seq.len() {
            write!(csv, "{k},{t}").expect("string write");
            for j in 0..c {
                write!(csv, ",{},{}", y_hat.data()[t * c + j], seq.y.data()[t * c + j]).expect("string write");
            }
            csv.push('\n');
        }
    }
    write_file(&out.join("y_hat.csv"), &csv)?;
    let eval = Evaluation {
        variant: ckpt.spec.variant(),
        dataset: dataset_label(&desc.name),
        split: split_name.into(),
        rmse,
        unit_scale: desc.unit_scale,
        transient_skipped: data.transient_n,
        samples: data.total_len(),
        wall_seconds,
    };
    write_json(&out.join(EVALUATION_FILE), &eval)?;
    Ok(eval)
}

/// Simulates the input columns of a CSV file and writes the predicted
/// outputs, one row per input row.
pub fn cmd_simulate(checkpoint: &Path, input: &Path, output: &Path) -> Result<usize> {
    let ckpt = load_checkpoint::<f64>(checkpoint)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(input)
        .map_err(|e| Error::Schema(format!("{}: {e}", input.display())))?;
    let headers = reader.headers().map_err(|e| Error::Schema(e.to_string()))?.clone();
    let idx = ckpt
        .u_names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Compatibility(format!("input file lacks column '{n}' required by the checkpoint")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut u = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 2,
            message: e.to_string(),
        })?;
        for &j in &idx {
            let cell = rec.get(j).unwrap_or("");
            u.push(cell.parse::<f64>().map_err(|e| Error::Parse {
                row: i + 2,
                message: format!("column '{}': {e}", &headers[j]),
            })?);
        }
    }
    let rows = u.len() / idx.len();
    if rows == 0 {
        return Err(Error::Data(format!("{} has no rows", input.display())));
    }
    let y_hat = simulate(&ckpt.model()?, &Tensor::from_vec(&[rows, idx.len()], u)?, &ckpt.standardizer)?;
    let mut body = ckpt.y_names.join(",") + "\n";
    for row in y_hat.data().chunks(ckpt.y_names.len()) {
        body += &row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        body.push('\n');
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(output, &body)?;
    Ok(rows)
}

/// Runs both timing harnesses over the four variants and writes
/// timestamped CSVs under `<out>/bench`.
pub fn cmd_bench(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let b = &config.bench;
    let specs = b.specs();
    let dir = config.out_path().join("bench");
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let train = bench_training_time::<f64>(&specs, &b.lengths, b.batch_size, b.repeats, config.seed)?;
    let infer = bench_inference_time::<f64>(&specs, &b.lengths, b.repeats, config.seed)?;
    let (a, am) = train.write_csv(&dir, "train", &stamp)?;
    let (i, im) = infer.write_csv(&dir, "infer", &stamp)?;
    Ok(vec![a, am, i, im])
}

/// Hyperparameter search on the configured dataset. Each trial trains
/// from scratch for its rung's epoch budget at the sampled learning rate;
/// the event log is appended to `<out>/hpo_log.jsonl`.
pub fn cmd_hpo(config: &RunConfig) -> Result<SearchOutcome> {
    let (desc, data_dir) = config.require_dataset()?;
    let loaded = desc.load::<f64>(&data_dir)?;
    let (train, valid) = split_estimation(&loaded.estimation, config.train.valid_fraction, config.seed)?;
    let out = config.out_path();
    create_dir(&out)?;
    let h = &config.hpo;
    let outcome = run_search(
        &h.space,
        &h.asha,
        h.budget,
        h.workers,
        config.seed,
        Some(&out.join("hpo_log.jsonl")),
        |_, trial, epochs| {
            let mut spec = config.model.spec(train.input_dim(), train.output_dim());
            let mut tc = config.train.clone();
            trial.apply(&mut spec, &mut tc);
            tc.max_epochs = epochs;
            let model = Model::init(spec, config.seed)?;
            Ok(fit(model, &train, &valid, &tc)?.best_valid_rmse * desc.unit_scale)
        },
    )?;
    write_json(&out.join("hpo_results.json"), &outcome.trials)?;
    Ok(outcome)
}

/// Literature RMSE values (mV) shown next to local results for orientation.
pub const REFERENCE_ROWS: [(&str, &str, f64); 6] = [
    ("Silverbox", "GRU-NAR", 0.96),
    ("Silverbox", "PNLSS", 0.26),
    ("Wiener-Hammerstein", "GRU-NAR", 0.39),
    ("Wiener-Hammerstein", "PNLSS", 0.42),
    ("Wiener-Hammerstein with process noise", "GRU-NAR", 20.3),
    ("Wiener-Hammerstein with process noise", "WH-EIV", 25.0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub dataset: String,
    pub variant: String,
    pub source: String,
    pub rmse: f64,
    pub unit_scale: f64,
}

fn collect_results(root: &Path, dir: &Path, rows: &mut Vec<ReportRow>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let run = dir
        .strip_prefix(root)
        .ok()
        .map(|p| p.display().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| ".".into());
    for path in entries {
        if path.is_dir() {
            collect_results(root, &path, rows)?;
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name != SUMMARY_FILE && name != EVALUATION_FILE {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |e: serde_json::Error| Error::Report(format!("{}: {e}", path.display()));
        let row = if name == SUMMARY_FILE {
            let s: TrainSummary = serde_json::from_str(&text).map_err(bad)?;
            ReportRow {
                run: run.clone(),
                dataset: s.dataset,
                variant: s.variant,
                source: format!("train ({})", s.test_source),
                rmse: s.test_rmse,
                unit_scale: s.unit_scale,
            }
        } else {
            let e: Evaluation = serde_json::from_str(&text).map_err(bad)?;
            ReportRow {
                run: run.clone(),
                dataset: e.dataset,
                variant: e.variant,
                source: format!("evaluate ({})", e.split),
                rmse: e.rmse,
                unit_scale: e.unit_scale,
            }
        };
        rows.push(row);
    }
    Ok(())
}

/// Gathers every `summary.json` and `evaluation.json` below `results_dir`
/// and renders them, best first, under the literature reference table.
/// The report is also written to `<results_dir>/report.md`.
pub fn cmd_report(results_dir: &Path) -> Result<String> {
    if !results_dir.is_dir() {
        return Err(Error::Report(format!("{} is not a directory", results_dir.display())));
    }
    let mut rows = Vec::new();
    collect_results(results_dir, results_dir, &mut rows)?;
    if rows.is_empty() {
        return Err(Error::Report(format!(
            "no summary.json or evaluation.json found under {}",
            results_dir.display()
        )));
    }
    rows.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then_with(|| a.run.cmp(&b.run)));

    let mut md = String::from("# RMSE comparison\n\n## Literature reference values (not reproduced here)\n\n");
    md += "| benchmark | model | RMSE (mV) |\n|---|---|---|\n";
    for (bench, model, v) in REFERENCE_ROWS {
        writeln!(md, "| {bench} | {model} | {v} |").expect("string write");
    }
    md += "\n## Results in this directory\n\n| run | dataset | variant | source | RMSE | unit scale |\n|---|---|---|---|---|---|\n";
    for r in &rows {
        writeln!(
            md,
            "| {} | {} | {} | {} | {:.6} | {} |",
            r.run, r.dataset, r.variant, r.source, r.rmse, r.unit_scale
        )
        .expect("string write");
    }
    write_file(&results_dir.join("report.md"), &md)?;
    Ok(md)
}
