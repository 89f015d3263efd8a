//! Random search with Asynchronous Successive Halving (ASHA).
//!
//! Rung `r` trains for `r_min·η^r` epochs. When a trial finishes a rung it
//! is marked promotable iff its loss ranks within the best `⌈k/η⌉` of the
//! `k` results that rung has collected so far (ties go to the lower trial
//! id). Trials that are not promotable are paused, not discarded: a later
//! result can enlarge the rung enough for them to qualify.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub low: u32,
    pub high: u32,
}

/// Sampling rule per hyperparameter. `hidden` and `chunk_len` are drawn as
/// powers of two from integer exponent ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: LogRange,
    pub weight_decay: LogRange,
    pub hidden_exp: IntRange,
    pub depth: IntRange,
    pub chunk_exp: IntRange,
    pub residual: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: LogRange { low: 1e-4, high: 1e-2 },
            weight_decay: LogRange { low: 1e-6, high: 1e-3 },
            hidden_exp: IntRange { low: 4, high: 7 },
            depth: IntRange { low: 2, high: 10 },
            chunk_exp: IntRange { low: 7, high: 10 },
            residual: vec![true, false],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("lr", self.lr), ("weight_decay", self.weight_decay)] {
            if !(r.low > 0.0 && r.low <= r.high && r.high.is_finite()) {
                return Err(Error::Parameter(format!("{name}: log-uniform bounds must satisfy 0 < low <= high")));
            }
        }
        for (name, r) in [("hidden_exp", self.hidden_exp), ("depth", self.depth), ("chunk_exp", self.chunk_exp)] {
            if r.low > r.high {
                return Err(Error::Parameter(format!("{name}: low > high")));
            }
        }
        if self.hidden_exp.high > 16 || self.chunk_exp.high > 20 || self.depth.low < 1 {
            return Err(Error::Parameter("search space bounds out of range".into()));
        }
        if self.residual.is_empty() {
            return Err(Error::Parameter("residual: no choices".into()));
        }
        Ok(())
    }
}

/// One draw from a [`SearchSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub depth: usize,
    pub chunk_len: usize,
    pub residual: bool,
}

impl TrialConfig {
    /// Applies the overlay; the window grows to a multiple of the new chunk
    /// length if needed.
    pub fn apply(&self, spec: &mut ModelSpec, train: &mut TrainConfig) {
        spec.hidden = self.hidden;
        spec.depth = self.depth;
        spec.residual = self.residual;
        train.lr_max = Some(self.lr);
        train.weight_decay = self.weight_decay;
        train.chunk_len = self.chunk_len;
        train.window_len = train.window_len.max(self.chunk_len).div_ceil(self.chunk_len) * self.chunk_len;
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, r: LogRange) -> f64 {
    if r.low == r.high {
        return r.low;
    }
    (rng.gen_range(r.low.ln()..r.high.ln())).exp()
}

fn int_uniform(rng: &mut ChaCha8Rng, r: IntRange) -> u32 {
    rng.gen_range(r.low..=r.high)
}

/// Independent draw of every hyperparameter; the same `(seed, trial)`
/// always yields the same config.
pub fn sample_config(space: &SearchSpace, seed: u64, trial: usize) -> Result<TrialConfig> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    Ok(TrialConfig {
        lr: log_uniform(&mut rng, space.lr),
        weight_decay: log_uniform(&mut rng, space.weight_decay),
        hidden: 1 << int_uniform(&mut rng, space.hidden_exp),
        depth: int_uniform(&mut rng, space.depth) as usize,
        chunk_len: 1 << int_uniform(&mut rng, space.chunk_exp),
        residual: space.residual[rng.gen_range(0..space.residual.len())],
    })
}

/// Order in which idle workers pick up work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOrder {
    /// Promotions first, highest rung first, then new trials.
    Asha,
    /// New trials until the budget is spent, then promotions from the
    /// lowest rung up. Run serially this is synchronous successive halving.
    BreadthFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AshaConfig {
    pub r_min: usize,
    pub eta: usize,
    pub rungs: usize,
    pub order: JobOrder,
}

impl Default for AshaConfig {
    fn default() -> Self {
        Self {
            r_min: 2,
            eta: 3,
            rungs: 3,
            order: JobOrder::Asha,
        }
    }
}

impl AshaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta < 2 || self.r_min < 1 || self.rungs < 1 {
            return Err(Error::Parameter("ASHA needs eta >= 2, r_min >= 1 and at least one rung".into()));
        }
        Ok(())
    }

    /// Epochs trained at rung `r`.
    pub fn resource(&self, r: usize) -> usize {
        self.r_min * self.eta.pow(r as u32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rung {
    pub index: usize,
    pub resource: usize,
    /// `(trial id, loss)` in completion order.
    pub results: Vec<(usize, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Promote,
    Stop,
    /// Finished the top rung.
    Complete,
    Failed,
}

fn promotable(rung: &Rung, eta: usize, trial: usize) -> Result<bool> {
    let mine = rung
        .results
        .iter()
        .find(|(id, _)| *id == trial)
        .ok_or_else(|| Error::Bookkeeping(format!("trial {trial} has no result at rung {}", rung.index)))?
        .1;
    let k = rung.results.len();
    let better = rung
        .results
        .iter()
        .filter(|(id, loss)| loss.total_cmp(&mine).then(id.cmp(&trial)).is_lt())
        .count();
    Ok(better < k.div_ceil(eta))
}

/// The asynchronous rule for a trial whose result at `rung` is already
/// recorded in `rungs`.
pub fn asha_decide(rungs: &[Rung], eta: usize, rung: usize, trial: usize) -> Result<Decision> {
    let r = rungs
        .get(rung)
        .ok_or_else(|| Error::Bookkeeping(format!("unknown rung {rung}")))?;
    if rung + 1 == rungs.len() {
        promotable(r, eta, trial)?;
        return Ok(Decision::Complete);
    }
    Ok(if promotable(r, eta, trial)? { Decision::Promote } else { Decision::Stop })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Stopped,
    Promoted,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RungResult {
    pub rung: usize,
    pub epochs: usize,
    pub valid_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub config: TrialConfig,
    pub rungs: Vec<RungResult>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn best_rmse(&self) -> f64 {
        self.rungs.iter().map(|r| r.valid_rmse).fold(f64::INFINITY, f64::min)
    }

    pub fn top_rung(&self) -> Option<usize> {
        self.rungs.last().map(|r| r.rung)
    }
}

/// One line of the JSON-lines search log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchEvent {
    pub trial_id: usize,
    pub rung: usize,
    pub epochs: usize,
    pub valid_rmse: Option<f64>,
    pub decision: Decision,
    pub timestamp: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Job {
    New(usize),
    Promote(usize, usize),
}

struct Scheduler {
    cfg: AshaConfig,
    budget: usize,
    sampled: usize,
    running: usize,
    rungs: Vec<Rung>,
    promoted: Vec<Vec<usize>>,
    trials: Vec<TrialRecord>,
    events: Vec<SearchEvent>,
    log: Option<File>,
}

impl Scheduler {
    fn candidate(&self, rung: usize) -> Option<usize> {
        let mut order: Vec<&(usize, f64)> = self.rungs[rung].results.iter().collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let top = self.rungs[rung].results.len().div_ceil(self.cfg.eta);
        order
            .into_iter()
            .take(top)
            .map(|&(id, _)| id)
            .find(|id| !self.promoted[rung].contains(id))
    }

    fn next_job(&mut self) -> Option<Job> {
        let below_top = self.cfg.rungs.saturating_sub(1);
        let promotion = || -> Option<Job> {
            let ranks: Vec<usize> = match self.cfg.order {
                JobOrder::Asha => (0..below_top).rev().collect(),
                JobOrder::BreadthFirst => (0..below_top).collect(),
            };
            ranks
                .into_iter()
                .find_map(|r| self.candidate(r).map(|id| Job::Promote(id, r + 1)))
        };
        let fresh = (self.sampled < self.budget).then_some(Job::New(self.sampled));
        let job = match self.cfg.order {
            JobOrder::Asha => promotion().or(fresh),
            JobOrder::BreadthFirst => fresh.or_else(promotion),
        }?;
        match job {
            Job::New(_) => self.sampled += 1,
            Job::Promote(id, to) => {
                self.promoted[to - 1].push(id);
                self.trials[id].status = TrialStatus::Running;
            }
        }
        self.running += 1;
        Some(job)
    }

    fn record(&mut self, event: SearchEvent) -> Result<()> {
        if let Some(f) = self.log.as_mut() {
            let line = serde_json::to_string(&event)?;
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::io(Path::new("search log"), e))?;
        }
        self.events.push(event);
        Ok(())
    }

    fn finish(&mut self, trial: usize, rung: usize, outcome: std::result::Result<f64, String>) -> Result<()> {
        self.running -= 1;
        let epochs = self.cfg.resource(rung);
        let (valid_rmse, decision) = match outcome {
            Ok(loss) if loss.is_finite() => {
                self.rungs[rung].results.push((trial, loss));
                self.trials[trial].rungs.push(RungResult {
                    rung,
                    epochs,
                    valid_rmse: loss,
                });
                (Some(loss), asha_decide(&self.rungs, self.cfg.eta, rung, trial)?)
            }
            Ok(loss) => {
                self.trials[trial].error = Some(format!("non-finite validation RMSE {loss}"));
                (None, Decision::Failed)
            }
            Err(message) => {
                self.trials[trial].error = Some(message);
                (None, Decision::Failed)
            }
        };
        self.trials[trial].status = match decision {
            Decision::Promote => TrialStatus::Promoted,
            Decision::Stop => TrialStatus::Stopped,
            Decision::Complete => TrialStatus::Completed,
            Decision::Failed => TrialStatus::Failed,
        };
        self.record(SearchEvent {
            trial_id: trial,
            rung,
            epochs,
            valid_rmse,
            decision,
            timestamp: chrono::Utc::now().to_rfc3339(),
        })?;
        // A promotable trial may have been overtaken; it stays paused until
        // it is picked as a candidate again.
        for rec in self.trials.iter_mut() {
            if rec.status == TrialStatus::Promoted {
                let r = rec.top_rung().unwrap_or(0);
                if !self.promoted[r].contains(&rec.trial_id)
                    && !promotable(&self.rungs[r], self.cfg.eta, rec.trial_id).unwrap_or(false)
                {
                    rec.status = TrialStatus::Stopped;
                }
            }
        }
        Ok(())
    }
}

/// Result of a search: trials sorted by their best validation RMSE
/// (failed trials last) and the full event log.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub trials: Vec<TrialRecord>,
    pub events: Vec<SearchEvent>,
}

/// Runs ASHA over `budget` sampled configs with `workers` threads. The
/// objective trains a config for the given number of epochs and returns its
/// validation RMSE; its errors fail the trial, not the search. Events are
/// appended to `log_path` as they happen.
pub fn run_search<F>(
    space: &SearchSpace,
    asha: &AshaConfig,
    budget: usize,
    workers: usize,
    seed: u64,
    log_path: Option<&Path>,
    objective: F,
) -> Result<SearchOutcome>
where
    F: Fn(usize, &TrialConfig, usize) -> Result<f64> + Sync,
{
    space.validate()?;
    asha.validate()?;
    if workers < 1 {
        return Err(Error::Parameter("workers must be >= 1".into()));
    }
    if budget < 1 {
        return Err(Error::Parameter("trial budget must be >= 1".into()));
    }
    let trials = (0..budget)
        .map(|id| {
            Ok(TrialRecord {
                trial_id: id,
                config: sample_config(space, seed, id)?,
                rungs: Vec::new(),
                status: TrialStatus::Running,
                error: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let log = match log_path {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };
    let sched = Mutex::new(Scheduler {
        cfg: asha.clone(),
        budget,
        sampled: 0,
        running: 0,
        rungs: (0..asha.rungs)
            .map(|r| Rung {
                index: r,
                resource: asha.resource(r),
                results: Vec::new(),
            })
            .collect(),
        promoted: vec![Vec::new(); asha.rungs],
        trials,
        events: Vec::new(),
        log,
    });
    let wake = Condvar::new();
    let failure: Mutex<Option<Error>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let job = {
                    let mut g = sched.lock().expect("scheduler lock");
                    loop {
                        if failure.lock().expect("failure lock").is_some() {
                            return;
                        }
                        if let Some(job) = g.next_job() {
                            break job;
                        }
                        if g.running == 0 {
                            wake.notify_all();
                            return;
                        }
                        g = wake.wait(g).expect("scheduler lock");
                    }
                };
                let (trial, rung) = match job {
                    Job::New(id) => (id, 0),
                    Job::Promote(id, r) => (id, r),
                };
                let config = sched.lock().expect("scheduler lock").trials[trial].config.clone();
                let outcome = objective(trial, &config, asha.resource(rung)).map_err(|e| e.to_string());
                if let Err(msg) = &outcome {
                    log::warn!("trial {trial} failed at rung {rung}: {msg}");
                }
                let mut g = sched.lock().expect("scheduler lock");
                if let Err(e) = g.finish(trial, rung, outcome) {
                    *failure.lock().expect("failure lock") = Some(e);
                }
                wake.notify_all();
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let sched = sched.into_inner().expect("scheduler lock");
    let mut trials = sched.trials;
    trials.sort_by(|a, b| {
        let fa = a.status == TrialStatus::Failed;
        let fb = b.status == TrialStatus::Failed;
        fa.cmp(&fb)
            .then(a.best_rmse().total_cmp(&b.best_rmse()))
            .then(a.trial_id.cmp(&b.trial_id))
    });
    Ok(SearchOutcome {
        trials,
        events: sched.events,
    })
}

/// Recomputes every decision of a log from the results that precede it.
pub fn replay_decisions(events: &[SearchEvent], asha: &AshaConfig) -> Result<Vec<Decision>> {
    asha.validate()?;
    let mut rungs: Vec<Rung> = (0..asha.rungs)
        .map(|r| Rung {
            index: r,
            resource: asha.resource(r),
            results: Vec::new(),
        })
        .collect();
    events
        .iter()
        .map(|e| {
            let rung = rungs
                .get_mut(e.rung)
                .ok_or_else(|| Error::Bookkeeping(format!("event for unknown rung {}", e.rung)))?;
            match e.valid_rmse {
                Some(loss) if e.decision != Decision::Failed => {
                    rung.results.push((e.trial_id, loss));
                    asha_decide(&rungs, asha.eta, e.rung, e.trial_id)
                }
                _ => Ok(Decision::Failed),
            }
        })
        .collect()
}

pub fn read_events(path: &Path) -> Result<Vec<SearchEvent>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rung(results: &[(usize, f64)]) -> Rung {
        Rung {
            index: 0,
            resource: 2,
            results: results.to_vec(),
        }
    }

    #[test]
    fn decide_examples() {
        let rungs = vec![rung(&[(0, 0.5), (1, 0.2), (2, 0.9)]), rung(&[])];
        assert_eq!(asha_decide(&rungs, 3, 0, 2).unwrap(), Decision::Stop);
        assert_eq!(asha_decide(&rungs, 3, 0, 1).unwrap(), Decision::Promote);
        let first = vec![rung(&[(7, 3.0)]), rung(&[])];
        assert_eq!(asha_decide(&first, 3, 0, 7).unwrap(), Decision::Promote);
        assert!(matches!(asha_decide(&rungs, 3, 5, 0), Err(Error::Bookkeeping(_))));
        assert!(matches!(asha_decide(&rungs, 3, 0, 9), Err(Error::Bookkeeping(_))));
    }

    #[test]
    fn ties_go_to_the_lower_id() {
        let rungs = vec![rung(&[(4, 1.0), (2, 1.0), (9, 2.0)]), rung(&[])];
        assert_eq!(asha_decide(&rungs, 3, 0, 2).unwrap(), Decision::Promote);
        assert_eq!(asha_decide(&rungs, 3, 0, 4).unwrap(), Decision::Stop);
    }
}
