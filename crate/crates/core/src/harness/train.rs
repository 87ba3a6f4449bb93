use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use crate::diff::{self, Objective};
use crate::error::{Error, Result};
use crate::fusion::FusionPartition;
use crate::net::{accuracy, batch_loss, forward, Batch, Dataset, NetLoss, NetworkSpec, TaskSpec};
use crate::params::ParamStore;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub steps: usize,
    /// Sequences (rows for feature tasks) per minibatch.
    pub batch: usize,
    pub seed: u64,
    pub task: TaskSpec,
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.steps == 0 || self.batch == 0 || self.eval_every == 0 || self.eval_every > self.steps {
            return Err(Error::InvalidArgument(format!(
                "need steps, batch ≥ 1 and 1 ≤ eval_every ≤ steps (steps {}, batch {}, eval_every {})",
                self.steps, self.batch, self.eval_every
            )));
        }
        Ok(())
    }
}

/// One evaluation point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: Option<f64>,
    pub lr: f64,
    pub eta_mean_abs: Option<f64>,
    pub theta_mean_abs: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
}

/// Header of [`Trajectory::to_csv`].
pub const TRAJECTORY_HEADER: &str = "step,train_loss,eval_loss,eval_accuracy,lr,eta_mean_abs,theta_mean_abs";

impl Trajectory {
    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn to_csv(&self) -> Result<String> {
        super::csv_string(TRAJECTORY_HEADER, &self.records)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Completed,
    /// The loss or the parameters stopped being finite at `step`; the
    /// parameters are left at their last finite values.
    Diverged { step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub trajectory: Trajectory,
    pub status: Status,
}

/// `w − lr·∇L(w)`.
pub fn sgd_step(obj: &dyn Objective, w: &[f64], lr: f64) -> Result<Vec<f64>> {
    let g = diff::grad_flat(obj, w)?;
    let next: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - lr * b).collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite("parameters after step".into()))
    }
}

fn mean_abs(w: &[f64], idx: impl Iterator<Item = usize>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for j in idx {
        s += w[j].abs();
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Mean |w| over η and over θ coordinates.
pub fn block_magnitudes(w: &[f64], partition: &FusionPartition) -> (Option<f64>, Option<f64>) {
    let eta = mean_abs(w, partition.eta_indices.iter().copied());
    let theta = mean_abs(w, partition.theta_blocks.iter().flatten().copied());
    (eta, theta)
}

/// Held-out loss and, for class targets, accuracy.
pub fn evaluate(net: &NetworkSpec, params: &ParamStore, batch: &Batch) -> Result<(f64, Option<f64>)> {
    let loss = batch_loss(net, params, batch)?;
    let pred = forward(net, params, &batch.input)?;
    Ok((loss, accuracy(&pred, &batch.target)))
}

/// Optimizer settings for one training phase.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Phase {
    pub schedule: Schedule,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl From<&TrainConfig> for Phase {
    fn from(c: &TrainConfig) -> Self {
        Self { schedule: c.schedule, steps: c.steps, batch: c.batch, seed: c.seed, eval_every: c.eval_every }
    }
}

fn record(
    net: &NetworkSpec,
    params: &ParamStore,
    partition: Option<&FusionPartition>,
    data: &Dataset,
    step: usize,
    lr: f64,
) -> Result<Record> {
    let train_loss = batch_loss(net, params, &data.train)?;
    let (eval_loss, eval_accuracy) = evaluate(net, params, &data.eval)?;
    if !(train_loss.is_finite() && eval_loss.is_finite()) {
        return Err(Error::NonFinite(format!("loss at step {step}")));
    }
    let (eta, theta) = partition.map_or((None, None), |p| block_magnitudes(params.flat(), p));
    Ok(Record { step, train_loss, eval_loss, eval_accuracy, lr, eta_mean_abs: eta, theta_mean_abs: theta })
}

/// Minibatch indices for `step`, drawn without replacement.
fn minibatch(seed: u64, step: usize, total: usize, size: usize) -> Vec<usize> {
    if size >= total {
        return (0..total).collect();
    }
    let mut r = rng::stream(rng::derive(seed, step as u64));
    let mut idx = index::sample(&mut r, total, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Records happen at step 0, every `eval_every` steps and after the last
/// step; `phase.steps == 0` records only the starting point.
pub(crate) fn run_phase(
    net: &NetworkSpec,
    params: &mut ParamStore,
    partition: Option<&FusionPartition>,
    data: &Dataset,
    phase: &Phase,
) -> Result<TrainOutcome> {
    let mut trajectory = Trajectory::default();
    trajectory.records.push(record(net, params, partition, data, 0, phase.schedule.lr(0))?);
    let total = data.train.sequences();
    for step in 0..phase.steps {
        let lr = phase.schedule.lr(step as u64);
        let mb = data.train.select(&minibatch(phase.seed, step, total, phase.batch));
        let obj = NetLoss::new(net, params, &mb);
        match sgd_step(&obj, params.flat(), lr) {
            Ok(next) => params.flat_mut().copy_from_slice(&next),
            Err(Error::NonFinite(_)) => {
                return Ok(TrainOutcome { trajectory, status: Status::Diverged { step } });
            }
            Err(e) => return Err(e),
        }
        let done = step + 1;
        if done % phase.eval_every.max(1) == 0 || done == phase.steps {
            match record(net, params, partition, data, done, phase.schedule.lr(done as u64)) {
                Ok(r) => trajectory.records.push(r),
                Err(Error::NonFinite(_)) => {
                    return Ok(TrainOutcome { trajectory, status: Status::Diverged { step: done } });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(TrainOutcome { trajectory, status: Status::Completed })
}

/// Plain SGD `w ← w − lr(s)·∇L(w)` on seeded minibatches of the training
/// split. Errors before the first step if the initial loss is not finite.
pub fn sgd_train(
    net: &NetworkSpec,
    params: &mut ParamStore,
    partition: Option<&FusionPartition>,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    net.check_params(params)?;
    run_phase(net, params, partition, data, &Phase::from(config))
}
