use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pgm::write_heatmap;
use super::pool::par_map;
use super::schedule::Schedule;
use super::train::{block_magnitudes, evaluate, run_phase, Phase, Status, TrainConfig, Trajectory};
use crate::error::{Error, Result};
use crate::fusion::{self_deep_fuse, FusedNetwork, Strategy};
use crate::net::{make_task, Dataset, LayerSpec, NetworkSpec};
use crate::params::ParamStore;
use crate::rng;

/// Abstract per-step costs of the small and the fused network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetModel {
    pub small_step_cost: f64,
    pub big_step_cost: f64,
    pub total_budget: f64,
}

impl BudgetModel {
    /// Step costs proportional to parameter counts, with a small step
    /// costing one unit.
    pub fn proportional(small_params: usize, big_params: usize, total_budget: f64) -> Self {
        Self { small_step_cost: 1.0, big_step_cost: big_params as f64 / small_params as f64, total_budget }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.small_step_cost) || !pos(self.big_step_cost) || !pos(self.total_budget) {
            return Err(Error::InvalidArgument(format!("budget costs must be positive, got {self:?}")));
        }
        if self.small_step_cost > self.big_step_cost {
            return Err(Error::InvalidArgument("a small step may not cost more than a big one".into()));
        }
        Ok(())
    }

    /// Largest `k` with `s·c_s + k·c_b ≤ B`.
    pub fn post_steps(&self, fuse_step: usize) -> Result<usize> {
        let used = fuse_step as f64 * self.small_step_cost;
        if used > self.total_budget {
            return Err(Error::InfeasibleBudget(format!(
                "{fuse_step} small steps cost {used} > budget {}",
                self.total_budget
            )));
        }
        let mut k = ((self.total_budget - used) / self.big_step_cost).floor() as usize;
        while used + (k as f64 + 1.0) * self.big_step_cost <= self.total_budget {
            k += 1;
        }
        while k > 0 && used + k as f64 * self.big_step_cost > self.total_budget {
            k -= 1;
        }
        Ok(k)
    }

    pub fn spent(&self, fuse_step: usize, post_steps: usize) -> f64 {
        fuse_step as f64 * self.small_step_cost + post_steps as f64 * self.big_step_cost
    }
}

/// How the small network is grown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Growth {
    pub n: usize,
    pub strategy: Strategy,
    pub zero_block_sigma: f64,
    pub seed: u64,
}

impl Default for Growth {
    fn default() -> Self {
        Self { n: 2, strategy: Strategy::Property, zero_block_sigma: crate::fusion::DEFAULT_ZERO_BLOCK_SIGMA, seed: 0 }
    }
}

/// Train small, self-fuse, train big.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthRun {
    pub small: Trajectory,
    pub big: Trajectory,
    pub fused: FusedNetwork,
    /// Eval loss of the small network just before fusion and of the fused
    /// network just after.
    pub eval_before: f64,
    pub eval_after: f64,
    pub status: Status,
}

/// Trains `params` for `small.steps`, self-fuses, then trains the fused
/// network for `big.steps` with its schedule restarted at step 0.
pub fn grow_and_train(
    net: &NetworkSpec,
    params: ParamStore,
    data: &Dataset,
    small: &TrainConfig,
    growth: &Growth,
    big: &TrainConfig,
) -> Result<GrowthRun> {
    small.schedule.validate()?;
    big.schedule.validate()?;
    grow(net, params, data, &Phase::from(small), growth, &Phase::from(big))
}

fn grow(
    net: &NetworkSpec,
    mut params: ParamStore,
    data: &Dataset,
    small: &Phase,
    growth: &Growth,
    big: &Phase,
) -> Result<GrowthRun> {
    let first = run_phase(net, &mut params, None, data, small)?;
    let eval_before = evaluate(net, &params, &data.eval)?.0;
    let mut fused = self_deep_fuse((net, &params), growth.n, growth.strategy, growth.zero_block_sigma, growth.seed)?;
    let eval_after = evaluate(&fused.spec, &fused.params, &data.eval)?.0;
    if first.status != Status::Completed {
        return Ok(GrowthRun { small: first.trajectory, big: Trajectory::default(), fused, eval_before, eval_after, status: first.status });
    }
    let second = run_phase(&fused.spec, &mut fused.params, Some(&fused.partition), data, big)?;
    let status = match second.status {
        Status::Diverged { step } => Status::Diverged { step: small.steps + step },
        s => s,
    };
    Ok(GrowthRun { small: first.trajectory, big: second.trajectory, fused, eval_before, eval_after, status })
}

/// A when-to-fuse experiment.
///
/// `small` and `big` supply schedule, minibatch size, seed and eval cadence
/// for the two phases; their `steps` are ignored because the budget decides
/// them. The task is `small.task`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusePointSweep {
    pub net: NetworkSpec,
    pub init_seed: u64,
    pub small: TrainConfig,
    pub big: TrainConfig,
    #[serde(default)]
    pub growth: Growth,
    /// Defaults to parameter-proportional costs when absent.
    pub budget: Option<BudgetModel>,
    #[serde(default)]
    pub total_budget: f64,
    pub fuse_steps: Vec<usize>,
}

/// One row of a fuse-point sweep; `baseline` marks the randomly initialized
/// big network trained on the whole budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusePointRow {
    pub fuse_step: usize,
    pub baseline: bool,
    pub post_steps: usize,
    pub spent: f64,
    pub eval_at_fusion: f64,
    pub final_eval_loss: f64,
    pub final_eval_accuracy: Option<f64>,
    pub diverged: bool,
}

/// Header of [`fuse_point_csv`].
pub const FUSE_POINT_HEADER: &str =
    "fuse_step,baseline,post_steps,spent,eval_at_fusion,final_eval_loss,final_eval_accuracy,diverged";

pub fn fuse_point_csv(rows: &[FusePointRow]) -> Result<String> {
    super::csv_string(FUSE_POINT_HEADER, rows)
}

impl FusePointSweep {
    pub fn budget_model(&self) -> Result<BudgetModel> {
        let b = match self.budget {
            Some(b) => b,
            None => {
                let p = self.net.init_params(0)?;
                let big = self_deep_fuse((&self.net, &p), self.growth.n, self.growth.strategy, 0.0, 0)?;
                BudgetModel::proportional(self.net.param_count(), big.params.len(), self.total_budget)
            }
        };
        b.validate()?;
        Ok(b)
    }

    pub fn run(&self) -> Result<Vec<FusePointRow>> {
        let budget = self.budget_model()?;
        self.net.validate()?;
        self.small.schedule.validate()?;
        self.big.schedule.validate()?;
        let data = make_task(&self.small.task)?;
        let mut jobs: Vec<Option<usize>> = vec![None];
        for &s in &self.fuse_steps {
            budget.post_steps(s)?;
            jobs.push(Some(s));
        }
        let results = par_map(&jobs, |job| self.row(&data, &budget, *job))?;
        results.into_iter().collect()
    }

    fn row(&self, data: &Dataset, budget: &BudgetModel, job: Option<usize>) -> Result<FusePointRow> {
        let init = self.net.init_params(self.init_seed)?;
        let big_phase = |steps| Phase { steps, ..Phase::from(&self.big) };
        match job {
            None => {
                let post = budget.post_steps(0)?;
                let template = self_deep_fuse((&self.net, &init), self.growth.n, self.growth.strategy, 0.0, 0)?;
                let spec = template.spec;
                let mut params = spec.init_params(rng::derive(self.init_seed, 0xB16))?;
                let eval_at_fusion = evaluate(&spec, &params, &data.eval)?.0;
                let out = run_phase(&spec, &mut params, None, data, &big_phase(post))?;
                let last = out.trajectory.last().expect("initial record");
                Ok(FusePointRow {
                    fuse_step: 0,
                    baseline: true,
                    post_steps: post,
                    spent: budget.spent(0, post),
                    eval_at_fusion,
                    final_eval_loss: last.eval_loss,
                    final_eval_accuracy: last.eval_accuracy,
                    diverged: out.status != Status::Completed,
                })
            }
            Some(s) => {
                let post = budget.post_steps(s)?;
                let small = Phase { steps: s, ..Phase::from(&self.small) };
                let run = grow(&self.net, init, data, &small, &self.growth, &big_phase(post))?;
                let last = run.big.last().or(run.small.last()).expect("initial record");
                Ok(FusePointRow {
                    fuse_step: s,
                    baseline: false,
                    post_steps: post,
                    spent: budget.spent(s, post),
                    eval_at_fusion: run.eval_after,
                    final_eval_loss: last.eval_loss,
                    final_eval_accuracy: last.eval_accuracy,
                    diverged: run.status != Status::Completed,
                })
            }
        }
    }
}

/// Learning-rate offset study on a fused network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetSweep {
    pub schedule: Schedule,
    pub offsets: Vec<i64>,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Heatmap and magnitude cadence in steps.
    pub dump_every: usize,
}

/// Magnitudes at one dump of one offset run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetRow {
    pub offset: i64,
    pub step: usize,
    pub lr: f64,
    pub eval_loss: f64,
    pub eta_mean_abs: f64,
    pub theta_mean_abs: f64,
    /// `eta_mean_abs / theta_mean_abs`.
    pub ratio: f64,
    /// Heatmap file name, when heatmaps are written.
    pub heatmap: Option<String>,
}

/// Header of [`offset_csv`].
pub const OFFSET_HEADER: &str = "offset,step,lr,eval_loss,eta_mean_abs,theta_mean_abs,ratio,heatmap";

pub fn offset_csv(rows: &[OffsetRow]) -> Result<String> {
    super::csv_string(OFFSET_HEADER, rows)
}

/// Name of the first dense kernel of `spec`, the one shown in heatmaps.
pub fn first_dense_kernel(spec: &NetworkSpec) -> Option<String> {
    spec.layers
        .iter()
        .position(|l| matches!(l, LayerSpec::Dense { .. }))
        .map(|k| crate::net::param_name(k, "kernel"))
}

pub fn heatmap_name(offset: i64, step: usize) -> String {
    format!("heatmap_offset{offset:+}_step{step:06}.pgm")
}

impl OffsetSweep {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.steps == 0 || self.batch == 0 || self.dump_every == 0 || self.offsets.is_empty() {
            return Err(Error::InvalidArgument("offset sweep needs steps, batch, dump_every ≥ 1 and an offset".into()));
        }
        Ok(())
    }

    /// One training run per offset from the same fused state; heatmaps go
    /// to `heatmaps` when given.
    pub fn run(&self, fused: &FusedNetwork, data: &Dataset, heatmaps: Option<&Path>) -> Result<Vec<OffsetRow>> {
        self.validate()?;
        let kernel = first_dense_kernel(&fused.spec)
            .ok_or_else(|| Error::InvalidArgument("fused network has no dense kernel to show".into()))?;
        if let Some(dir) = heatmaps {
            std::fs::create_dir_all(dir)?;
        }
        let per = par_map(&self.offsets, |&offset| self.one(fused, data, offset, &kernel, heatmaps))?;
        Ok(per.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
    }

    fn one(
        &self,
        fused: &FusedNetwork,
        data: &Dataset,
        offset: i64,
        kernel: &str,
        heatmaps: Option<&Path>,
    ) -> Result<Vec<OffsetRow>> {
        let mut params = fused.params.clone();
        let schedule = self.schedule.with_offset(offset);
        let mut rows = Vec::new();
        let mut done = 0;
        loop {
            let (eta, theta) = block_magnitudes(params.flat(), &fused.partition);
            let (eta, theta) = (eta.unwrap_or(0.0), theta.unwrap_or(0.0));
            let heatmap = match heatmaps {
                Some(dir) => {
                    let name = heatmap_name(offset, done);
                    write_heatmap(&dir.join(&name), &params.tensor(kernel).expect("kernel entry"))?;
                    Some(name)
                }
                None => None,
            };
            rows.push(OffsetRow {
                offset,
                step: done,
                lr: schedule.lr(done as u64),
                eval_loss: evaluate(&fused.spec, &params, &data.eval)?.0,
                eta_mean_abs: eta,
                theta_mean_abs: theta,
                ratio: if theta > 0.0 { eta / theta } else { 0.0 },
                heatmap,
            });
            if done >= self.steps {
                break;
            }
            let chunk = self.dump_every.min(self.steps - done);
            let phase = Phase {
                schedule: Schedule { offset: offset + done as i64, ..schedule },
                steps: chunk,
                batch: self.batch,
                seed: rng::derive(self.seed, done as u64),
                eval_every: chunk,
            };
            let out = run_phase(&fused.spec, &mut params, Some(&fused.partition), data, &phase)?;
            if let Status::Diverged { step } = out.status {
                return Err(Error::NonFinite(format!("offset {offset} diverged at step {}", done + step)));
            }
            done += chunk;
        }
        Ok(rows)
    }
}
