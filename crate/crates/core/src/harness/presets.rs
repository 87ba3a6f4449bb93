//! Bundled experiment settings on the teacher-regression task.

use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use super::sweep::{FusePointSweep, Growth, OffsetSweep};
use super::train::{sgd_train, Status, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::{self_deep_fuse, FusedNetwork};
use crate::net::{make_task, Activation, Dataset, NetworkSpec, TaskSpec};

/// 4 inputs, 2 outputs, an 8-unit tanh teacher, 256 train and 256 eval rows.
pub fn teacher_task(seed: u64) -> TaskSpec {
    TaskSpec::TeacherRegression { input_dim: 4, output_dim: 2, hidden: 8, train_samples: 256, eval_samples: 256, seed }
}

/// The 4→4→2 tanh student grown by the sweeps.
pub fn small_student() -> NetworkSpec {
    NetworkSpec::mlp(&[4, 4, 2], Activation::Tanh)
}

pub fn teacher_schedule() -> Schedule {
    Schedule { peak: 1.0, warmup: 100, offset: 0 }
}

/// 5000 SGD steps of 32 rows, evaluated every 500.
pub fn teacher_train_config(seed: u64) -> TrainConfig {
    TrainConfig { schedule: teacher_schedule(), steps: 5000, batch: 32, seed, task: teacher_task(seed), eval_every: 500 }
}

/// Budget of 1000 small-step units, fusing after 1/8, 1/4, 1/2 and 3/4 of it.
pub fn fuse_point_sweep(seed: u64) -> FusePointSweep {
    let phase = TrainConfig { steps: 1, eval_every: 1000, ..teacher_train_config(seed) };
    FusePointSweep {
        net: small_student(),
        init_seed: seed,
        small: phase.clone(),
        big: phase,
        growth: Growth { seed, ..Growth::default() },
        budget: None,
        total_budget: 1000.0,
        fuse_steps: vec![125, 250, 500, 750],
    }
}

/// Offset study: pre-train the small student, self-fuse, then train the
/// fused network under offsets ±500 for 1000 steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetPreset {
    pub net: NetworkSpec,
    pub init_seed: u64,
    pub pretrain: TrainConfig,
    pub growth: Growth,
    pub sweep: OffsetSweep,
}

impl OffsetPreset {
    pub fn new(seed: u64) -> Self {
        Self {
            net: small_student(),
            init_seed: seed,
            pretrain: TrainConfig { steps: 500, ..teacher_train_config(seed) },
            growth: Growth { seed, ..Growth::default() },
            sweep: OffsetSweep {
                schedule: teacher_schedule(),
                offsets: vec![-500, 500],
                steps: 1000,
                batch: 32,
                seed,
                dump_every: 250,
            },
        }
    }

    /// Pre-trained, freshly fused network and the task data.
    pub fn prepare(&self) -> Result<(FusedNetwork, Dataset)> {
        let data = make_task(&self.pretrain.task)?;
        let mut params = self.net.init_params(self.init_seed)?;
        let out = sgd_train(&self.net, &mut params, None, &data, &self.pretrain)?;
        if let Status::Diverged { step } = out.status {
            return Err(Error::NonFinite(format!("pre-training diverged at step {step}")));
        }
        let g = &self.growth;
        let fused = self_deep_fuse((&self.net, &params), g.n, g.strategy, g.zero_block_sigma, g.seed)?;
        Ok((fused, data))
    }
}
