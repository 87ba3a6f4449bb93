use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-square-root learning rate with a constant warm phase.
///
/// `lr(step) = peak / √max(step + offset, warmup)`. A positive offset starts
/// further down the decay, a negative one stays at the peak for longer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: u64,
    #[serde(default)]
    pub offset: i64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { peak: 1.0, warmup: 100, offset: 0 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak > 0.0 && self.peak.is_finite()) || self.warmup == 0 {
            return Err(Error::InvalidArgument(format!("schedule needs peak > 0 and warmup ≥ 1, got {self:?}")));
        }
        Ok(())
    }

    pub fn with_offset(self, offset: i64) -> Self {
        Self { offset, ..self }
    }

    pub fn lr(&self, step: u64) -> f64 {
        let arg = step as i128 + self.offset as i128;
        let arg = arg.max(self.warmup as i128) as f64;
        self.peak / arg.sqrt()
    }
}
