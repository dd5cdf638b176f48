use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        if total_steps < warmup_steps {
            return Err(Error::Argument(format!(
                "total_steps {total_steps} < warmup_steps {warmup_steps}"
            )));
        }
        Ok(LrSchedule {
            base_lr,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Range(format!(
                "step {step} > total_steps {}",
                self.total_steps
            )));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        if self.total_steps == self.warmup_steps {
            return Ok(if step == self.warmup_steps { self.base_lr } else { 0.0 });
        }
        let t = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}
