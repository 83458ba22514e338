use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingConfig {
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// An epoch improves only if it beats the best error by more than this.
    pub min_delta: f64,
}

impl Default for EarlyStoppingConfig {
    fn default() -> Self {
        EarlyStoppingConfig {
            patience: 3,
            min_delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Tracks the lowest validation error seen so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    cfg: EarlyStoppingConfig,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(cfg: EarlyStoppingConfig) -> Self {
        EarlyStopping {
            cfg,
            best: None,
            stale: 0,
        }
    }

    /// Records the validation error of `epoch`. Stops once more than
    /// `patience` consecutive epochs failed to improve by more than
    /// `min_delta`.
    pub fn observe(&mut self, epoch: usize, val_error: f64) -> Decision {
        let improved = match self.best {
            None => true,
            Some((_, best)) => val_error < best - self.cfg.min_delta,
        };
        if improved {
            self.best = Some((epoch, val_error));
            self.stale = 0;
            Decision::Continue
        } else {
            self.stale += 1;
            if self.stale > self.cfg.patience {
                Decision::Stop
            } else {
                Decision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_error(&self) -> Option<f64> {
        self.best.map(|(_, v)| v)
    }
}
