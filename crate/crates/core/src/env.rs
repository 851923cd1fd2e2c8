//! Forecasting MDP over a frozen LSTM: the state is the cell vector, the
//! action is the raw forecast scale and the reward is `-zeta * CRPS`.

use crate::lstm::CellRecord;
use crate::metrics::{crps_gaussian, GaussianForecast};
use crate::numerics::softplus;
use crate::{Error, Result};

/// Shrinkage coefficient applied to the CRPS.
pub const ZETA: f64 = 0.75;
/// Smallest forecast scale, in normalized units.
pub const DELTA_FLOOR: f64 = 1e-3;
/// One week of hourly decisions.
pub const DEFAULT_HORIZON: usize = 168;

/// Maps an unconstrained action to a positive forecast scale.
pub fn delta_from_raw(a_raw: f64) -> f64 {
    softplus(a_raw) + DELTA_FLOOR
}

/// Reward of forecasting `N(y_hat, delta_from_raw(a_raw)^2)` when `y` is realized.
pub fn reward(y_hat: f64, y: f64, a_raw: f64) -> Result<f64> {
    if !a_raw.is_finite() {
        return Err(Error::Numeric(format!("non-finite action {a_raw}")));
    }
    let f = GaussianForecast::new(y_hat, delta_from_raw(a_raw))?;
    Ok(-ZETA * crps_gaussian(f, y)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A finite-horizon walk over consecutive cell records.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<'a> {
    records: &'a [CellRecord],
    start: usize,
    cursor: usize,
    horizon: usize,
}

impl<'a> Episode<'a> {
    pub fn reset(records: &'a [CellRecord], start: usize, horizon: usize) -> Result<(Self, &'a [f64])> {
        if horizon == 0 {
            return Err(Error::Domain("episode horizon must be positive".into()));
        }
        if start + horizon > records.len() {
            return Err(Error::Domain(format!(
                "episode [{start}, {}) overruns {} records",
                start + horizon,
                records.len()
            )));
        }
        let ep = Episode {
            records,
            start,
            cursor: 0,
            horizon,
        };
        Ok((ep, &records[start].c))
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.horizon
    }

    /// Record the next action will be scored against.
    pub fn current(&self) -> Result<&'a CellRecord> {
        if self.is_done() {
            return Err(Error::State("episode is finished".into()));
        }
        Ok(&self.records[self.start + self.cursor])
    }

    pub fn state(&self) -> Result<&'a [f64]> {
        Ok(&self.current()?.c)
    }

    /// Reward `a_raw` would earn at the current state, without advancing.
    pub fn peek_reward(&self, a_raw: f64) -> Result<f64> {
        let r = self.current()?;
        reward(r.y_hat, r.target, a_raw)
    }

    pub fn step(&mut self, a_raw: f64) -> Result<StepResult> {
        let reward = self.peek_reward(a_raw)?;
        self.cursor += 1;
        let idx = (self.start + self.cursor).min(self.records.len() - 1);
        Ok(StepResult {
            next_state: self.records[idx].c.clone(),
            reward,
            done: self.is_done(),
        })
    }
}

/// Episode start indices `0, stride, 2*stride, ...` that fit `horizon` steps.
pub fn episode_starts(len: usize, horizon: usize, stride: usize) -> Vec<usize> {
    if horizon == 0 || stride == 0 || len < horizon {
        return Vec::new();
    }
    (0..=len - horizon).step_by(stride).collect()
}
