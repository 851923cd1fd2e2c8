//! Probabilistic forecasting of EV charging station power.
//!
//! The pipeline turns raw charging sessions into hourly station features,
//! trains an LSTM point forecaster, then trains a PPO agent that reads the
//! LSTM cell state and emits the scale of a Gaussian forecast around the
//! LSTM mean. The agent's sampling variance can be chosen per iteration by
//! an adaptive exploration mechanism (a scheduled blend of reward mean and
//! reward dispersion maximized with particle swarm optimization).
//!
//! Module map:
//!
//! * [`numerics`]: Adam, seeded RNG streams, standard-normal functions.
//! * [`sessions`]: charging-session records, validation, synthesis, ACN adapter.
//! * [`transformer`]: per-hour session features, aggregation, windows, normalization.
//! * [`lstm`]: single-layer LSTM with analytic BPTT gradients and training.
//! * [`metrics`]: CRPS, Winkler, Pinball and prediction-interval bounds.
//! * [`env`]: the decision process over a frozen LSTM.
//! * [`ppo`]: actor/critic networks and the clipped-surrogate update.
//! * [`pso`]: global-best particle swarm optimizer.
//! * [`aeppo`]: adaptive exploration and the full agent training loop.
//! * [`pipeline`]: end-to-end training, forecasting and evaluation.

pub mod aeppo;
pub mod env;
pub mod error;
pub mod lstm;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod ppo;
pub mod pso;
pub mod sessions;
pub mod transformer;

pub use error::{Error, Result};
