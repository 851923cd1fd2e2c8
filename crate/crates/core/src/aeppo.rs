//! Adaptive exploration for PPO: each iteration a particle swarm picks the
//! sampling variance that maximizes a scheduled blend of the mean and the
//! dispersion of rewards around the actor's mean action.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{episode_starts, reward, Episode, DEFAULT_HORIZON, DELTA_FLOOR};
use crate::lstm::CellRecord;
use crate::numerics::{mean, softplus_inverse, variance, RngStream};
use crate::ppo::{
    actor_forward, collect_rollout, ppo_update, returns_and_advantages, Agent, Exploration, PpoConfig, Trajectory,
};
use crate::pso::{pso_minimize, PsoConfig};
use crate::{Error, Result};

const STREAM_AGENT: u64 = 10;
const STREAM_ITER: u64 = 11;

/// Weights on reward mean (`b1`) and reward dispersion (`b2`), tied by
/// `(b1 - 1)^2 + (b2 - 1)^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BPair {
    pub b1: f64,
    pub b2: f64,
}

/// Linear ramp `b1 = k / N_e` on the quarter circle.
pub fn b_schedule(k: usize, n_e: usize) -> Result<BPair> {
    if n_e == 0 || k > n_e {
        return Err(Error::Domain(format!("iteration {k} outside [0, {n_e}]")));
    }
    let b1 = k as f64 / n_e as f64;
    Ok(BPair {
        b1,
        b2: 1.0 - (1.0 - (b1 - 1.0).powi(2)).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub r_mean: f64,
    /// Population variance of the sampled rewards.
    pub r_var: f64,
    pub n_samples: usize,
}

impl MomentEstimate {
    pub fn from_rewards(rewards: &[f64]) -> MomentEstimate {
        MomentEstimate {
            r_mean: mean(rewards),
            r_var: variance(rewards),
            n_samples: rewards.len(),
        }
    }
}

pub fn exploration_fitness(b: BPair, m: &MomentEstimate) -> f64 {
    b.b1 * m.r_mean + b.b2 * m.r_var
}

/// Samples `n_a` actions from `N(a_mean, var)` at the episode's current state
/// and summarizes their rewards. The episode does not advance.
pub fn reward_moments(ep: &Episode<'_>, a_mean: f64, var: f64, n_a: usize, rng: &mut RngStream) -> Result<MomentEstimate> {
    if n_a < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n_a}")));
    }
    if !(var > 0.0) {
        return Err(Error::Domain(format!("sampling variance must be positive, got {var}")));
    }
    let sd = var.sqrt();
    let mut rewards = Vec::with_capacity(n_a);
    for _ in 0..n_a {
        rewards.push(ep.peek_reward(rng.gaussian(a_mean, sd)?)?);
    }
    Ok(MomentEstimate::from_rewards(&rewards))
}

/// Moments from fixed standard-normal draws `a = a_mean + sqrt(var) z`.
pub fn reward_moments_with(record: &CellRecord, a_mean: f64, var: f64, normals: &[f64]) -> Result<MomentEstimate> {
    let sd = var.sqrt();
    let mut rewards = Vec::with_capacity(normals.len());
    for z in normals {
        rewards.push(reward(record.y_hat, record.target, a_mean + sd * z)?);
    }
    Ok(MomentEstimate::from_rewards(&rewards))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationConfig {
    /// Actions sampled per state for the moment estimates.
    pub n_a: usize,
    /// States per iteration over which the fitness is averaged.
    pub batch: usize,
    pub var_min: f64,
    /// Upper variance bound; `None` uses `(2 * std of targets)^2`.
    pub var_max: Option<f64>,
    pub pso: PsoConfig,
    /// Points of the log-spaced grid candidate variances snap to; 0 disables snapping.
    pub grid_points: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            n_a: 32,
            batch: 16,
            var_min: 1e-4,
            var_max: None,
            pso: PsoConfig::default(),
            grid_points: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationResult {
    pub var: f64,
    /// Mean fitness over the batch at `var`.
    pub fitness: f64,
    /// Distinct variances whose fitness was computed.
    pub distinct: usize,
}

/// Variance that maximizes the batch-mean fitness under `b`.
///
/// Every candidate variance shares the same standard-normal draws per state,
/// so the objective is a deterministic function of the variance. The swarm
/// searches `log(var)`; with snapping enabled candidates are rounded to a
/// log-spaced grid and repeated grid points reuse cached fitness values.
pub fn optimize_exploration(
    batch: &[&CellRecord],
    a_means: &[f64],
    b: BPair,
    cfg: &ExplorationConfig,
    var_max: f64,
    rng: &mut RngStream,
) -> Result<ExplorationResult> {
    if batch.is_empty() || batch.len() != a_means.len() {
        return Err(Error::Domain("exploration needs a nonempty state batch with one mean per state".into()));
    }
    if cfg.n_a < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {}", cfg.n_a)));
    }
    if !(cfg.var_min > 0.0 && var_max > cfg.var_min) {
        return Err(Error::Domain(format!("invalid variance range [{}, {var_max}]", cfg.var_min)));
    }
    let normals: Vec<Vec<f64>> = batch
        .iter()
        .map(|_| (0..cfg.n_a).map(|_| rng.standard_normal()).collect())
        .collect();
    let (lo, hi) = (cfg.var_min.ln(), var_max.ln());
    let snap = |x: f64| -> (i64, f64) {
        if cfg.grid_points < 2 {
            return (i64::MIN, x.exp());
        }
        let step = (hi - lo) / (cfg.grid_points - 1) as f64;
        let idx = ((x - lo) / step).round() as i64;
        (idx, (lo + idx as f64 * step).exp())
    };
    let fitness = |var: f64| -> Result<f64> {
        let mut acc = 0.0;
        for ((rec, &m), z) in batch.iter().zip(a_means).zip(&normals) {
            acc += exploration_fitness(b, &reward_moments_with(rec, m, var, z)?);
        }
        Ok(acc / batch.len() as f64)
    };

    let mut cache: HashMap<i64, f64> = HashMap::new();
    let mut distinct = 0usize;
    let mut failure: Option<Error> = None;
    let objective = |x: &[f64]| -> f64 {
        let (key, var) = snap(x[0]);
        if key != i64::MIN {
            if let Some(v) = cache.get(&key) {
                return *v;
            }
        }
        distinct += 1;
        let v = match fitness(var) {
            Ok(f) => -f,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        };
        if key != i64::MIN {
            cache.insert(key, v);
        }
        v
    };
    let result = pso_minimize(objective, &[(lo, hi)], &cfg.pso, rng);
    if let Some(e) = failure {
        return Err(e);
    }
    let result = result?;
    Ok(ExplorationResult {
        var: snap(result.x[0]).1,
        fitness: -result.value,
        distinct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sampling variance chosen by the swarm each iteration.
    #[default]
    Aeppo,
    /// Vanilla PPO sampling from the actor's own scale head.
    Ppo,
}

impl Mode {
    pub fn tag(&self) -> &'static str {
        match self {
            Mode::Aeppo => "lstm-aeppo",
            Mode::Ppo => "lstm-ppo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeppoConfig {
    /// Training iterations `N_e`.
    pub iterations: usize,
    pub horizon: usize,
    /// Distance between episode starts.
    pub stride: usize,
    pub episodes_per_iteration: usize,
    pub ppo: PpoConfig,
    pub exploration: ExplorationConfig,
    pub mode: Mode,
    /// Start the actor's mean head at the scale of the LSTM residuals.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for AeppoConfig {
    fn default() -> Self {
        AeppoConfig {
            iterations: 10_000,
            horizon: DEFAULT_HORIZON,
            stride: DEFAULT_HORIZON,
            episodes_per_iteration: 1,
            ppo: PpoConfig::default(),
            exploration: ExplorationConfig::default(),
            mode: Mode::Aeppo,
            warm_start: true,
            seed: 0,
        }
    }
}

impl AeppoConfig {
    pub fn check(&self) -> Result<()> {
        if self.horizon == 0 || self.stride == 0 || self.episodes_per_iteration == 0 {
            return Err(Error::Validation("horizon, stride and episodes per iteration must be positive".into()));
        }
        if self.exploration.batch == 0 {
            return Err(Error::Validation("exploration batch must be positive".into()));
        }
        self.exploration.pso.check()?;
        self.ppo.check()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub k: usize,
    pub b1: f64,
    pub b2: f64,
    /// Sampling variance used for the rollout (mean over steps in PPO mode).
    pub var: f64,
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
}

pub const LOG_HEADER: [&str; 7] = ["k", "b1", "b2", "var", "mean_reward", "actor_loss", "critic_loss"];

pub fn training_log_csv(log: &[IterationLog]) -> String {
    let mut out = LOG_HEADER.join(",");
    out.push('\n');
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k, r.b1, r.b2, r.var, r.mean_reward, r.actor_loss, r.critic_loss
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeppoTraining {
    pub agent: Agent,
    pub log: Vec<IterationLog>,
    pub var_max: f64,
}

impl AeppoTraining {
    pub fn rewards(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.mean_reward).collect()
    }
}

/// Raw action whose forecast scale equals the residual standard deviation.
pub fn residual_action(records: &[CellRecord]) -> f64 {
    let resid: Vec<f64> = records.iter().map(|r| r.target - r.y_hat).collect();
    softplus_inverse((variance(&resid).sqrt() - DELTA_FLOOR).max(1e-6))
}

/// Default upper bound of the exploration variance.
pub fn default_var_max(records: &[CellRecord]) -> f64 {
    let targets: Vec<f64> = records.iter().map(|r| r.target).collect();
    (2.0 * variance(&targets).sqrt()).powi(2)
}

pub fn train_aeppo(records: &[CellRecord], cfg: &AeppoConfig) -> Result<AeppoTraining> {
    cfg.check()?;
    let starts = episode_starts(records.len(), cfg.horizon, cfg.stride);
    if starts.is_empty() {
        return Err(Error::Validation(format!(
            "{} cell records cannot hold one episode of {} steps",
            records.len(),
            cfg.horizon
        )));
    }
    let state_dim = records[0].c.len();
    let mut agent = Agent::new(state_dim, &mut RngStream::new(cfg.seed, STREAM_AGENT));
    if cfg.warm_start {
        agent.set_mean_bias(residual_action(records));
    }
    let var_max = cfg.exploration.var_max.unwrap_or_else(|| default_var_max(records));
    if !(var_max > cfg.exploration.var_min) {
        return Err(Error::Validation(format!(
            "exploration variance bound {var_max} does not exceed the floor {}",
            cfg.exploration.var_min
        )));
    }
    let base = RngStream::new(cfg.seed, STREAM_ITER);
    let mut log = Vec::with_capacity(cfg.iterations);

    for k in 1..=cfg.iterations {
        let mut run = || -> Result<IterationLog> {
            let mut rng = base.split(k as u64);
            let chosen: Vec<usize> = (0..cfg.episodes_per_iteration)
                .map(|_| starts[rng.below(starts.len())])
                .collect();
            let b = b_schedule(k, cfg.iterations)?;
            let (exploration, var) = match cfg.mode {
                Mode::Aeppo => {
                    let mut batch = Vec::with_capacity(cfg.exploration.batch);
                    let mut a_means = Vec::with_capacity(cfg.exploration.batch);
                    for _ in 0..cfg.exploration.batch {
                        let ep = chosen[rng.below(chosen.len())];
                        let rec = &records[ep + rng.below(cfg.horizon)];
                        a_means.push(actor_forward(&agent.actor, &rec.c)?.a_mean);
                        batch.push(rec);
                    }
                    let best = optimize_exploration(&batch, &a_means, b, &cfg.exploration, var_max, &mut rng)?;
                    (Exploration::Fixed(best.var), best.var)
                }
                Mode::Ppo => (Exploration::Actor, f64::NAN),
            };
            let mut traj: Trajectory = collect_rollout(records, &chosen, cfg.horizon, &agent.actor, exploration, &rng.split(0))?;
            returns_and_advantages(&mut traj, &agent.critic, cfg.ppo.gamma, cfg.ppo.return_mode, cfg.ppo.bootstrap)?;
            let stats = ppo_update(&mut agent, &traj, &cfg.ppo, cfg.mode == Mode::Ppo)?;
            let var = if var.is_nan() {
                mean(&traj.experiences.iter().map(|e| e.sample_scale.powi(2)).collect::<Vec<_>>())
            } else {
                var
            };
            Ok(IterationLog {
                k,
                b1: b.b1,
                b2: b.b2,
                var,
                mean_reward: traj.mean_episode_reward(),
                actor_loss: stats.actor_loss,
                critic_loss: stats.critic_loss,
            })
        };
        let row = run().map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("{m} at AePPO iteration {k}")),
            other => other,
        })?;
        log.push(row);
    }
    Ok(AeppoTraining { agent, log, var_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{delta_from_raw, ZETA};
    use crate::metrics::{crps_gaussian, GaussianForecast};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn schedule_endpoints_and_crossover() {
        assert_eq!(b_schedule(0, 100).unwrap(), BPair { b1: 0.0, b2: 1.0 });
        assert_eq!(b_schedule(100, 100).unwrap(), BPair { b1: 1.0, b2: 0.0 });
        let c = 1.0 - 1.0 / 2f64.sqrt();
        assert!(close(c, 0.292893, 1e-6));
        let b1 = c;
        let b2 = 1.0 - (1.0 - (b1 - 1.0).powi(2)).sqrt();
        assert!(close(b1, b2, 1e-12));
        assert!(b_schedule(101, 100).is_err() && b_schedule(0, 0).is_err());
    }

    #[test]
    fn schedule_circle_and_monotone() {
        let n = 2000;
        let pairs: Vec<BPair> = (0..=n).map(|k| b_schedule(k, n).unwrap()).collect();
        for p in &pairs {
            assert!(close((p.b1 - 1.0).powi(2) + (p.b2 - 1.0).powi(2), 1.0, 1e-12));
        }
        assert!(pairs.windows(2).all(|w| w[1].b1 >= w[0].b1 && w[1].b2 <= w[0].b2));
    }

    #[test]
    fn fitness_endpoints_and_linearity() {
        let m = MomentEstimate {
            r_mean: -1.0,
            r_var: 2.0,
            n_samples: 32,
        };
        assert_eq!(exploration_fitness(BPair { b1: 0.0, b2: 1.0 }, &m), 2.0);
        assert_eq!(exploration_fitness(BPair { b1: 1.0, b2: 0.0 }, &m), -1.0);
        let c = 0.292893;
        assert!(close(exploration_fitness(BPair { b1: c, b2: c }, &m), c, 1e-12));
        let b = BPair { b1: 0.4, b2: 0.2 };
        let scaled = MomentEstimate {
            r_mean: 3.0 * m.r_mean,
            r_var: 3.0 * m.r_var,
            n_samples: 32,
        };
        assert!(close(exploration_fitness(b, &scaled), 3.0 * exploration_fitness(b, &m), 1e-12));
    }

    fn record(y_hat: f64, target: f64) -> CellRecord {
        CellRecord {
            t: 0,
            c: vec![0.1, -0.2],
            y_hat,
            target,
        }
    }

    #[test]
    fn degenerate_sampling_moments() {
        let recs = vec![record(0.2, 0.9); 3];
        let (ep, _) = Episode::reset(&recs, 0, 2).unwrap();
        let m = reward_moments(&ep, -0.4, 1e-12, 32, &mut RngStream::new(1, 0)).unwrap();
        assert!(m.r_var < 1e-10);
        assert!(close(m.r_mean, ep.peek_reward(-0.4).unwrap(), 1e-6));
        assert_eq!(ep.cursor(), 0);
        let again = reward_moments(&ep, -0.4, 1e-12, 32, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(m, again);
        assert!(reward_moments(&ep, 0.0, 0.1, 1, &mut RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn moment_mean_matches_monte_carlo_reference() {
        let recs = vec![record(0.0, 0.7)];
        let (ep, _) = Episode::reset(&recs, 0, 1).unwrap();
        let m = reward_moments(&ep, -0.5, 0.25, 10_000, &mut RngStream::new(3, 0)).unwrap();
        let mut rng = RngStream::new(4, 0);
        let reference: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let a = -0.5 + 0.5 * rng.standard_normal();
                -ZETA * crps_gaussian(GaussianForecast::new(0.0, delta_from_raw(a)).unwrap(), 0.7).unwrap()
            })
            .collect();
        let sd = variance(&reference).sqrt();
        assert!((m.r_mean - mean(&reference)).abs() <= 3.0 * sd / 100.0);
    }

    fn scan(batch: &[&CellRecord], a_means: &[f64], b: BPair, cfg: &ExplorationConfig, var_max: f64, seed: u64) -> (f64, f64) {
        // same draws as optimize_exploration consumes first
        let mut rng = RngStream::new(seed, 0);
        let normals: Vec<Vec<f64>> = batch
            .iter()
            .map(|_| (0..cfg.n_a).map(|_| rng.standard_normal()).collect())
            .collect();
        let (lo, hi) = (cfg.var_min.ln(), var_max.ln());
        (0..200)
            .map(|i| {
                let var = (lo + (hi - lo) * i as f64 / 199.0).exp();
                let f: f64 = batch
                    .iter()
                    .zip(a_means)
                    .zip(&normals)
                    .map(|((r, &m), z)| exploration_fitness(b, &reward_moments_with(r, m, var, z).unwrap()))
                    .sum::<f64>()
                    / batch.len() as f64;
                (var, f)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    }

    #[test]
    fn mean_focus_prefers_floor_when_spread_hurts() {
        // a_mean already gives the best scale, so spreading only lowers both moments
        let rec = record(0.0, 0.0);
        let best_a = (0..2000)
            .map(|i| -8.0 + i as f64 * 0.005)
            .max_by(|a, b| reward(0.0, 0.0, *a).unwrap().total_cmp(&reward(0.0, 0.0, *b).unwrap()))
            .unwrap();
        let cfg = ExplorationConfig::default();
        let b = BPair { b1: 1.0, b2: 0.0 };
        let out = optimize_exploration(&[&rec], &[best_a], b, &cfg, 4.0, &mut RngStream::new(5, 0)).unwrap();
        let (grid_var, _) = scan(&[&rec], &[best_a], b, &cfg, 4.0, 5);
        assert!(out.var <= 2.0 * cfg.var_min, "{}", out.var);
        assert!(grid_var <= 2.0 * cfg.var_min);
    }

    #[test]
    fn dispersion_focus_leaves_floor() {
        let rec = record(0.0, 1.0);
        let cfg = ExplorationConfig::default();
        let b = b_schedule(0, 100).unwrap();
        let out = optimize_exploration(&[&rec], &[0.0], b, &cfg, 4.0, &mut RngStream::new(6, 0)).unwrap();
        assert!(out.var > 10.0 * cfg.var_min, "{}", out.var);
        let (grid_var, grid_f) = scan(&[&rec], &[0.0], b, &cfg, 4.0, 6);
        assert!(out.fitness >= grid_f - 1e-6, "{} < {grid_f} at {grid_var}", out.fitness);
    }

    #[test]
    fn mean_focus_matches_grid_scan() {
        let recs: Vec<CellRecord> = (0..16).map(|i| record(0.1 * i as f64, 0.05 * i as f64 - 0.3)).collect();
        let batch: Vec<&CellRecord> = recs.iter().collect();
        let a_means: Vec<f64> = (0..16).map(|i| -1.0 + 0.05 * i as f64).collect();
        let cfg = ExplorationConfig::default();
        let b = BPair { b1: 1.0, b2: 0.0 };
        let var_max = 4.0;
        let out = optimize_exploration(&batch, &a_means, b, &cfg, var_max, &mut RngStream::new(7, 0)).unwrap();
        let (grid_var, grid_f) = scan(&batch, &a_means, b, &cfg, var_max, 7);
        let spacing = (var_max.ln() - cfg.var_min.ln()) / 199.0;
        assert!(
            (out.var.ln() - grid_var.ln()).abs() <= spacing || out.fitness >= grid_f,
            "{} vs {grid_var}",
            out.var
        );
    }

    #[test]
    fn optimizer_is_deterministic() {
        let recs = [record(0.3, -0.2), record(-0.5, 0.4)];
        let batch: Vec<&CellRecord> = recs.iter().collect();
        let b = b_schedule(30, 100).unwrap();
        let cfg = ExplorationConfig::default();
        let run = || optimize_exploration(&batch, &[0.1, -0.3], b, &cfg, 3.0, &mut RngStream::new(8, 0)).unwrap();
        assert_eq!(run(), run());
        assert!(optimize_exploration(&[], &[], b, &cfg, 3.0, &mut RngStream::new(8, 0)).is_err());
    }

    fn synthetic_records(n: usize, seed: u64) -> Vec<CellRecord> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|t| {
                let regime = if (t / 24) % 2 == 0 { 0.1 } else { 0.6 };
                CellRecord {
                    t: t as i64,
                    c: vec![if regime < 0.5 { 0.5 } else { -0.5 }, ((t % 24) as f64 / 12.0) - 1.0],
                    y_hat: 0.0,
                    target: rng.gaussian(0.0, regime).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn zero_iterations_return_initial_agent() {
        let recs = synthetic_records(60, 1);
        let cfg = AeppoConfig {
            iterations: 0,
            horizon: 20,
            stride: 20,
            seed: 4,
            ..AeppoConfig::default()
        };
        let out = train_aeppo(&recs, &cfg).unwrap();
        assert!(out.log.is_empty());
        let mut expected = Agent::new(2, &mut RngStream::new(4, STREAM_AGENT));
        expected.set_mean_bias(residual_action(&recs));
        assert_eq!(out.agent, expected);

        let cold = train_aeppo(&recs, &AeppoConfig { warm_start: false, ..cfg }).unwrap();
        assert_eq!(cold.agent, Agent::new(2, &mut RngStream::new(4, STREAM_AGENT)));
    }

    #[test]
    fn short_runs_are_deterministic_and_logged() {
        let recs = synthetic_records(120, 2);
        for mode in [Mode::Aeppo, Mode::Ppo] {
            let cfg = AeppoConfig {
                iterations: 6,
                horizon: 24,
                stride: 24,
                mode,
                seed: 9,
                exploration: ExplorationConfig {
                    pso: PsoConfig {
                        iterations: 10,
                        ..PsoConfig::default()
                    },
                    ..ExplorationConfig::default()
                },
                ..AeppoConfig::default()
            };
            let a = train_aeppo(&recs, &cfg).unwrap();
            let b = train_aeppo(&recs, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.log.len(), 6);
            assert!(a.log.iter().all(|r| r.mean_reward <= 0.0 && r.var > 0.0));
            let csv = training_log_csv(&a.log);
            assert!(csv.starts_with("k,b1,b2,var,mean_reward,actor_loss,critic_loss\n"));
            assert_eq!(csv.lines().count(), 7);
        }
    }

    #[test]
    fn too_short_series_rejected() {
        let recs = synthetic_records(10, 3);
        assert!(matches!(
            train_aeppo(&recs, &AeppoConfig::default()),
            Err(Error::Validation(_))
        ));
    }
}
