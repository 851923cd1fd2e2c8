//! Global-best particle swarm optimization.

use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub population: usize,
    pub iterations: usize,
    /// Cognitive learning factor.
    pub e1: f64,
    /// Social learning factor.
    pub e2: f64,
    pub inertia: f64,
    /// Maximum speed per dimension as a fraction of that dimension's range.
    pub velocity_clamp: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            population: 20,
            iterations: 100,
            e1: 2.0,
            e2: 2.0,
            inertia: 0.7,
            velocity_clamp: 0.2,
        }
    }
}

impl PsoConfig {
    pub fn check(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Validation("PSO population must be positive".into()));
        }
        if !(self.velocity_clamp > 0.0) {
            return Err(Error::Validation("PSO velocity clamp must be positive".into()));
        }
        for (name, v) in [("e1", self.e1), ("e2", self.e2), ("inertia", self.inertia)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("PSO {name} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    /// Objective evaluations performed by one run.
    pub fn evaluations(&self) -> usize {
        self.population * (self.iterations + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Global-best value after the initial sweep and after every iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Swarm state, exposed for inspection between iterations.
#[derive(Debug, Clone)]
pub struct Swarm {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub pbest: Vec<Vec<f64>>,
    pub pbest_value: Vec<f64>,
    pub gbest: Vec<f64>,
    pub gbest_value: f64,
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Domain("PSO needs at least one dimension".into()));
    }
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::Domain(format!("invalid bounds [{lo}, {hi}] in dimension {d}")));
        }
    }
    Ok(())
}

fn evaluate<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], count: &mut usize) -> Result<f64> {
    *count += 1;
    let v = f(x);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective returned {v} at {x:?}")));
    }
    Ok(v)
}

/// Minimizes `f` over the box `bounds`.
pub fn pso_minimize<F>(mut f: F, bounds: &[(f64, f64)], cfg: &PsoConfig, rng: &mut RngStream) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> f64,
{
    check_bounds(bounds)?;
    cfg.check()?;
    let vmax: Vec<f64> = bounds.iter().map(|(lo, hi)| cfg.velocity_clamp * (hi - lo)).collect();
    let mut evaluations = 0;

    let mut positions = Vec::with_capacity(cfg.population);
    let mut velocities = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        positions.push(bounds.iter().map(|&(lo, hi)| rng.uniform_range(lo, hi)).collect::<Vec<f64>>());
        velocities.push(vmax.iter().map(|&m| rng.uniform_range(-m, m)).collect::<Vec<f64>>());
    }
    let mut pbest_value = Vec::with_capacity(cfg.population);
    for x in &positions {
        pbest_value.push(evaluate(&mut f, x, &mut evaluations)?);
    }
    let mut swarm = Swarm {
        pbest: positions.clone(),
        positions,
        velocities,
        gbest: Vec::new(),
        gbest_value: f64::INFINITY,
        pbest_value,
    };
    refresh_gbest(&mut swarm);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(swarm.gbest_value);

    for _ in 0..cfg.iterations {
        for i in 0..cfg.population {
            for d in 0..bounds.len() {
                let (r1, r2) = (rng.uniform(), rng.uniform());
                let x = swarm.positions[i][d];
                let v = cfg.inertia * swarm.velocities[i][d]
                    + cfg.e1 * r1 * (swarm.pbest[i][d] - x)
                    + cfg.e2 * r2 * (swarm.gbest[d] - x);
                let v = v.clamp(-vmax[d], vmax[d]);
                swarm.velocities[i][d] = v;
                swarm.positions[i][d] = (x + v).clamp(bounds[d].0, bounds[d].1);
            }
        }
        for i in 0..cfg.population {
            let v = evaluate(&mut f, &swarm.positions[i], &mut evaluations)?;
            if v < swarm.pbest_value[i] {
                swarm.pbest_value[i] = v;
                swarm.pbest[i].clone_from(&swarm.positions[i]);
            }
        }
        refresh_gbest(&mut swarm);
        trace.push(swarm.gbest_value);
    }

    Ok(PsoResult {
        x: swarm.gbest,
        value: swarm.gbest_value,
        trace,
        evaluations,
    })
}

// Strict comparison in index order keeps the lowest index on ties.
fn refresh_gbest(swarm: &mut Swarm) {
    for (i, &v) in swarm.pbest_value.iter().enumerate() {
        if v < swarm.gbest_value || swarm.gbest.is_empty() {
            swarm.gbest_value = v;
            swarm.gbest.clone_from(&swarm.pbest[i]);
        }
    }
}
