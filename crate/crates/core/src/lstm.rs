//! Single-layer LSTM with a scalar readout, hand-derived backpropagation
//! through time and per-sample Adam training.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{sigmoid, AdamState, ParamSet, RngStream};
use crate::transformer::{FeatureFrame, WindowedSample, NUM_FEATURES};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_PATIENCE: usize = 20;
pub const FORMAT_TAG: &str = "evcs-lstm";
pub const FORMAT_VERSION: u32 = 1;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// `y_hat = W_y . h + b_y`.
    #[default]
    Linear,
    /// `y_hat = h` with `H = 1`; `W_y` and `b_y` are ignored and never trained.
    Identity,
}

/// Gate weights act on the concatenation `[h, x]`, stored row-major as
/// `H x (H + N_f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub hidden: usize,
    pub inputs: usize,
    pub readout: Readout,
    pub w_i: Vec<f64>,
    pub w_f: Vec<f64>,
    pub w_o: Vec<f64>,
    pub w_c: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_c: Vec<f64>,
    pub w_y: Vec<f64>,
    pub b_y: f64,
}

pub const TENSOR_NAMES: [&str; 10] = ["W_i", "W_f", "W_o", "W_c", "b_i", "b_f", "b_o", "b_c", "W_y", "b_y"];

impl ParamSet for LstmParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            &self.w_i,
            &self.w_f,
            &self.w_o,
            &self.w_c,
            &self.b_i,
            &self.b_f,
            &self.b_o,
            &self.b_c,
            &self.w_y,
            std::slice::from_ref(&self.b_y),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
            &mut self.w_y,
            std::slice::from_mut(&mut self.b_y),
        ]
    }
}

impl LstmParams {
    pub fn zeros(hidden: usize, inputs: usize, readout: Readout) -> Self {
        let m = hidden * (hidden + inputs);
        LstmParams {
            hidden,
            inputs,
            readout,
            w_i: vec![0.0; m],
            w_f: vec![0.0; m],
            w_o: vec![0.0; m],
            w_c: vec![0.0; m],
            b_i: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
            w_y: vec![0.0; hidden],
            b_y: 0.0,
        }
    }

    /// Gate weights and readout uniform in `+-1/sqrt(H + N_f)`, forget bias 1,
    /// other biases 0. Identity readout fixes `W_y = [1]`, `b_y = 0`.
    pub fn init(hidden: usize, inputs: usize, readout: Readout, rng: &mut RngStream) -> Result<Self> {
        if hidden == 0 || inputs == 0 {
            return Err(Error::Shape("LSTM needs positive hidden and input sizes".into()));
        }
        if readout == Readout::Identity && hidden != 1 {
            return Err(Error::Shape(format!("identity readout requires H = 1, got H = {hidden}")));
        }
        let mut p = Self::zeros(hidden, inputs, readout);
        let r = 1.0 / ((hidden + inputs) as f64).sqrt();
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_c] {
            w.iter_mut().for_each(|v| *v = rng.uniform_range(-r, r));
        }
        p.b_f.iter_mut().for_each(|v| *v = 1.0);
        match readout {
            Readout::Linear => p.w_y.iter_mut().for_each(|v| *v = rng.uniform_range(-r, r)),
            Readout::Identity => p.w_y[0] = 1.0,
        }
        Ok(p)
    }

    pub fn cols(&self) -> usize {
        self.hidden + self.inputs
    }

    pub fn check_shapes(&self) -> Result<()> {
        let m = self.hidden * self.cols();
        let ok = [&self.w_i, &self.w_f, &self.w_o, &self.w_c].iter().all(|w| w.len() == m)
            && [&self.b_i, &self.b_f, &self.b_o, &self.b_c, &self.w_y]
                .iter()
                .all(|b| b.len() == self.hidden);
        if !ok || self.hidden == 0 || (self.readout == Readout::Identity && self.hidden != 1) {
            return Err(Error::Shape(format!(
                "LSTM tensors inconsistent with H = {}, N_f = {}",
                self.hidden, self.inputs
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PersistedLstm {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            hidden: self.hidden,
            inputs: self.inputs,
            params: self.clone(),
        })?)
    }

    /// Loads a weight file, rejecting unknown formats, versions or shapes.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: PersistedLstm = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported weight file {} v{} (expected {FORMAT_TAG} v{FORMAT_VERSION})",
                file.format, file.version
            )));
        }
        if file.hidden != file.params.hidden || file.inputs != file.params.inputs {
            return Err(Error::Shape("weight file header disagrees with its tensors".into()));
        }
        file.params.check_shapes()?;
        Ok(file.params)
    }
}

#[derive(Serialize, Deserialize)]
struct PersistedLstm {
    format: String,
    version: u32,
    hidden: usize,
    inputs: usize,
    params: LstmParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Intermediates of one step kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    /// `[h_prev, x]`.
    pub z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    /// Candidate cell `c~`.
    pub g: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowCache {
    pub steps: Vec<StepCache>,
    pub y_hat: f64,
}

fn affine(w: &[f64], b: &[f64], z: &[f64]) -> Vec<f64> {
    let cols = z.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + w[r * cols..(r + 1) * cols].iter().zip(z).map(|(a, x)| a * x).sum::<f64>())
        .collect()
}

pub fn forward_step(p: &LstmParams, x: &[f64], state: &LstmState) -> Result<(LstmState, StepCache)> {
    if x.len() != p.inputs || state.h.len() != p.hidden || state.c.len() != p.hidden {
        return Err(Error::Shape(format!(
            "forward_step: x has {} features, state has H = {}; model expects {} and {}",
            x.len(),
            state.h.len(),
            p.inputs,
            p.hidden
        )));
    }
    let mut z = Vec::with_capacity(p.cols());
    z.extend_from_slice(&state.h);
    z.extend_from_slice(x);

    let i: Vec<f64> = affine(&p.w_i, &p.b_i, &z).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = affine(&p.w_f, &p.b_f, &z).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = affine(&p.w_o, &p.b_o, &z).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = affine(&p.w_c, &p.b_c, &z).into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..p.hidden).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();

    if !c.iter().chain(&h).all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite LSTM state".into()));
    }
    let next = LstmState { h: h.clone(), c: c.clone() };
    Ok((
        next,
        StepCache {
            z,
            i,
            f,
            o,
            g,
            c_prev: state.c.clone(),
            c,
            tanh_c,
            h,
        },
    ))
}

fn readout(p: &LstmParams, h: &[f64]) -> f64 {
    match p.readout {
        Readout::Linear => p.b_y + p.w_y.iter().zip(h).map(|(a, b)| a * b).sum::<f64>(),
        Readout::Identity => h[0],
    }
}

/// Runs a window from the zero state and reads out the next-hour forecast.
pub fn predict_window<R: AsRef<[f64]>>(p: &LstmParams, x: &[R]) -> Result<(f64, LstmState, WindowCache)> {
    if x.is_empty() {
        return Err(Error::Shape("empty input window".into()));
    }
    let mut state = LstmState::zeros(p.hidden);
    let mut steps = Vec::with_capacity(x.len());
    for (k, row) in x.iter().enumerate() {
        let (next, cache) = forward_step(p, row.as_ref(), &state).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("{m} at window step {k}")),
            other => other,
        })?;
        state = next;
        steps.push(cache);
    }
    let y_hat = readout(p, &state.h);
    if !y_hat.is_finite() {
        return Err(Error::Numeric("non-finite LSTM readout".into()));
    }
    Ok((y_hat, state, WindowCache { steps, y_hat }))
}

/// Gradients of `L = (y_hat - target)^2 / 2` for every parameter tensor.
pub fn backward_window(p: &LstmParams, cache: &WindowCache, target: f64) -> LstmParams {
    let hn = p.hidden;
    let cols = p.cols();
    let mut grad = LstmParams::zeros(hn, p.inputs, p.readout);
    let dy = cache.y_hat - target;
    let last = cache.steps.last().expect("window cache is never empty");

    let mut dh = vec![0.0; hn];
    match p.readout {
        Readout::Linear => {
            grad.b_y = dy;
            for k in 0..hn {
                grad.w_y[k] = dy * last.h[k];
                dh[k] = dy * p.w_y[k];
            }
        }
        Readout::Identity => dh[0] = dy,
    }
    let mut dc_next = vec![0.0; hn];
    let mut da = [vec![0.0; hn], vec![0.0; hn], vec![0.0; hn], vec![0.0; hn]];

    for s in cache.steps.iter().rev() {
        for k in 0..hn {
            let dc = dc_next[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_o = dh[k] * s.tanh_c[k];
            let d_f = dc * s.c_prev[k];
            let d_i = dc * s.g[k];
            let d_g = dc * s.i[k];
            dc_next[k] = dc * s.f[k];
            da[0][k] = d_i * s.i[k] * (1.0 - s.i[k]);
            da[1][k] = d_f * s.f[k] * (1.0 - s.f[k]);
            da[2][k] = d_o * s.o[k] * (1.0 - s.o[k]);
            da[3][k] = d_g * (1.0 - s.g[k] * s.g[k]);
        }
        let mut dz = vec![0.0; cols];
        let gates = [
            (&p.w_i, &mut grad.w_i, &mut grad.b_i),
            (&p.w_f, &mut grad.w_f, &mut grad.b_f),
            (&p.w_o, &mut grad.w_o, &mut grad.b_o),
            (&p.w_c, &mut grad.w_c, &mut grad.b_c),
        ];
        for ((w, gw, gb), a) in gates.into_iter().zip(&da) {
            for r in 0..hn {
                gb[r] += a[r];
                let row = r * cols;
                for j in 0..cols {
                    gw[row + j] += a[r] * s.z[j];
                    dz[j] += w[row + j] * a[r];
                }
            }
        }
        dh.copy_from_slice(&dz[..hn]);
    }
    grad
}

/// Chronological split fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn check(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|v| !(*v >= 0.0)) || ((self.train + self.valid + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions must be nonnegative and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// `(train, valid, test)` sample counts for `n` samples; the test split takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = (n as f64 * self.train).floor() as usize;
        let valid = ((n as f64 * self.valid).floor() as usize).min(n - train);
        (train, valid, n - train - valid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    pub seed: u64,
    pub split: SplitFractions,
    /// `H = 1` with the hidden state itself as the forecast.
    pub strict_paper: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN,
            lr: DEFAULT_LR,
            epochs: 200,
            patience: Some(DEFAULT_PATIENCE),
            seed: 0,
            split: SplitFractions::default(),
            strict_paper: false,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Validation(format!("LSTM learning rate must be positive, got {}", self.lr)));
        }
        if self.hidden == 0 {
            return Err(Error::Validation("LSTM hidden size must be positive".into()));
        }
        if self.strict_paper && self.hidden != 1 {
            return Err(Error::Validation("strict-paper LSTM requires hidden = 1".into()));
        }
        self.split.check()
    }

    pub fn readout(&self) -> Readout {
        if self.strict_paper {
            Readout::Identity
        } else {
            Readout::Linear
        }
    }

    pub fn initial_params(&self) -> Result<LstmParams> {
        LstmParams::init(
            self.hidden,
            NUM_FEATURES,
            self.readout(),
            &mut RngStream::new(self.seed, STREAM_INIT),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error over the epoch's training samples, each taken before its update.
    pub train_mse: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmTraining {
    pub params: LstmParams,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub initial_train_mse: f64,
    pub initial_valid_mse: f64,
}

pub fn mse(p: &LstmParams, samples: &[WindowedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("mse of an empty sample set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let (y_hat, _, _) = predict_window(p, &s.x)?;
        total += (y_hat - s.target).powi(2);
    }
    Ok(total / samples.len() as f64)
}

/// Trains on the chronological train split with early stopping on the
/// validation split and returns the best-validation parameters.
pub fn train_lstm(samples: &[WindowedSample], cfg: &TrainConfig) -> Result<LstmTraining> {
    cfg.check()?;
    let (n_train, n_valid, _) = cfg.split.counts(samples.len());
    if n_train < 2 || n_valid < 2 {
        return Err(Error::Validation(format!(
            "{} samples give {n_train} training and {n_valid} validation samples; need at least 2 each",
            samples.len()
        )));
    }
    let train = &samples[..n_train];
    let valid = &samples[n_train..n_train + n_valid];

    let mut params = cfg.initial_params()?;
    let mut adam = AdamState::new(&params);
    let mut rng = RngStream::new(cfg.seed, STREAM_SHUFFLE);
    let initial_train_mse = mse(&params, train)?;
    let initial_valid_mse = mse(&params, valid)?;
    let mut best = (initial_valid_mse, 0usize, params.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for &idx in &order {
            let s = &train[idx];
            let (y_hat, _, cache) = predict_window(&params, &s.x).map_err(|e| epoch_error(e, epoch))?;
            sum += (y_hat - s.target).powi(2);
            let grad = backward_window(&params, &cache, s.target);
            adam.update(&mut params, &grad, cfg.lr)?;
        }
        let train_mse = sum / n_train as f64;
        let valid_mse = mse(&params, valid).map_err(|e| epoch_error(e, epoch))?;
        if !train_mse.is_finite() || !valid_mse.is_finite() || !params.all_finite() {
            return Err(Error::Numeric(format!("LSTM loss diverged at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_mse,
            valid_mse,
        });
        if valid_mse < best.0 {
            best = (valid_mse, epoch, params.clone());
        } else if cfg.patience.is_some_and(|p| epoch - best.1 >= p) {
            break;
        }
    }
    Ok(LstmTraining {
        params: best.2,
        history,
        best_epoch: best.1,
        initial_train_mse,
        initial_valid_mse,
    })
}

fn epoch_error(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{m} in epoch {epoch}")),
        other => other,
    }
}

/// Cell state and forecast of the window ending at hour `t`, paired with the
/// realized value at `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub t: i64,
    pub c: Vec<f64>,
    pub y_hat: f64,
    pub target: f64,
}

/// One record per window with a known next-hour target, in time order.
pub fn extract_cell_states(p: &LstmParams, frames: &[FeatureFrame], n_h: usize) -> Result<Vec<CellRecord>> {
    if n_h == 0 || frames.len() <= n_h {
        return Err(Error::Domain(format!(
            "need more than N_h = {n_h} frames, got {}",
            frames.len()
        )));
    }
    crate::transformer::check_contiguous(frames)?;
    (n_h..frames.len())
        .into_par_iter()
        .map(|i| {
            let window: Vec<[f64; NUM_FEATURES]> = frames[i - n_h..i].iter().map(FeatureFrame::values).collect();
            let (y_hat, state, _) = predict_window(p, &window)?;
            Ok(CellRecord {
                t: frames[i - 1].t,
                c: state.c,
                y_hat,
                target: frames[i].energy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_params(h: usize, seed: u64) -> LstmParams {
        let mut rng = RngStream::new(seed, 99);
        let mut p = LstmParams::init(h, NUM_FEATURES, Readout::Linear, &mut rng).unwrap();
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.uniform_range(-0.5, 0.5));
        }
        p
    }

    fn random_window(n: usize, rng: &mut RngStream) -> Vec<[f64; NUM_FEATURES]> {
        (0..n)
            .map(|_| [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()])
            .collect()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(3, NUM_FEATURES, Readout::Linear);
        let (s, cache) = forward_step(&p, &[1.0, -2.0, 3.0], &LstmState::zeros(3)).unwrap();
        assert!(cache.i.iter().chain(&cache.f).chain(&cache.o).all(|&v| v == 0.5));
        assert!(cache.g.iter().chain(&s.c).chain(&s.h).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_unit_cell() {
        let p = LstmParams::zeros(2, NUM_FEATURES, Readout::Linear);
        let state = LstmState {
            h: vec![0.0; 2],
            c: vec![1.0; 2],
        };
        let (s, _) = forward_step(&p, &[0.3, 0.1, 0.2], &state).unwrap();
        assert!(s.c.iter().all(|&v| v == 0.5));
        assert!(s.h.iter().all(|&v| close(v, 0.231059, 1e-6)));
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut p = LstmParams::zeros(1, NUM_FEATURES, Readout::Identity);
        p.b_f[0] = 50.0;
        p.w_c = vec![0.0, 0.4, 0.0, 0.0];
        let state = LstmState { h: vec![0.2], c: vec![0.7] };
        let (s, cache) = forward_step(&p, &[1.0, 0.0, 0.0], &state).unwrap();
        assert!(close(s.c[0], 0.7 + cache.i[0] * cache.g[0], 1e-12));
    }

    #[test]
    fn readout_passthrough() {
        let mut p = LstmParams::zeros(4, NUM_FEATURES, Readout::Linear);
        let x = vec![[1.0, 2.0, 3.0]; 5];
        assert_eq!(predict_window(&p, &x).unwrap().0, 0.0);
        p.b_y = 7.0;
        assert_eq!(predict_window(&p, &x).unwrap().0, 7.0);
    }

    // Independent straight-line evaluation with fixed H = 4 and explicit loops.
    fn reference_predict(p: &LstmParams, x: &[[f64; 3]]) -> f64 {
        let mut h = [0.0f64; 4];
        let mut c = [0.0f64; 4];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for row in x {
            let z = [h[0], h[1], h[2], h[3], row[0], row[1], row[2]];
            let gate = |w: &[f64], b: &[f64], r: usize| {
                let mut acc = b[r];
                for j in 0..7 {
                    acc += w[r * 7 + j] * z[j];
                }
                acc
            };
            let mut nh = [0.0; 4];
            for r in 0..4 {
                let i = sig(gate(&p.w_i, &p.b_i, r));
                let f = sig(gate(&p.w_f, &p.b_f, r));
                let o = sig(gate(&p.w_o, &p.b_o, r));
                let g = gate(&p.w_c, &p.b_c, r).tanh();
                c[r] = f * c[r] + i * g;
                nh[r] = o * c[r].tanh();
            }
            h = nh;
        }
        p.b_y + (0..4).map(|k| p.w_y[k] * h[k]).sum::<f64>()
    }

    #[test]
    fn matches_straight_line_reference() {
        let p = random_params(4, 1);
        let mut rng = RngStream::new(1, 5);
        let x = random_window(3, &mut rng);
        let (y, _, _) = predict_window(&p, &x).unwrap();
        assert!(close(y, reference_predict(&p, &x), 1e-12));
    }

    /// Largest per-tensor relative error between analytic and central-difference gradients.
    pub(crate) fn gradient_check(p: &LstmParams, x: &[[f64; 3]], target: f64) -> Vec<(&'static str, f64)> {
        let (_, _, cache) = predict_window(p, x).unwrap();
        let analytic = backward_window(p, &cache, target);
        let loss = |q: &LstmParams| 0.5 * (predict_window(q, x).unwrap().0 - target).powi(2);
        let step = 1e-5;
        let mut out = Vec::new();
        for (k, name) in TENSOR_NAMES.iter().enumerate() {
            let n = p.tensors()[k].len();
            let mut diff2 = 0.0;
            let mut norm_a = 0.0;
            let mut norm_n = 0.0;
            for j in 0..n {
                let mut plus = p.clone();
                plus.tensors_mut()[k][j] += step;
                let mut minus = p.clone();
                minus.tensors_mut()[k][j] -= step;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let a = analytic.tensors()[k][j];
                diff2 += (a - numeric).powi(2);
                norm_a += a * a;
                norm_n += numeric * numeric;
            }
            let denom = norm_a.sqrt().max(norm_n.sqrt()).max(1e-12);
            out.push((*name, diff2.sqrt() / denom));
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let p = random_params(4, seed);
            let mut rng = RngStream::new(seed, 7);
            let x = random_window(3, &mut rng);
            for (name, err) in gradient_check(&p, &x, rng.standard_normal()) {
                assert!(err <= 1e-5, "seed {seed} {name}: {err:e}");
            }
        }
    }

    #[test]
    fn strict_mode_gradients_match() {
        let mut rng = RngStream::new(3, 0);
        let mut p = LstmParams::init(1, NUM_FEATURES, Readout::Identity, &mut rng).unwrap();
        p.b_i[0] = 0.3;
        let x = random_window(4, &mut rng);
        for (name, err) in gradient_check(&p, &x, 0.4) {
            if name == "W_y" || name == "b_y" {
                continue;
            }
            assert!(err <= 1e-5, "{name}: {err:e}");
        }
        let (_, _, cache) = predict_window(&p, &x).unwrap();
        let g = backward_window(&p, &cache, 0.4);
        assert_eq!((g.w_y[0], g.b_y), (0.0, 0.0));
    }

    #[test]
    fn exact_target_gives_zero_gradient() {
        let p = random_params(4, 2);
        let x = random_window(3, &mut RngStream::new(2, 0));
        let (y, _, cache) = predict_window(&p, &x).unwrap();
        let g = backward_window(&p, &cache, y);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        let g = backward_window(&p, &cache, y - 0.25);
        assert_eq!(g.b_y, 0.25);
    }

    #[test]
    fn shape_errors() {
        let p = LstmParams::zeros(2, NUM_FEATURES, Readout::Linear);
        assert!(matches!(forward_step(&p, &[1.0], &LstmState::zeros(2)), Err(Error::Shape(_))));
        assert!(LstmParams::init(3, 3, Readout::Identity, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let p = random_params(3, 4);
        let text = p.to_json().unwrap();
        assert_eq!(LstmParams::from_json(&text).unwrap(), p);
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(LstmParams::from_json(&bumped), Err(Error::Validation(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["params"]["w_i"].as_array_mut().unwrap().pop();
        assert!(matches!(LstmParams::from_json(&v.to_string()), Err(Error::Shape(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["hidden"] = 5.into();
        assert!(matches!(LstmParams::from_json(&v.to_string()), Err(Error::Shape(_))));
    }

    fn series_samples(values: &[f64], n_h: usize) -> Vec<WindowedSample> {
        let frames: Vec<FeatureFrame> = values
            .iter()
            .enumerate()
            .map(|(t, &v)| FeatureFrame::from_values(t as i64, [v, 0.5 * v, -v]))
            .collect();
        crate::transformer::make_windows(&frames, n_h).unwrap()
    }

    #[test]
    fn zero_epochs_return_initial_params() {
        let values: Vec<f64> = (0..60).map(|t| (t as f64 * 0.3).sin()).collect();
        let cfg = TrainConfig {
            hidden: 4,
            epochs: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train_lstm(&series_samples(&values, 6), &cfg).unwrap();
        assert_eq!(out.params, cfg.initial_params().unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn too_few_samples_rejected() {
        let values: Vec<f64> = (0..14).map(|t| t as f64).collect();
        let cfg = TrainConfig {
            hidden: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(train_lstm(&series_samples(&values, 6), &cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let values: Vec<f64> = (0..80).map(|t| (t as f64 * 0.26).sin()).collect();
        let cfg = TrainConfig {
            hidden: 4,
            epochs: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let s = series_samples(&values, 6);
        assert_eq!(train_lstm(&s, &cfg).unwrap(), train_lstm(&s, &cfg).unwrap());
    }

    #[test]
    fn learns_noisy_sinusoid() {
        let mut rng = RngStream::new(21, 0);
        let values: Vec<f64> = (0..400)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + rng.gaussian(0.0, 0.05).unwrap())
            .collect();
        let cfg = TrainConfig {
            hidden: 16,
            epochs: 200,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train_lstm(&series_samples(&values, 12), &cfg).unwrap();
        let final_train = mse(&out.params, &series_samples(&values, 12)[..300]).unwrap();
        assert!(
            final_train <= 0.1 * out.initial_train_mse,
            "{final_train} vs initial {}",
            out.initial_train_mse
        );
    }

    #[test]
    fn pure_noise_is_not_overfit_on_validation() {
        for seed in 0..5 {
            let mut rng = RngStream::new(100 + seed, 0);
            let values: Vec<f64> = (0..300).map(|_| rng.standard_normal()).collect();
            let samples = series_samples(&values, 6);
            let cfg = TrainConfig {
                hidden: 4,
                epochs: 30,
                seed,
                ..TrainConfig::default()
            };
            let out = train_lstm(&samples, &cfg).unwrap();
            let (n_train, n_valid, _) = cfg.split.counts(samples.len());
            let valid = &samples[n_train..n_train + n_valid];
            let targets: Vec<f64> = valid.iter().map(|s| s.target).collect();
            let var = crate::numerics::variance(&targets);
            let v = mse(&out.params, valid).unwrap();
            assert!(v >= 0.8 * var, "seed {seed}: valid mse {v} vs var {var}");
        }
    }

    #[test]
    fn cell_records_align_with_predict_window() {
        let p = random_params(3, 8);
        let frames: Vec<FeatureFrame> = (0..10)
            .map(|t| FeatureFrame::from_values(100 + t, [t as f64 * 0.1, 0.2, -0.3]))
            .collect();
        let recs = extract_cell_states(&p, &frames, 4).unwrap();
        assert_eq!(recs.len(), 6);
        for (k, r) in recs.iter().enumerate() {
            let window: Vec<[f64; 3]> = frames[k..k + 4].iter().map(FeatureFrame::values).collect();
            let (y, s, _) = predict_window(&p, &window).unwrap();
            assert_eq!((r.y_hat, &r.c), (y, &s.c));
            assert_eq!(r.t, frames[k + 3].t);
            assert_eq!(r.target, frames[k + 4].energy);
        }
        assert_eq!(extract_cell_states(&p, &frames[..5], 4).unwrap().len(), 1);
        let zero = LstmParams::zeros(3, NUM_FEATURES, Readout::Linear);
        let recs = extract_cell_states(&zero, &frames, 4).unwrap();
        assert!(recs.iter().all(|r| r.c.iter().all(|&v| v == 0.0) && r.y_hat == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn hidden_state_is_bounded(seed in 0u64..10_000, scale in 0.0..50.0f64) {
            let p = random_params(3, seed);
            let mut rng = RngStream::new(seed, 1);
            let x: Vec<[f64; 3]> = random_window(5, &mut rng)
                .into_iter()
                .map(|r| [r[0] * scale, r[1] * scale, r[2] * scale])
                .collect();
            let (_, s, _) = predict_window(&p, &x).unwrap();
            prop_assert!(s.h.iter().all(|v| v.abs() < 1.0));
        }
    }
}
