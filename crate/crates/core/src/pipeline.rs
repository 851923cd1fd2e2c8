//! End-to-end orchestration: features, separate LSTM and agent training,
//! one-step probabilistic forecasts and scoring reports.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use chrono::{DateTime, Datelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aeppo::{train_aeppo, AeppoConfig, IterationLog, Mode};
use crate::env::delta_from_raw;
use crate::lstm::{extract_cell_states, predict_window, train_lstm, CellRecord, LstmParams, LstmTraining, TrainConfig};
use crate::metrics::{crps_gaussian, pi_bounds, pinball, pinball_grid, pinball_pi, winkler_band, GaussianForecast, WinklerConfig, DEFAULT_PIS};
use crate::numerics::{mean, RngStream};
use crate::ppo::{actor_forward, Mlp};
use crate::sessions::ChargingSession;
use crate::transformer::{
    aggregate_frames, check_contiguous, make_windows, session_hour_span, Direction, FeatureFrame, FeatureMode, Normalizer,
    WindowedSample, DEFAULT_WINDOW, NUM_FEATURES,
};
use crate::{Error, Result};

pub const BUNDLE_FORMAT: &str = "evcs-bundle";
pub const STAGE_FORMAT: &str = "evcs-lstm-stage";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeasonScheme {
    /// December-February winter, March-May spring, and so on.
    #[default]
    Meteorological,
    /// Only the pooled `all` rows.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n_h: usize,
    pub feature_mode: FeatureMode,
    pub lstm: TrainConfig,
    pub aeppo: AeppoConfig,
    /// Prediction-interval coverages, in percent.
    pub pis: Vec<f64>,
    pub seasons: SeasonScheme,
    pub winkler: WinklerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_h: DEFAULT_WINDOW,
            feature_mode: FeatureMode::default(),
            lstm: TrainConfig::default(),
            aeppo: AeppoConfig::default(),
            pis: DEFAULT_PIS.to_vec(),
            seasons: SeasonScheme::default(),
            winkler: WinklerConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Seeds both training stages.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.lstm.seed = seed;
        self.aeppo.seed = seed;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.n_h == 0 {
            return Err(Error::Validation("window length N_h must be positive".into()));
        }
        check_pis(&self.pis)?;
        self.lstm.check()?;
        self.aeppo.check()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    /// Digest of the settings that determine the LSTM stage.
    pub fn lstm_digest(&self) -> Result<String> {
        let key = serde_json::json!({ "n_h": self.n_h, "feature_mode": self.feature_mode, "lstm": self.lstm });
        Ok(sha256_hex(serde_json::to_string(&key)?.as_bytes()))
    }
}

fn check_pis(pis: &[f64]) -> Result<()> {
    if pis.is_empty() {
        return Err(Error::Validation("at least one prediction interval is required".into()));
    }
    for &p in pis {
        if !(p > 0.0 && p < 100.0) {
            return Err(Error::Validation(format!("PI coverage must lie in (0, 100), got {p}")));
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Target hours delimiting the chronological splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    /// First input hour of the series.
    pub first_hour: i64,
    /// Last target hour of the training split.
    pub train_end: i64,
    pub valid_end: i64,
    pub last_hour: i64,
}

/// Hourly features of a session set over its full occupied span.
pub fn frames_from_sessions(sessions: &[ChargingSession], mode: FeatureMode) -> Result<Vec<FeatureFrame>> {
    let span = session_hour_span(sessions).ok_or_else(|| Error::Validation("no sessions to transform".into()))?;
    aggregate_frames(sessions, span, mode)
}

/// Normalized windows with the split they were cut from.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalizer: Normalizer,
    pub normalized: Vec<FeatureFrame>,
    pub windows: Vec<WindowedSample>,
    pub n_train: usize,
    pub n_valid: usize,
    pub boundaries: SplitBoundaries,
}

impl Prepared {
    /// Frames feeding the training windows only.
    pub fn training_frames(&self, n_h: usize) -> &[FeatureFrame] {
        &self.normalized[..n_h + self.n_train]
    }
}

/// Splits the raw series and fits the normalizer on the training part.
pub fn prepare(frames: &[FeatureFrame], cfg: &PipelineConfig) -> Result<Prepared> {
    check_contiguous(frames)?;
    if frames.len() <= cfg.n_h {
        return Err(Error::Validation(format!(
            "{} hours cannot hold one window of N_h = {}",
            frames.len(),
            cfg.n_h
        )));
    }
    let n = frames.len() - cfg.n_h;
    let (n_train, n_valid, n_test) = cfg.lstm.split.counts(n);
    if n_train < 2 || n_valid < 2 || n_test < 1 {
        return Err(Error::Validation(format!(
            "{n} windows split into {n_train}/{n_valid}/{n_test}; need at least 2/2/1"
        )));
    }
    let normalizer = Normalizer::fit(&frames[..cfg.n_h + n_train]).map_err(|e| e.in_stage("normalize"))?;
    let normalized = normalizer.frames(frames, Direction::Forward);
    let windows = make_windows(&normalized, cfg.n_h)?;
    let boundaries = SplitBoundaries {
        first_hour: frames[0].t,
        train_end: windows[n_train - 1].t_target,
        valid_end: windows[n_train + n_valid - 1].t_target,
        last_hour: frames[frames.len() - 1].t,
    };
    Ok(Prepared {
        normalizer,
        normalized,
        windows,
        n_train,
        n_valid,
        boundaries,
    })
}

/// Output of the supervised stage, enough to start agent training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmStage {
    pub format: String,
    pub version: u32,
    pub n_h: usize,
    pub lstm: LstmParams,
    pub normalizer: Normalizer,
    pub boundaries: SplitBoundaries,
    pub origin_unix: Option<i64>,
    pub config_digest: String,
}

impl LstmStage {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: LstmStage = serde_json::from_str(text)?;
        check_header(&s.format, s.version, STAGE_FORMAT)?;
        s.lstm.check_shapes()?;
        Ok(s)
    }
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Validation(format!("expected a `{expected}` file, found `{format}`")));
    }
    if version != BUNDLE_VERSION {
        return Err(Error::Validation(format!("unsupported {expected} version {version}")));
    }
    Ok(())
}

/// Everything needed to forecast: the frozen LSTM, its normalizer and the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    /// `lstm-aeppo` or `lstm-ppo`.
    pub tag: String,
    pub n_h: usize,
    pub lstm: LstmParams,
    pub normalizer: Normalizer,
    pub actor: Mlp,
    pub critic: Mlp,
    pub boundaries: SplitBoundaries,
    pub origin_unix: Option<i64>,
    pub config_digest: String,
}

impl ModelBundle {
    pub fn from_parts(stage: LstmStage, actor: Mlp, critic: Mlp, mode: Mode) -> Result<Self> {
        let b = ModelBundle {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            tag: mode.tag().into(),
            n_h: stage.n_h,
            lstm: stage.lstm,
            normalizer: stage.normalizer,
            actor,
            critic,
            boundaries: stage.boundaries,
            origin_unix: stage.origin_unix,
            config_digest: stage.config_digest,
        };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<()> {
        check_header(&self.format, self.version, BUNDLE_FORMAT)?;
        self.lstm.check_shapes()?;
        if self.actor.input_size() != self.lstm.hidden || self.actor.output_size() != 2 {
            return Err(Error::Shape(format!(
                "actor maps {} -> {}, expected {} -> 2",
                self.actor.input_size(),
                self.actor.output_size(),
                self.lstm.hidden
            )));
        }
        if self.n_h == 0 {
            return Err(Error::Validation("bundle window length is zero".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: ModelBundle = serde_json::from_str(text)?;
        b.check()?;
        Ok(b)
    }

    /// SHA-256 of the serialized bundle.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

pub fn run_lstm_stage(frames: &[FeatureFrame], origin_unix: Option<i64>, cfg: &PipelineConfig) -> Result<(LstmStage, LstmTraining, Prepared)> {
    cfg.check()?;
    let prepared = prepare(frames, cfg).map_err(|e| e.in_stage("transform"))?;
    let training = train_lstm(&prepared.windows, &cfg.lstm).map_err(|e| e.in_stage("lstm"))?;
    let stage = LstmStage {
        format: STAGE_FORMAT.into(),
        version: BUNDLE_VERSION,
        n_h: cfg.n_h,
        lstm: training.params.clone(),
        normalizer: prepared.normalizer.clone(),
        boundaries: prepared.boundaries,
        origin_unix,
        config_digest: cfg.lstm_digest()?,
    };
    Ok((stage, training, prepared))
}

/// Cell-state records of the training split, computed with the frozen LSTM.
pub fn training_records(stage: &LstmStage, frames: &[FeatureFrame]) -> Result<Vec<CellRecord>> {
    check_contiguous(frames)?;
    let first = frames.first().ok_or_else(|| Error::Validation("no frames".into()))?.t;
    if first != stage.boundaries.first_hour {
        return Err(Error::Validation(format!(
            "frames start at hour {first}, the LSTM stage was fit from hour {}",
            stage.boundaries.first_hour
        )));
    }
    let end = (stage.boundaries.train_end - first + 1) as usize;
    if frames.len() < end {
        return Err(Error::Validation("frames end before the training split".into()));
    }
    let normalized = stage.normalizer.frames(&frames[..end], Direction::Forward);
    extract_cell_states(&stage.lstm, &normalized, stage.n_h)
}

/// Trains the agent on a saved stage; `cfg` must match the stage's LSTM settings.
pub fn run_agent_stage(stage: LstmStage, frames: &[FeatureFrame], cfg: &PipelineConfig) -> Result<(ModelBundle, Vec<IterationLog>)> {
    cfg.check()?;
    if stage.config_digest != cfg.lstm_digest()? {
        return Err(Error::Validation(
            "the LSTM stage was trained with different window, feature or LSTM settings".into(),
        ));
    }
    let records = training_records(&stage, frames).map_err(|e| e.in_stage("cell-states"))?;
    let out = train_aeppo(&records, &cfg.aeppo).map_err(|e| e.in_stage("aeppo"))?;
    let mut bundle = ModelBundle::from_parts(stage, out.agent.actor, out.agent.critic, cfg.aeppo.mode)?;
    bundle.config_digest = cfg.digest()?;
    Ok((bundle, out.log))
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub bundle: ModelBundle,
    pub lstm: LstmTraining,
    pub reward_log: Vec<IterationLog>,
}

/// Transform, normalize, train the LSTM, then train the agent on the
/// training split's cell states.
pub fn run_training(frames: &[FeatureFrame], origin_unix: Option<i64>, cfg: &PipelineConfig) -> Result<TrainingOutcome> {
    let (stage, lstm, _) = run_lstm_stage(frames, origin_unix, cfg)?;
    let (bundle, reward_log) = run_agent_stage(stage, frames, cfg)?;
    Ok(TrainingOutcome {
        bundle,
        lstm,
        reward_log,
    })
}

pub fn run_training_sessions(sessions: &[ChargingSession], origin_unix: Option<i64>, cfg: &PipelineConfig) -> Result<TrainingOutcome> {
    let frames = frames_from_sessions(sessions, cfg.feature_mode).map_err(|e| e.in_stage("transform"))?;
    run_training(&frames, origin_unix, cfg)
}

/// Forecast for the hour after the last of `frames` (raw units).
pub fn forecast_next(bundle: &ModelBundle, frames: &[FeatureFrame]) -> Result<GaussianForecast> {
    if frames.len() < bundle.n_h {
        return Err(Error::Domain(format!(
            "need at least N_h = {} frames, got {}",
            bundle.n_h,
            frames.len()
        )));
    }
    check_contiguous(frames)?;
    let window: Vec<[f64; NUM_FEATURES]> = frames[frames.len() - bundle.n_h..]
        .iter()
        .map(|f| bundle.normalizer.apply(f.values(), Direction::Forward))
        .collect();
    forecast_normalized(bundle, &window)
}

fn forecast_normalized(bundle: &ModelBundle, window: &[[f64; NUM_FEATURES]]) -> Result<GaussianForecast> {
    let (y_hat, state, _) = predict_window(&bundle.lstm, window)?;
    let a_mean = actor_forward(&bundle.actor, &state.c)?.a_mean;
    GaussianForecast::new(
        bundle.normalizer.energy(y_hat, Direction::Inverse),
        bundle.normalizer.energy_scale(delta_from_raw(a_mean), Direction::Inverse),
    )
}

/// One scored forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub t: i64,
    pub y: f64,
    pub mu: f64,
    pub delta: f64,
}

impl ForecastRow {
    pub fn forecast(&self) -> Result<GaussianForecast> {
        GaussianForecast::new(self.mu, self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pis: Vec<f64>,
    pub seasons: SeasonScheme,
    pub winkler: WinklerConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pis: DEFAULT_PIS.to_vec(),
            seasons: SeasonScheme::default(),
            winkler: WinklerConfig::default(),
        }
    }
}

impl From<&PipelineConfig> for EvalConfig {
    fn from(c: &PipelineConfig) -> Self {
        EvalConfig {
            pis: c.pis.clone(),
            seasons: c.seasons,
            winkler: c.winkler,
        }
    }
}

/// Rolling one-step forecasts over `targets`, each from the true preceding
/// `N_h` hours. Defaults to every hour after the validation split.
pub fn rolling_forecasts(bundle: &ModelBundle, frames: &[FeatureFrame], targets: Option<RangeInclusive<i64>>) -> Result<Vec<ForecastRow>> {
    check_contiguous(frames)?;
    let (first, last) = match (frames.first(), frames.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::Validation("no frames to evaluate".into())),
    };
    let targets = targets.unwrap_or(bundle.boundaries.valid_end + 1..=last);
    if targets.is_empty() {
        return Err(Error::Validation("empty evaluation range".into()));
    }
    if *targets.start() <= bundle.boundaries.train_end {
        return Err(Error::Validation(format!(
            "evaluation from hour {} overlaps training targets up to hour {}",
            targets.start(),
            bundle.boundaries.train_end
        )));
    }
    let n_h = bundle.n_h as i64;
    if *targets.start() - n_h < first || *targets.end() > last {
        return Err(Error::Validation(format!(
            "frames [{first}, {last}] do not cover targets {}..={} with {n_h} hours of history",
            targets.start(),
            targets.end()
        )));
    }
    let normalized = bundle.normalizer.frames(frames, Direction::Forward);
    targets
        .into_par_iter()
        .map(|t| {
            let i = (t - first) as usize;
            let window: Vec<[f64; NUM_FEATURES]> = normalized[i - bundle.n_h..i].iter().map(FeatureFrame::values).collect();
            let f = forecast_normalized(bundle, &window)?;
            Ok(ForecastRow {
                t,
                y: frames[i].energy,
                mu: f.mu,
                delta: f.delta,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub season: String,
    pub pi: f64,
    pub winkler: f64,
    pub pinball: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cells: Vec<ReportCell>,
    pub crps: f64,
    /// Empirical coverage per PI as a fraction.
    pub coverage: Vec<(f64, f64)>,
    /// Mean over rows of the 19-level Pinball average.
    pub pinball_avg: f64,
    pub n: usize,
}

pub const SEASONS: [&str; 4] = ["winter", "spring", "summer", "autumn"];

/// Meteorological season of the hour labelled `t`, counted from `origin_unix`.
pub fn season_of(t: i64, origin_unix: i64) -> Result<&'static str> {
    let secs = origin_unix + (t - 1) * 3600;
    let dt = DateTime::from_timestamp(secs, 0).ok_or_else(|| Error::Domain(format!("timestamp {secs} out of range")))?;
    Ok(match dt.month() {
        12 | 1 | 2 => SEASONS[0],
        3..=5 => SEASONS[1],
        6..=8 => SEASONS[2],
        _ => SEASONS[3],
    })
}

/// Aggregates scored rows hour by hour.
pub fn report_from_rows(rows: &[ForecastRow], origin_unix: Option<i64>, cfg: &EvalConfig) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::Validation("no forecasts to score".into()));
    }
    check_pis(&cfg.pis)?;
    let grid = pinball_grid();
    let mut crps = Vec::with_capacity(rows.len());
    let mut grid_avg = Vec::with_capacity(rows.len());
    // scores[pi][row] = (winkler, pinball, covered)
    let mut scores = vec![Vec::with_capacity(rows.len()); cfg.pis.len()];
    for r in rows {
        let f = r.forecast()?;
        crps.push(crps_gaussian(f, r.y)?);
        grid_avg.push(pinball(f, r.y, &grid)?.average);
        for (k, &p) in cfg.pis.iter().enumerate() {
            let band = pi_bounds(f, p)?;
            scores[k].push((winkler_band(&band, r.y, &cfg.winkler), pinball_pi(f, r.y, p)?, band.contains(r.y)));
        }
    }

    let labels: Vec<&str> = match (cfg.seasons, origin_unix) {
        (SeasonScheme::Meteorological, Some(origin)) => rows.iter().map(|r| season_of(r.t, origin)).collect::<Result<_>>()?,
        _ => vec!["all"; rows.len()],
    };
    let mut groups = vec!["all"];
    groups.extend(SEASONS.iter().filter(|s| labels.contains(s)));

    let mut cells = Vec::new();
    for g in groups {
        for (k, &p) in cfg.pis.iter().enumerate() {
            let picked: Vec<_> = scores[k]
                .iter()
                .zip(&labels)
                .filter(|(_, l)| g == "all" || **l == g)
                .map(|(s, _)| *s)
                .collect();
            cells.push(ReportCell {
                season: g.into(),
                pi: p,
                winkler: mean(&picked.iter().map(|s| s.0).collect::<Vec<_>>()),
                pinball: mean(&picked.iter().map(|s| s.1).collect::<Vec<_>>()),
                n: picked.len(),
            });
        }
    }
    let coverage = cfg
        .pis
        .iter()
        .zip(&scores)
        .map(|(&p, s)| (p, s.iter().filter(|v| v.2).count() as f64 / rows.len() as f64))
        .collect();
    let report = MetricsReport {
        cells,
        crps: mean(&crps),
        coverage,
        pinball_avg: mean(&grid_avg),
        n: rows.len(),
    };
    if !report.crps.is_finite() || report.cells.iter().any(|c| !c.winkler.is_finite() || !c.pinball.is_finite()) {
        return Err(Error::Numeric("report contains non-finite scores".into()));
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<ForecastRow>,
    pub report: MetricsReport,
}

pub fn evaluate(
    bundle: &ModelBundle,
    frames: &[FeatureFrame],
    targets: Option<RangeInclusive<i64>>,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let rows = rolling_forecasts(bundle, frames, targets)?;
    let report = report_from_rows(&rows, bundle.origin_unix, cfg)?;
    Ok(Evaluation { rows, report })
}

fn pi_label(p: f64) -> String {
    format!("{p}")
}

pub const REPORT_HEADER: &str = "season,PI,winkler,pinball";

pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for c in &report.cells {
        let _ = writeln!(out, "{},{},{},{}", c.season, pi_label(c.pi), c.winkler, c.pinball);
    }
    out
}

/// One-row summary; `aggregation` records that scores are averaged per hour.
pub fn summary_csv(report: &MetricsReport) -> String {
    let mut head = vec!["n".to_string(), "crps".into()];
    head.extend(report.coverage.iter().map(|(p, _)| format!("coverage{}", pi_label(*p))));
    head.extend(["pinball_avg".into(), "aggregation".into()]);
    let mut row = vec![report.n.to_string(), report.crps.to_string()];
    row.extend(report.coverage.iter().map(|(_, c)| c.to_string()));
    row.extend([report.pinball_avg.to_string(), "hourly".into()]);
    format!("{}\n{}\n", head.join(","), row.join(","))
}

pub fn bands_header(pis: &[f64]) -> String {
    let mut h = vec!["t".to_string(), "y".into(), "mu".into()];
    for p in pis {
        h.push(format!("lower{}", pi_label(*p)));
        h.push(format!("upper{}", pi_label(*p)));
    }
    h.join(",")
}

pub fn bands_csv(rows: &[ForecastRow], pis: &[f64]) -> Result<String> {
    check_pis(pis)?;
    let mut out = bands_header(pis);
    out.push('\n');
    for r in rows {
        let f = r.forecast()?;
        let _ = write!(out, "{},{},{}", r.t, r.y, r.mu);
        for &p in pis {
            let b = pi_bounds(f, p)?;
            let _ = write!(out, ",{},{}", b.lower, b.upper);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn lstm_history_csv(training: &LstmTraining) -> String {
    let mut out = String::from("epoch,train_mse,valid_mse\n");
    let _ = writeln!(out, "0,{},{}", training.initial_train_mse, training.initial_valid_mse);
    for r in &training.history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_mse, r.valid_mse);
    }
    out
}

pub const FORECASTS_HEADER: [&str; 3] = ["t", "mu", "delta"];
pub const ACTUALS_HEADER: [&str; 2] = ["t", "y"];

pub fn forecasts_csv(rows: &[ForecastRow]) -> String {
    let mut out = format!("{}\n", FORECASTS_HEADER.join(","));
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.t, r.mu, r.delta);
    }
    out
}

pub fn actuals_csv(rows: &[ForecastRow]) -> String {
    let mut out = format!("{}\n", ACTUALS_HEADER.join(","));
    for r in rows {
        let _ = writeln!(out, "{},{}", r.t, r.y);
    }
    out
}

fn parse_numeric_csv(text: &str, header: &[&str]) -> Result<Vec<(i64, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != header {
        return Err(Error::Parse {
            row: 1,
            field: "<header>".into(),
            message: format!("expected `{}`", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |i: usize, message: &str| Error::Parse {
            row: line,
            field: header[i].into(),
            message: message.into(),
        };
        let t: i64 = rec.get(0).unwrap_or("").parse().map_err(|_| bad(0, "not an integer hour"))?;
        let mut vals = Vec::with_capacity(header.len() - 1);
        for i in 1..header.len() {
            let v: f64 = rec
                .get(i)
                .unwrap_or("")
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(i, "not a finite number"))?;
            vals.push(v);
        }
        out.push((t, vals));
    }
    Ok(out)
}

/// Pairs `t,mu,delta` forecasts with `t,y` actuals on matching hours.
pub fn join_forecasts(forecasts_text: &str, actuals_text: &str) -> Result<Vec<ForecastRow>> {
    let forecasts = parse_numeric_csv(forecasts_text, &FORECASTS_HEADER)?;
    let actuals: std::collections::BTreeMap<i64, f64> = parse_numeric_csv(actuals_text, &ACTUALS_HEADER)?
        .into_iter()
        .map(|(t, v)| (t, v[0]))
        .collect();
    let mut rows = Vec::with_capacity(forecasts.len());
    for (t, v) in forecasts {
        let y = *actuals
            .get(&t)
            .ok_or_else(|| Error::Validation(format!("no actual value for forecast hour {t}")))?;
        let row = ForecastRow { t, y, mu: v[0], delta: v[1] };
        row.forecast()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Validation("no forecasts to score".into()));
    }
    Ok(rows)
}

/// Per-row CRPS, Winkler and Pinball scores plus a closing `mean` row.
pub fn score_csv(rows: &[ForecastRow], pis: &[f64], winkler: &WinklerConfig) -> Result<String> {
    check_pis(pis)?;
    let mut head = vec!["t".to_string(), "crps".into()];
    head.extend(pis.iter().map(|p| format!("winkler{}", pi_label(*p))));
    head.extend(pis.iter().map(|p| format!("pinball{}", pi_label(*p))));
    head.push("pinball_avg".into());
    let mut out = head.join(",");
    out.push('\n');
    let grid = pinball_grid();
    let mut sums = vec![0.0; head.len() - 1];
    for r in rows {
        let f = r.forecast()?;
        let mut vals = vec![crps_gaussian(f, r.y)?];
        for &p in pis {
            vals.push(winkler_band(&pi_bounds(f, p)?, r.y, winkler));
        }
        for &p in pis {
            vals.push(pinball_pi(f, r.y, p)?);
        }
        vals.push(pinball(f, r.y, &grid)?.average);
        let _ = write!(out, "{}", r.t);
        for (s, v) in sums.iter_mut().zip(&vals) {
            *s += v;
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out.push_str("mean");
    for s in sums {
        let _ = write!(out, ",{}", s / rows.len() as f64);
    }
    out.push('\n');
    Ok(out)
}

/// Hourly series with a known heteroscedastic noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub hours: usize,
    /// Length of each calm or volatile block.
    pub regime_hours: usize,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub level: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            hours: 2000,
            regime_hours: 24,
            sigma_low: 0.05,
            sigma_high: 0.3,
            level: 1.0,
            amplitude: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSeries {
    pub frames: Vec<FeatureFrame>,
    /// Noise-free energy per frame.
    pub mean: Vec<f64>,
    /// Noise standard deviation per frame.
    pub sigma: Vec<f64>,
}

/// Energy is a diurnal sinusoid plus Gaussian noise whose level alternates
/// between calm and volatile blocks. Utilization rises during volatile blocks
/// so the regime is visible in the inputs; demand follows the daily cycle.
pub fn calibration_series(cfg: &CalibrationConfig) -> Result<CalibrationSeries> {
    if cfg.hours < 2 || cfg.regime_hours == 0 {
        return Err(Error::Validation("calibration series needs >= 2 hours and a positive regime length".into()));
    }
    if !(cfg.sigma_low >= 0.0 && cfg.sigma_high >= 0.0) {
        return Err(Error::Validation("noise levels must be nonnegative".into()));
    }
    let mut rng = RngStream::new(cfg.seed, 0);
    let day = 2.0 * std::f64::consts::PI / 24.0;
    let mut out = CalibrationSeries {
        frames: Vec::with_capacity(cfg.hours),
        mean: Vec::with_capacity(cfg.hours),
        sigma: Vec::with_capacity(cfg.hours),
    };
    for k in 0..cfg.hours {
        let volatile = (k / cfg.regime_hours) % 2 == 1;
        let sigma = if volatile { cfg.sigma_high } else { cfg.sigma_low };
        let phase = day * k as f64;
        let m = cfg.level + cfg.amplitude * phase.sin();
        let utilization = 0.5 + 0.25 * (phase + 0.5).sin() + if volatile { 1.0 } else { 0.0 };
        let demand = 50.0 + 40.0 * phase.sin();
        out.frames.push(FeatureFrame {
            t: k as i64,
            energy: rng.gaussian(m, sigma)?,
            utilization,
            demand,
        });
        out.mean.push(m);
        out.sigma.push(sigma);
    }
    Ok(out)
}
