use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use evcs_forecast::aeppo::{training_log_csv, Mode};
use evcs_forecast::metrics::WinklerMode;
use evcs_forecast::pipeline::{
    self, actuals_csv, bands_csv, forecasts_csv, lstm_history_csv, report_csv, summary_csv, EvalConfig, ForecastRow,
    LstmStage, ModelBundle, PipelineConfig,
};
use evcs_forecast::sessions::{self, SynthConfig};
use evcs_forecast::transformer::{frames_to_csv, parse_frames_csv, FeatureFrame, FeatureMode};
use evcs_forecast::{Error, Result};

const ARTIFACTS_ENV: &str = "EVCS_ARTIFACTS_DIR";
const EXIT_USAGE: u8 = 64;

/// Probabilistic EV charging forecasts: LSTM point forecasts with a
/// PPO-trained, adaptively explored variance head.
///
/// Exit codes: 0 success, 1 invalid input or configuration, 2 numeric
/// failure during training, 64 usage error.
#[derive(Debug, Parser)]
#[command(name = "evcs", version)]
struct Cli {
    /// Seed for all randomness (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for outputs [env: EVCS_ARTIFACTS_DIR; default: ./artifacts].
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic charging sessions.
    Synth(SynthArgs),
    /// Convert an ACN-style JSON export into sessions.
    Acn(AcnArgs),
    /// Aggregate sessions into hourly E/T/D frames.
    Transform(TransformArgs),
    /// Train the LSTM stage only.
    TrainLstm(TrainArgs),
    /// Train the agent on top of a saved LSTM stage.
    TrainAeppo(TrainAeppoArgs),
    /// Full training: LSTM, then the agent.
    Train(TrainArgs),
    /// Rolling one-step forecasts (or the single next hour).
    Forecast(ForecastArgs),
    /// Score rolling forecasts on the test range.
    Evaluate(EvalArgs),
    /// Score a forecasts CSV against an actuals CSV.
    Score(ScoreArgs),
    /// Plot-ready prediction-interval bands.
    Bands(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 720)]
    hours: u32,
    #[arg(long)]
    chargers: Option<u32>,
    /// Arrivals per charger per hour.
    #[arg(long)]
    arrival_rate: Option<f64>,
    #[arg(long)]
    mean_stay_hours: Option<f64>,
    #[arg(long)]
    mean_demand_kwh: Option<f64>,
    #[arg(long)]
    charge_rate_kw: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Output file; `.csv` writes long-format CSV, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AcnArgs {
    #[arg(long)]
    input: PathBuf,
    /// UNIX time of hour 0 (default: first connection, floored to the hour).
    #[arg(long)]
    origin_unix: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeatureModeArg {
    Conserving,
    StrictPaper,
}

impl From<FeatureModeArg> for FeatureMode {
    fn from(m: FeatureModeArg) -> Self {
        match m {
            FeatureModeArg::Conserving => FeatureMode::Conserving,
            FeatureModeArg::StrictPaper => FeatureMode::StrictPaper,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Aeppo,
    Ppo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WinklerArg {
    Paper,
    Conventional,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long, value_enum)]
    feature_mode: Option<FeatureModeArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Data source and configuration shared by the data-consuming commands.
#[derive(Debug, Args, Clone)]
struct DataArgs {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sessions file (JSON or long-format CSV).
    #[arg(long, conflicts_with = "frames")]
    sessions: Option<PathBuf>,
    /// Hourly frames CSV (`t,E,T,D`).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// UNIX time of hour 0, enables season grouping.
    #[arg(long)]
    origin_unix: Option<i64>,
    /// Prediction intervals in percent, comma separated.
    #[arg(long, value_delimiter = ',')]
    pis: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    winkler: Option<WinklerArg>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Window length N_h.
    #[arg(long)]
    window: Option<usize>,
    /// LSTM hidden size H.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lstm_lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    actor_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Agent training iterations N_e.
    #[arg(long)]
    iterations: Option<usize>,
    /// Episode length T_ep.
    #[arg(long)]
    horizon: Option<usize>,
    /// Reward samples per state N_a.
    #[arg(long)]
    n_a: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    feature_mode: Option<FeatureModeArg>,
    /// H = 1 LSTM whose hidden state is the forecast.
    #[arg(long)]
    strict_paper: bool,
}

#[derive(Debug, Args)]
struct TrainAeppoArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// LSTM stage file (default: <artifacts>/lstm_stage.json).
    #[arg(long)]
    stage: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Bundle file (default: <artifacts>/bundle.json).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// First target hour (default: after the validation split).
    #[arg(long)]
    from: Option<i64>,
    /// Last target hour (default: last frame).
    #[arg(long)]
    to: Option<i64>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Only forecast the hour after the last frame.
    #[arg(long)]
    next: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// CSV with `t,mu,delta`.
    #[arg(long)]
    forecasts: PathBuf,
    /// CSV with `t,y`.
    #[arg(long)]
    actuals: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pis: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    winkler: Option<WinklerArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Effective run configuration, echoed beside every artifact.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    sessions: Option<PathBuf>,
    frames: Option<PathBuf>,
    artifacts_dir: Option<PathBuf>,
    origin_unix: Option<i64>,
    seed: u64,
    pipeline: PipelineConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn artifacts_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.artifacts
        .clone()
        .or_else(|| std::env::var_os(ARTIFACTS_ENV).map(PathBuf::from))
        .or_else(|| cfg.and_then(|c| c.artifacts_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("artifacts"))
}

fn echo_config<T: Serialize>(dir: &Path, command: &str, cfg: &T) -> Result<()> {
    write(&dir.join(format!("{command}.config.json")), &serde_json::to_string_pretty(cfg)?)
}

fn load_run_config(cli: &Cli, data: &DataArgs) -> Result<RunConfig> {
    let mut cfg = match &data.config {
        Some(p) => serde_json::from_str::<RunConfig>(&read(p)?)
            .map_err(|e| Error::Validation(format!("config {}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(p) = &data.sessions {
        cfg.sessions = Some(p.clone());
        cfg.frames = None;
    }
    if let Some(p) = &data.frames {
        cfg.frames = Some(p.clone());
        cfg.sessions = None;
    }
    if let Some(o) = data.origin_unix {
        cfg.origin_unix = Some(o);
    }
    if let Some(p) = &data.pis {
        cfg.pipeline.pis = p.clone();
    }
    if let Some(w) = data.winkler {
        cfg.pipeline.winkler.mode = winkler_mode(w);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.pipeline = cfg.pipeline.with_seed(cfg.seed);
    Ok(cfg)
}

fn winkler_mode(w: WinklerArg) -> WinklerMode {
    match w {
        WinklerArg::Paper => WinklerMode::Paper,
        WinklerArg::Conventional => WinklerMode::Conventional,
    }
}

fn apply_train_flags(cfg: &mut RunConfig, a: &TrainArgs) {
    let p = &mut cfg.pipeline;
    if let Some(v) = a.window {
        p.n_h = v;
    }
    if let Some(v) = a.hidden {
        p.lstm.hidden = v;
    }
    if let Some(v) = a.lstm_lr {
        p.lstm.lr = v;
    }
    if let Some(v) = a.epochs {
        p.lstm.epochs = v;
    }
    if let Some(v) = a.actor_lr {
        p.aeppo.ppo.actor_lr = v;
    }
    if let Some(v) = a.critic_lr {
        p.aeppo.ppo.critic_lr = v;
    }
    if let Some(v) = a.clip {
        p.aeppo.ppo.clip = v;
    }
    if let Some(v) = a.gamma {
        p.aeppo.ppo.gamma = v;
    }
    if let Some(v) = a.iterations {
        p.aeppo.iterations = v;
    }
    if let Some(v) = a.horizon {
        p.aeppo.horizon = v;
        p.aeppo.stride = v;
    }
    if let Some(v) = a.n_a {
        p.aeppo.exploration.n_a = v;
    }
    if let Some(m) = a.mode {
        p.aeppo.mode = match m {
            ModeArg::Aeppo => Mode::Aeppo,
            ModeArg::Ppo => Mode::Ppo,
        };
    }
    if let Some(m) = a.feature_mode {
        p.feature_mode = m.into();
    }
    if a.strict_paper {
        p.lstm.strict_paper = true;
        p.lstm.hidden = 1;
        p.feature_mode = FeatureMode::StrictPaper;
    }
}

fn load_frames(cfg: &RunConfig) -> Result<Vec<FeatureFrame>> {
    match (&cfg.frames, &cfg.sessions) {
        (Some(f), _) => parse_frames_csv(&read(f)?),
        (None, Some(s)) => pipeline::frames_from_sessions(&sessions::parse_sessions(&read(s)?)?, cfg.pipeline.feature_mode),
        (None, None) => Err(Error::Validation("no input: pass --sessions or --frames (or set them in --config)".into())),
    }
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    ModelBundle::from_json(&read(path)?)
}

fn target_range(a: &EvalArgs, bundle: &ModelBundle, frames: &[FeatureFrame]) -> Option<std::ops::RangeInclusive<i64>> {
    if a.from.is_none() && a.to.is_none() {
        return None;
    }
    let last = frames.last().map_or(bundle.boundaries.last_hour, |f| f.t);
    Some(a.from.unwrap_or(bundle.boundaries.valid_end + 1)..=a.to.unwrap_or(last))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => {
            let mut cfg = SynthConfig {
                horizon_hours: a.hours,
                seed: cli.seed.unwrap_or(SynthConfig::default().seed),
                ..SynthConfig::default()
            };
            if let Some(v) = a.chargers {
                cfg.chargers = v;
            }
            if let Some(v) = a.arrival_rate {
                cfg.arrival_rate = v;
            }
            if let Some(v) = a.mean_stay_hours {
                cfg.mean_stay_hours = v;
            }
            if let Some(v) = a.mean_demand_kwh {
                cfg.mean_demand_kwh = v;
            }
            if let Some(v) = a.charge_rate_kw {
                cfg.charge_rate_kw = v;
            }
            if let Some(v) = a.noise_std {
                cfg.noise_std = v;
            }
            let dir = artifacts_dir(cli, None);
            let out = a.out.clone().unwrap_or_else(|| dir.join("sessions.json"));
            let list = sessions::generate_synthetic(&cfg)?;
            let text = if out.extension().is_some_and(|e| e == "csv") {
                sessions::sessions_to_csv(&list)?
            } else {
                sessions::sessions_to_json(&list)?
            };
            write(&out, &text)?;
            echo_config(out.parent().unwrap_or(&dir), "synth", &cfg)
        }
        Command::Acn(a) => {
            let import = sessions::from_acn_json(&read(&a.input)?, a.origin_unix)?;
            let dir = artifacts_dir(cli, None);
            let out = a.out.clone().unwrap_or_else(|| dir.join("sessions.json"));
            write(&out, &sessions::sessions_to_json(&import.sessions)?)?;
            for (row, why) in &import.skipped {
                eprintln!("skipped record {row}: {why}");
            }
            let meta = serde_json::json!({
                "origin_unix": import.origin_unix,
                "stations": import.stations,
                "sessions": import.sessions.len(),
                "skipped": import.skipped.len(),
            });
            write(&out.with_extension("meta.json"), &serde_json::to_string_pretty(&meta)?)
        }
        Command::Transform(a) => {
            let mode = a.feature_mode.map(FeatureMode::from).unwrap_or_default();
            let list = sessions::parse_sessions(&read(&a.sessions)?)?;
            let frames = pipeline::frames_from_sessions(&list, mode)?;
            let dir = artifacts_dir(cli, None);
            let out = a.out.clone().unwrap_or_else(|| dir.join("frames.csv"));
            write(&out, &frames_to_csv(&frames)?)?;
            echo_config(out.parent().unwrap_or(&dir), "transform", &serde_json::json!({ "feature_mode": mode }))
        }
        Command::TrainLstm(a) => {
            let mut cfg = load_run_config(cli, &a.data)?;
            apply_train_flags(&mut cfg, a);
            let dir = artifacts_dir(cli, Some(&cfg));
            let frames = load_frames(&cfg)?;
            let (stage, training, _) = pipeline::run_lstm_stage(&frames, cfg.origin_unix, &cfg.pipeline)?;
            write(&dir.join("lstm_stage.json"), &stage.to_json()?)?;
            write(&dir.join("lstm_history.csv"), &lstm_history_csv(&training))?;
            echo_config(&dir, "train-lstm", &cfg)
        }
        Command::TrainAeppo(a) => {
            let mut cfg = load_run_config(cli, &a.train.data)?;
            apply_train_flags(&mut cfg, &a.train);
            let dir = artifacts_dir(cli, Some(&cfg));
            let stage = LstmStage::from_json(&read(&a.stage.clone().unwrap_or_else(|| dir.join("lstm_stage.json")))?)?;
            let frames = load_frames(&cfg)?;
            let (bundle, log) = pipeline::run_agent_stage(stage, &frames, &cfg.pipeline)?;
            write(&dir.join("bundle.json"), &bundle.to_json()?)?;
            write(&dir.join("training_log.csv"), &training_log_csv(&log))?;
            echo_config(&dir, "train-aeppo", &cfg)
        }
        Command::Train(a) => {
            let mut cfg = load_run_config(cli, &a.data)?;
            apply_train_flags(&mut cfg, a);
            let dir = artifacts_dir(cli, Some(&cfg));
            let frames = load_frames(&cfg)?;
            let out = pipeline::run_training(&frames, cfg.origin_unix, &cfg.pipeline)?;
            write(&dir.join("bundle.json"), &out.bundle.to_json()?)?;
            write(&dir.join("lstm_history.csv"), &lstm_history_csv(&out.lstm))?;
            write(&dir.join("training_log.csv"), &training_log_csv(&out.reward_log))?;
            println!("bundle digest {}", out.bundle.digest()?);
            echo_config(&dir, "train", &cfg)
        }
        Command::Forecast(a) => {
            let (cfg, dir, bundle, frames) = eval_inputs(cli, &a.eval)?;
            let rows = if a.next {
                let f = pipeline::forecast_next(&bundle, &frames)?;
                let t = frames.last().map_or(0, |f| f.t) + 1;
                vec![ForecastRow { t, y: f64::NAN, mu: f.mu, delta: f.delta }]
            } else {
                pipeline::rolling_forecasts(&bundle, &frames, target_range(&a.eval, &bundle, &frames))?
            };
            write(&dir.join("forecasts.csv"), &forecasts_csv(&rows))?;
            if !a.next {
                write(&dir.join("actuals.csv"), &actuals_csv(&rows))?;
            }
            echo_config(&dir, "forecast", &cfg)
        }
        Command::Evaluate(a) => {
            let (cfg, dir, bundle, frames) = eval_inputs(cli, a)?;
            let eval = pipeline::evaluate(&bundle, &frames, target_range(a, &bundle, &frames), &EvalConfig::from(&cfg.pipeline))?;
            write(&dir.join("report.csv"), &report_csv(&eval.report))?;
            write(&dir.join("summary.csv"), &summary_csv(&eval.report))?;
            echo_config(&dir, "evaluate", &cfg)
        }
        Command::Bands(a) => {
            let (cfg, dir, bundle, frames) = eval_inputs(cli, a)?;
            let rows = pipeline::rolling_forecasts(&bundle, &frames, target_range(a, &bundle, &frames))?;
            write(&dir.join("bands.csv"), &bands_csv(&rows, &cfg.pipeline.pis)?)?;
            echo_config(&dir, "bands", &cfg)
        }
        Command::Score(a) => {
            let mut eval = EvalConfig::default();
            if let Some(p) = &a.pis {
                eval.pis = p.clone();
            }
            if let Some(w) = a.winkler {
                eval.winkler.mode = winkler_mode(w);
            }
            let rows = pipeline::join_forecasts(&read(&a.forecasts)?, &read(&a.actuals)?)?;
            let dir = artifacts_dir(cli, None);
            let out = a.out.clone().unwrap_or_else(|| dir.join("scores.csv"));
            write(&out, &pipeline::score_csv(&rows, &eval.pis, &eval.winkler)?)?;
            echo_config(out.parent().unwrap_or(&dir), "score", &eval)
        }
    }
}

fn eval_inputs(cli: &Cli, a: &EvalArgs) -> Result<(RunConfig, PathBuf, ModelBundle, Vec<FeatureFrame>)> {
    let mut cfg = load_run_config(cli, &a.data)?;
    let dir = artifacts_dir(cli, Some(&cfg));
    let bundle = load_bundle(&a.bundle.clone().unwrap_or_else(|| dir.join("bundle.json")))?;
    if cfg.origin_unix.is_none() {
        cfg.origin_unix = bundle.origin_unix;
    }
    let frames = load_frames(&cfg)?;
    Ok((cfg, dir, bundle, frames))
}
