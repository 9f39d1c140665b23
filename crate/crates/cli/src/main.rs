use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use densepath::checkpoint::Checkpoint;
use densepath::goals::GoalMode;
use densepath::predictor::PredictionMode;
use densepath::scene::{load_scenarios, save_scenarios, OnError, Scenario};
use densepath::synth::{generate, GenConfig};
use densepath::trainer::{evaluate, predict_all, train, GoalFieldRecord, PredictionRecord, TrainConfig};
use densepath::viz::render_svg;
use log::info;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "densepath", version, about = "Dense goal-based trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenarios as JSON lines.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Predict trajectories for every scenario.
    Predict(PredictArgs),
    /// Compute minADE, minFDE and miss rate.
    Eval(EvalArgs),
    /// Render one scenario with its goal field and predictions as SVG.
    Viz(VizArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Future horizon in seconds.
    #[arg(long, default_value_t = 3.0)]
    horizon_s: f64,
    /// Weights of the straight, fork and U-turn templates.
    #[arg(long, value_delimiter = ',')]
    mix: Option<Vec<f64>>,
    /// Per-point lateral jitter, meters.
    #[arg(long)]
    sigma: Option<f64>,
    /// Per-scenario driving-line offset, meters.
    #[arg(long)]
    offset_sigma: Option<f64>,
    /// Change of that offset over the future, meters.
    #[arg(long)]
    drift_sigma: Option<f64>,
    #[arg(long)]
    lane_width: Option<f64>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    mode: Option<PredictionMode>,
    #[arg(long)]
    goal_mode: Option<GoalMode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    nms_radius: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Flat TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Held-out scenarios evaluated after every epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write each scenario's scored goal candidates as JSON lines.
    #[arg(long)]
    dump_goals: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metric report as JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-scenario metrics table.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    data: PathBuf,
    /// Scenario id; defaults to the first scenario in the file.
    #[arg(long)]
    id: Option<String>,
    /// Goal dump written by `predict --dump-goals`.
    #[arg(long)]
    goals: Option<PathBuf>,
    /// Predictions written by `predict`.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn train_config(path: Option<&Path>, o: &Overrides) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = o.mode {
        cfg.mode = v;
    }
    if let Some(v) = o.goal_mode {
        cfg.goal_mode = v;
    }
    if let Some(v) = o.k {
        cfg.k = v;
    }
    if let Some(v) = o.n {
        cfg.n = v;
    }
    if let Some(v) = o.nms_radius {
        cfg.nms_radius = v;
    }
    Ok(cfg)
}

fn load(path: &Path) -> Result<Vec<Scenario>> {
    load_scenarios(path, OnError::Abort).with_context(|| format!("loading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json_lines<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// The record with the given id (or the first one) of a JSON-lines file.
fn find_record<T: serde::de::DeserializeOwned>(path: &Path, id: &str) -> Result<T> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if v.get("id").and_then(Value::as_str) == Some(id) {
            return serde_json::from_value(v).with_context(|| format!("{}:{}", path.display(), i + 1));
        }
    }
    bail!("no record for scenario `{id}` in {}", path.display())
}

/// Checkpoint plus the run config; checkpoint settings win over flags that
/// would change the architecture, and conflicts are errors.
fn load_model(ckpt: &Path, cfg: &mut TrainConfig, o: &Overrides) -> Result<densepath::Model64> {
    let model = Checkpoint::<f64>::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?.model;
    if let Some(mode) = o.mode {
        if mode != model.config.mode {
            bail!("--mode {:?} conflicts with the checkpoint's {:?}", mode, model.config.mode);
        }
    }
    if let Some(goal_mode) = o.goal_mode {
        if goal_mode != model.config.goal_mode {
            bail!("--goal-mode {:?} conflicts with the checkpoint's {:?}", goal_mode, model.config.goal_mode);
        }
    }
    if o.hidden.is_none() {
        cfg.hidden = model.config.hidden;
    }
    cfg.mode = model.config.mode;
    cfg.goal_mode = model.config.goal_mode;
    Ok(model)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let mut cfg = GenConfig { n_scenarios: a.n, seed: a.seed, horizon_s: a.horizon_s, ..GenConfig::default() };
            if let Some(m) = a.mix {
                let Ok(mix) = <[f64; 3]>::try_from(m.as_slice()) else {
                    bail!("--mix needs three comma-separated weights");
                };
                cfg.mix = mix;
            }
            if let Some(s) = a.sigma {
                cfg.sigma = s;
            }
            if let Some(s) = a.offset_sigma {
                cfg.offset_sigma = s;
            }
            if let Some(s) = a.drift_sigma {
                cfg.drift_sigma = s;
            }
            if let Some(w) = a.lane_width {
                cfg.lane_width = w;
            }
            let scenarios = generate(&cfg)?;
            save_scenarios(&a.out, &scenarios).with_context(|| format!("writing {}", a.out.display()))?;
            info!("wrote {} scenarios to {}", scenarios.len(), a.out.display());
        }
        Command::Train(a) => {
            let mut cfg = train_config(a.config.as_deref(), &a.overrides)?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            let data = load(&a.data)?;
            let val = a.val.as_deref().map(load).transpose()?;
            let stdout = std::io::stdout();
            let out = train::<f64>(&data, &cfg, val.as_deref(), |entry| {
                let mut lock = stdout.lock();
                let _ = serde_json::to_writer(&mut lock, entry);
                let _ = writeln!(lock);
            })?;
            Checkpoint { model: out.model, optimizer: Some(out.optimizer) }
                .save(&a.out)
                .with_context(|| format!("writing {}", a.out.display()))?;
        }
        Command::Predict(a) => {
            let mut cfg = train_config(a.config.as_deref(), &a.overrides)?;
            let model = load_model(&a.ckpt, &mut cfg, &a.overrides)?;
            let data = load(&a.data)?;
            let preds = predict_all(&model, &data, &cfg.predict_options());
            if preds.len() < data.len() {
                bail!("{} of {} scenarios could not be predicted", data.len() - preds.len(), data.len());
            }
            write_json_lines(&a.out, preds.iter().map(|p| &p.record))?;
            if let Some(path) = &a.dump_goals {
                write_json_lines(path, preds.iter().map(|p| &p.field))?;
            }
        }
        Command::Eval(a) => {
            let mut cfg = train_config(a.config.as_deref(), &a.overrides)?;
            let model = load_model(&a.ckpt, &mut cfg, &a.overrides)?;
            let data = load(&a.data)?;
            let (report, _) = evaluate(&model, &data, &cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            match &a.out {
                Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
            if let Some(p) = &a.csv {
                let mut w = create(p)?;
                report.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::Viz(a) => {
            let data = load(&a.data)?;
            let scenario = match &a.id {
                Some(id) => data.iter().find(|s| &s.id == id).with_context(|| format!("no scenario `{id}`"))?,
                None => data.first().context("dataset is empty")?,
            };
            let field: Option<GoalFieldRecord> = a.goals.as_deref().map(|p| find_record(p, &scenario.id)).transpose()?;
            let pred: Option<PredictionRecord> = a.pred.as_deref().map(|p| find_record(p, &scenario.id)).transpose()?;
            let svg = render_svg(scenario, field.as_ref(), pred.as_ref().map(|p| &p.prediction))?;
            std::fs::write(&a.out, svg).with_context(|| format!("writing {}", a.out.display()))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("DENSEPATH_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot size the worker pool: {e}");
                    std::process::exit(2);
                }
            }
            _ => {
                eprintln!("error: DENSEPATH_THREADS must be a positive integer, got `{v}`");
                std::process::exit(2);
            }
        }
    }
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
