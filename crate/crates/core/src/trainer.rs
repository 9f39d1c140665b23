//! Training loop, learning-rate schedule and evaluation.

use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goals::GoalMode;
use crate::metrics::MetricReport;
use crate::predictor::{
    CompletionInput, LossValues, Model, ModelConfig, PredictOptions, PredictionMode, PredictionSet,
    PreparedScene,
};
use crate::scalar::Scalar;
use crate::scene::{AgentType, Point, Scenario};
use crate::tensor::{adam_step, AdamConfig, AdamState, ParamGrads};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Train only on scenarios whose target has this type.
    pub agent_type: Option<AgentType>,
    pub mode: PredictionMode,
    pub goal_mode: GoalMode,
    pub horizon_steps: usize,
    pub lanes_only: bool,
    pub plain_ce: bool,
    pub completion_input: CompletionInput,
    /// Inference settings for per-epoch validation.
    pub k: usize,
    pub n: usize,
    pub nms_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 16,
            lr: 1e-3,
            lr_decay: 0.3,
            decay_every: 5,
            hidden: 64,
            seed: 0,
            agent_type: None,
            mode: PredictionMode::Short,
            goal_mode: GoalMode::Dense,
            horizon_steps: 30,
            lanes_only: false,
            plain_ce: false,
            completion_input: CompletionInput::Attended,
            k: 6,
            n: 6,
            nms_radius: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 || self.k == 0 || self.n == 0 {
            return bad("batch_size, epochs, decay_every, k and n must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay must lie in (0, 1)");
        }
        if !(self.nms_radius > 0.0) {
            return bad("nms_radius must be positive");
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            mode: self.mode,
            horizon_steps: self.horizon_steps,
            goal_mode: self.goal_mode,
            lanes_only: self.lanes_only,
            plain_ce: self.plain_ce,
            completion_input: self.completion_input,
            ..ModelConfig::default()
        }
    }

    pub fn predict_options(&self) -> PredictOptions {
        PredictOptions { k: self.k, n: self.n, nms_radius: self.nms_radius }
    }

    /// Learning rate of `epoch` (0-based): `lr · decay^⌊epoch / decay_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.lr, self.lr_decay, self.decay_every, epoch)
    }
}

pub fn lr_schedule(lr: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    lr * decay.powi((epoch / every) as i32)
}

/// Per-epoch progress, logged as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub goal_loss: f64,
    pub completion_loss: f64,
    /// Training scenarios whose ground truth fell outside the goal field.
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_min_fde: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_miss_rate: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Mean over the scenarios that contributed.
    pub loss: LossValues,
    pub used: usize,
}

/// One optimizer step on the mean loss of `batch`; scenes without a usable
/// ground-truth goal are left out of the mean.
pub fn train_step<S: Scalar>(
    model: &mut Model<S>,
    opt: &mut AdamState<S>,
    batch: &[&PreparedScene],
) -> Result<StepStats> {
    let results: Vec<_> = batch.par_iter().map(|p| model.loss_and_grads(p)).collect();
    let mut grads = ParamGrads::zeros_like(&model.params);
    let mut sum = LossValues::default();
    let mut used = 0usize;
    for r in results {
        if let Some((l, g)) = r? {
            grads.add_assign(&g);
            sum.goal += l.goal;
            sum.completion += l.completion;
            sum.total += l.total;
            used += 1;
        }
    }
    if used == 0 {
        return Ok(StepStats::default());
    }
    let inv = 1.0 / used as f64;
    let loss = LossValues { goal: sum.goal * inv, completion: sum.completion * inv, total: sum.total * inv };
    if !loss.total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    grads.scale(S::lit(inv));
    adam_step(&mut model.params, &grads, opt)?;
    Ok(StepStats { loss, used })
}

pub fn filter_agent_type(scenarios: &[Scenario], agent_type: Option<AgentType>) -> Vec<&Scenario> {
    scenarios
        .iter()
        .filter(|s| agent_type.map_or(true, |t| s.target().is_some_and(|tr| tr.agent_type == t)))
        .collect()
}

fn prepare_all(model_cfg: &ModelConfig, scenarios: &[&Scenario]) -> Vec<PreparedScene> {
    let prepared: Vec<_> = scenarios.par_iter().map(|s| crate::predictor::prepare(s, model_cfg)).collect();
    prepared
        .into_iter()
        .zip(scenarios)
        .filter_map(|(p, s)| p.map_err(|e| warn!("skipping scenario `{}`: {e}", s.id)).ok())
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutput<S> {
    pub model: Model<S>,
    pub optimizer: AdamState<S>,
    pub log: Vec<EpochLog>,
}

/// Train a fresh model; `validation`, when given, is evaluated after each epoch.
pub fn train<S: Scalar>(
    scenarios: &[Scenario],
    cfg: &TrainConfig,
    validation: Option<&[Scenario]>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput<S>> {
    cfg.validate()?;
    let filtered = filter_agent_type(scenarios, cfg.agent_type);
    if filtered.is_empty() {
        return Err(Error::EmptyDataset(format!("no scenarios with target type {:?}", cfg.agent_type)));
    }
    let model_cfg = cfg.model_config();
    let scenes = prepare_all(&model_cfg, &filtered);
    if scenes.is_empty() {
        return Err(Error::EmptyDataset("no scenario could be prepared".into()));
    }
    let val_scenes = validation.map(|v| prepare_all(&model_cfg, &filter_agent_type(v, cfg.agent_type)));

    let mut model = Model::<S>::new(model_cfg, cfg.seed)?;
    let mut opt = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        opt.config.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossValues::default();
        let mut used = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedScene> = chunk.iter().map(|&i| &scenes[i]).collect();
            let stats = train_step(&mut model, &mut opt, &batch).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, batch: b, loss: f64::NAN },
                other => other,
            })?;
            let w = stats.used as f64;
            sum.goal += stats.loss.goal * w;
            sum.completion += stats.loss.completion * w;
            sum.total += stats.loss.total * w;
            used += stats.used;
        }
        let denom = used.max(1) as f64;
        let val = match &val_scenes {
            Some(v) if !v.is_empty() => Some(evaluate_prepared(&model, v, &cfg.predict_options())?.0),
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            lr: opt.config.lr,
            loss: sum.total / denom,
            goal_loss: sum.goal / denom,
            completion_loss: sum.completion / denom,
            skipped: scenes.len() - used,
            val_min_fde: val.as_ref().map(|r| r.min_fde),
            val_miss_rate: val.as_ref().map(|r| r.miss_rate),
            seconds: start.elapsed().as_secs_f64(),
        };
        info!("epoch {epoch}: loss {:.4}", entry.loss);
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutput { model, optimizer: opt, log })
}

/// World-frame prediction of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(flatten)]
    pub prediction: PredictionSet,
}

/// Scored candidates of the first goal step, in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalFieldRecord {
    pub id: String,
    pub coords: Vec<Point>,
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePrediction {
    pub record: PredictionRecord,
    pub field: GoalFieldRecord,
    /// Ground-truth future in world coordinates.
    pub future: Vec<Point>,
}

pub fn predict_scene<S: Scalar>(model: &Model<S>, prep: &PreparedScene, opts: &PredictOptions) -> Result<ScenePrediction> {
    let pred = model.predict(prep, opts)?;
    let frame = &prep.frame;
    Ok(ScenePrediction {
        record: PredictionRecord { id: prep.id.clone(), prediction: pred.local.to_world(frame) },
        field: GoalFieldRecord {
            id: prep.id.clone(),
            coords: pred.field.coords.iter().map(|&p| frame.to_world(p)).collect(),
            phi: pred.field.phi,
        },
        future: prep.future.iter().map(|&p| frame.to_world(p)).collect(),
    })
}

/// Predict every scenario in parallel; failures are logged and left out.
pub fn predict_all<S: Scalar>(model: &Model<S>, scenarios: &[Scenario], opts: &PredictOptions) -> Vec<ScenePrediction> {
    scenarios
        .par_iter()
        .map(|s| model.prepare(s).and_then(|p| predict_scene(model, &p, opts)).map_err(|e| (s.id.clone(), e)))
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|r| r.map_err(|(id, e)| warn!("cannot predict `{id}`: {e}")).ok())
        .collect()
}

fn report(k: usize, preds: &[ScenePrediction], skipped: usize) -> Result<MetricReport> {
    let mut report = MetricReport::from_predictions(
        k,
        preds.iter().map(|p| (p.record.id.as_str(), &p.record.prediction.trajectories[..], &p.future[..])),
    )?;
    report.skipped = skipped;
    Ok(report)
}

fn evaluate_prepared<S: Scalar>(
    model: &Model<S>,
    scenes: &[PreparedScene],
    opts: &PredictOptions,
) -> Result<(MetricReport, Vec<ScenePrediction>)> {
    let results: Vec<_> = scenes.par_iter().map(|p| predict_scene(model, p, opts)).collect();
    let mut preds = Vec::with_capacity(results.len());
    for (r, p) in results.into_iter().zip(scenes) {
        match r {
            Ok(x) => preds.push(x),
            Err(e) => warn!("cannot predict `{}`: {e}", p.id),
        }
    }
    let skipped = scenes.len() - preds.len();
    Ok((report(opts.k, &preds, skipped)?, preds))
}

/// Metrics of `model` on `scenarios`; the model must match `cfg`'s hidden size.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    scenarios: &[Scenario],
    cfg: &TrainConfig,
) -> Result<(MetricReport, Vec<ScenePrediction>)> {
    if model.config.hidden != cfg.hidden {
        return Err(Error::Config(format!(
            "checkpoint hidden size {} does not match configured {}",
            model.config.hidden, cfg.hidden
        )));
    }
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset("evaluation dataset is empty".into()));
    }
    let opts = cfg.predict_options();
    let preds = predict_all(model, scenarios, &opts);
    let skipped = scenarios.len() - preds.len();
    Ok((report(opts.k, &preds, skipped)?, preds))
}
