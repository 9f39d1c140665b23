//! The network: shared subgraph, per-branch global graph, goal encoder and
//! scorer, and the goal-conditioned completion head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_polylines, global_graph, init_global_graph, init_subgraph, COORD_SCALE};
use crate::error::{Error, Result};
use crate::goals::{
    assign_ground_truth, encode_goals, in_submap, on_drivable_area, one_hot, sample_goals, score_goals, DenseGoalField,
    GoalMode, GOAL_DENSITY,
};
use crate::scalar::Scalar;
use crate::scene::{
    crop_submap, normalize_scene, segment_lanes, vectorize_agents, Frame, MapData, Point, Scenario, VectorSeq,
};
use crate::tensor::{
    init_mlp2, init_projection, mlp2, Mlp2Dims, ParamGrads, ParamStore, ParamVars, Tape, Tensor, Var,
};

use super::nms::select_goals;
use super::rollout::{autoregressive_rollout, StepOutput};
use super::{GoalSpec, PredictionSet};

/// Future steps at which the long-horizon branches place their goals (3 s, 5 s, 8 s at 10 Hz).
pub const LONG_STEP_HORIZONS: [usize; 3] = [30, 50, 80];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    /// One branch, one goal per trajectory.
    #[default]
    Short,
    /// Three autoregressive branches, a goal triple per trajectory.
    Long,
}

impl std::str::FromStr for PredictionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "short" => Ok(Self::Short),
            "long" => Ok(Self::Long),
            other => Err(format!("unknown mode `{other}` (short|long)")),
        }
    }
}

/// What the completion head receives for each goal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletionInput {
    /// The goal's attended feature row.
    #[default]
    Attended,
    /// The goal's scaled coordinate.
    Coordinate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub subgraph_depth: usize,
    pub global_layers: usize,
    pub mode: PredictionMode,
    /// Trajectory length in short mode; long mode always predicts 80 steps.
    pub horizon_steps: usize,
    pub goal_mode: GoalMode,
    /// Goals attend over lane rows only instead of lanes and agents.
    pub lanes_only: bool,
    /// Replace the per-goal BCE with cross-entropy over the distribution.
    pub plain_ce: bool,
    pub completion_input: CompletionInput,
    pub history_s: f64,
    pub goal_density: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            subgraph_depth: 3,
            global_layers: 1,
            mode: PredictionMode::Short,
            horizon_steps: 30,
            goal_mode: GoalMode::Dense,
            lanes_only: false,
            plain_ce: false,
            completion_input: CompletionInput::Attended,
            history_s: 1.0,
            goal_density: GOAL_DENSITY,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden < 2 || self.hidden % 2 != 0 {
            return bad(format!("hidden must be an even number >= 2, got {}", self.hidden));
        }
        if self.subgraph_depth == 0 || self.global_layers == 0 {
            return bad("subgraph_depth and global_layers must be >= 1".into());
        }
        if self.horizon_steps == 0 {
            return bad("horizon_steps must be >= 1".into());
        }
        if !(self.history_s > 0.0) || !(self.goal_density > 0.0) {
            return bad("history_s and goal_density must be positive".into());
        }
        Ok(())
    }

    pub fn branches(&self) -> usize {
        match self.mode {
            PredictionMode::Short => 1,
            PredictionMode::Long => LONG_STEP_HORIZONS.len(),
        }
    }

    /// Predicted trajectory length in steps.
    pub fn horizon(&self) -> usize {
        match self.mode {
            PredictionMode::Short => self.horizon_steps,
            PredictionMode::Long => LONG_STEP_HORIZONS[2],
        }
    }

    /// Future index of each branch's goal.
    pub fn goal_steps(&self) -> Vec<usize> {
        match self.mode {
            PredictionMode::Short => vec![self.horizon_steps - 1],
            PredictionMode::Long => LONG_STEP_HORIZONS.iter().map(|h| h - 1).collect(),
        }
    }

    fn completion_prefix(&self) -> String {
        format!("{}.completion", branch_prefix(self.branches() - 1))
    }

    fn goal_width(&self) -> usize {
        match self.completion_input {
            CompletionInput::Attended => self.hidden,
            CompletionInput::Coordinate => 2,
        }
    }
}

pub fn branch_prefix(b: usize) -> String {
    format!("branch{b}")
}

/// A scenario after normalization, cropping, vectorization and goal sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScene {
    pub id: String,
    pub frame: Frame,
    /// Cropped map in the normalized frame.
    pub map: MapData,
    /// Agent polylines first (target at row 0), then lane segments.
    pub polylines: Vec<VectorSeq>,
    pub lane_rows: Vec<usize>,
    pub field: DenseGoalField,
    /// Ground-truth future in the normalized frame.
    pub future: Vec<Point>,
}

pub fn prepare(s: &Scenario, cfg: &ModelConfig) -> Result<PreparedScene> {
    let norm = normalize_scene(s)?;
    let scn = norm.scenario;
    let map = crop_submap(&scn.map);
    let target = scn.target().expect("normalize_scene checked the target");
    let t_ref = target.last().expect("target has observations").t;
    let mut polylines = vectorize_agents(&scn.tracks, &scn.target_id, t_ref, Some(cfg.history_s))?;
    let first_lane = polylines.len();
    polylines.extend(segment_lanes(&map.lanes));
    let lane_rows = (first_lane..polylines.len()).collect();
    let field = sample_goals(&map, cfg.goal_mode, cfg.goal_density);
    Ok(PreparedScene { id: scn.id, frame: norm.frame, map, polylines, lane_rows, field, future: scn.future })
}

impl PreparedScene {
    /// Ground-truth goal per branch with its nearest candidate, or `None` when
    /// a goal lies off the sampled region (outside the submap or off road).
    pub fn teacher_goals(&self, cfg: &ModelConfig) -> Option<Vec<(Point, usize)>> {
        cfg.goal_steps()
            .into_iter()
            .map(|step| {
                let p = *self.future.get(step)?;
                if !in_submap(p) || !on_drivable_area(&self.map, p) {
                    return None;
                }
                Some((p, assign_ground_truth(&self.field.coords, p)?))
            })
            .collect()
    }
}

/// Loss nodes of one scene.
#[derive(Debug)]
pub struct LossGraph {
    pub vars: ParamVars,
    /// Goal loss per branch.
    pub goal: Vec<Var>,
    pub completion: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub goal: f64,
    pub completion: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictOptions {
    /// Trajectories per scenario.
    pub k: usize,
    /// Goals kept per autoregressive step.
    pub n: usize,
    pub nms_radius: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { k: 6, n: 6, nms_radius: 2.0 }
    }
}

/// Prediction in the normalized frame plus the scored first-step field.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub local: PredictionSet,
    pub field: DenseGoalField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
}

fn scaled_rows<S: Scalar>(points: &[Point]) -> Result<Tensor<S>> {
    let data = points.iter().flat_map(|p| [S::lit(p[0] * COORD_SCALE), S::lit(p[1] * COORD_SCALE)]).collect();
    Tensor::new(vec![points.len(), 2], data)
}

impl<S: Scalar> Model<S> {
    /// Fresh model with seeded uniform initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_subgraph(&mut params, &mut rng, h, config.subgraph_depth);
        for b in 0..config.branches() {
            let p = branch_prefix(b);
            init_global_graph(&mut params, &mut rng, &p, h, config.global_layers);
            init_mlp2(&mut params, &mut rng, &format!("{p}.goal_mlp"), Mlp2Dims { d_in: 2, d_hidden: h, d_out: h });
            for proj in ["q", "k", "v"] {
                init_projection(&mut params, &mut rng, &format!("{p}.goal_attn.{proj}"), h, h);
            }
            init_mlp2(&mut params, &mut rng, &format!("{p}.scorer"), Mlp2Dims { d_in: 2 * h, d_hidden: h, d_out: 1 });
            if b > 0 {
                init_mlp2(&mut params, &mut rng, &format!("{p}.prev_goal"), Mlp2Dims { d_in: 2, d_hidden: h, d_out: h });
            }
        }
        let d_in = config.branches() * config.goal_width() + h;
        let dims = Mlp2Dims { d_in, d_hidden: h, d_out: 2 * config.horizon() };
        init_mlp2(&mut params, &mut rng, &config.completion_prefix(), dims);
        Ok(Self { config, params })
    }

    pub fn prepare(&self, s: &Scenario) -> Result<PreparedScene> {
        prepare(s, &self.config)
    }

    /// Attention keys of branch `b`: its scene rows, optionally lanes only,
    /// plus the embedded previous goal for conditional branches.
    fn branch_keys(&self, tape: &mut Tape<S>, vars: &ParamVars, b: usize, l: Var, prep: &PreparedScene, prev: Option<Point>) -> Result<Var> {
        let mut keys = if self.config.lanes_only && !prep.lane_rows.is_empty() {
            tape.gather_rows(l, &prep.lane_rows)?
        } else {
            l
        };
        if let Some(p) = prev {
            let c = tape.constant(scaled_rows(&[p])?)?;
            let emb = mlp2(tape, vars, &format!("{}.prev_goal", branch_prefix(b)), c)?;
            keys = tape.concat_rows(&[keys, emb])?;
        }
        Ok(keys)
    }

    /// Teacher-forced loss graph; `None` when the ground truth is off the field.
    pub fn loss_graph(&self, tape: &mut Tape<S>, prep: &PreparedScene) -> Result<Option<LossGraph>> {
        let cfg = &self.config;
        let Some(teacher) = prep.teacher_goals(cfg) else {
            return Ok(None);
        };
        if prep.future.len() < cfg.horizon() {
            return Err(Error::InvalidArgument(format!(
                "scenario `{}` has {} future steps, model predicts {}",
                prep.id,
                prep.future.len(),
                cfg.horizon()
            )));
        }
        let vars = self.params.bind(tape)?;
        let x = encode_polylines(tape, &vars, &prep.polylines, cfg.subgraph_depth)?;
        let n = prep.field.len();
        let candidates: Vec<usize> = (0..n).collect();

        let mut goal_losses = Vec::with_capacity(cfg.branches());
        let mut goal_feats = Vec::with_capacity(cfg.branches() + 1);
        let mut last_l = x;
        for (b, &(gt, gt_idx)) in teacher.iter().enumerate() {
            let prefix = branch_prefix(b);
            let l = global_graph(tape, &vars, &prefix, x, cfg.global_layers)?;
            let prev = if b > 0 { Some(teacher[b - 1].0) } else { None };
            let keys = self.branch_keys(tape, &vars, b, l, prep, prev)?;
            let mut pts = prep.field.coords.clone();
            pts.push(gt);
            let coords = tape.constant(scaled_rows(&pts)?)?;
            let f = encode_goals(tape, &vars, &prefix, coords, keys)?;
            let cand = tape.gather_rows(f, &candidates)?;
            let target = tape.gather_rows(l, &[0])?;
            let phi = score_goals(tape, &vars, &prefix, cand, target)?;
            goal_losses.push(if cfg.plain_ce {
                tape.nll(phi, gt_idx)?
            } else {
                tape.bce_sum(phi, &one_hot::<S>(n, gt_idx))?
            });
            goal_feats.push(match cfg.completion_input {
                CompletionInput::Attended => tape.gather_rows(f, &[n])?,
                CompletionInput::Coordinate => tape.constant(scaled_rows(&[gt])?)?,
            });
            last_l = l;
        }
        let target = tape.gather_rows(last_l, &[0])?;
        goal_feats.push(target);
        let input = tape.concat_cols(&goal_feats)?;
        let out = mlp2(tape, &vars, &cfg.completion_prefix(), input)?;
        let traj = tape.scale(out, S::lit(1.0 / COORD_SCALE))?;
        let gt: Vec<S> = prep.future[..cfg.horizon()].iter().flat_map(|p| [S::lit(p[0]), S::lit(p[1])]).collect();
        let completion = tape.smooth_l1_sum(traj, &gt)?;

        let mut goal_total = goal_losses[0];
        for &g in &goal_losses[1..] {
            goal_total = tape.add(goal_total, g)?;
        }
        let total = tape.add(goal_total, completion)?;
        Ok(Some(LossGraph { vars, goal: goal_losses, completion, total }))
    }

    /// Loss values and parameter gradients of one scene.
    pub fn loss_and_grads(&self, prep: &PreparedScene) -> Result<Option<(LossValues, ParamGrads<S>)>> {
        let mut tape = Tape::new();
        let Some(g) = self.loss_graph(&mut tape, prep)? else {
            return Ok(None);
        };
        let goal: f64 = g.goal.iter().map(|&v| tape.value(v).data()[0].as_f64()).sum();
        let completion = tape.value(g.completion).data()[0].as_f64();
        let total = tape.value(g.total).data()[0].as_f64();
        let grads = tape.backward(g.total)?;
        Ok(Some((LossValues { goal, completion, total }, g.vars.collect(&tape, grads))))
    }

    /// Scene rows of every branch, evaluated without gradients.
    fn scene_rows(&self, prep: &PreparedScene) -> Result<Vec<Tensor<S>>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let x = encode_polylines(&mut tape, &vars, &prep.polylines, self.config.subgraph_depth)?;
        (0..self.config.branches())
            .map(|b| {
                let l = global_graph(&mut tape, &vars, &branch_prefix(b), x, self.config.global_layers)?;
                Ok(tape.value(l).clone())
            })
            .collect()
    }

    /// Score every candidate under branch `b` given its scene rows.
    fn goal_step(&self, prep: &PreparedScene, b: usize, rows: &Tensor<S>, prev: Option<Point>) -> Result<StepOutput<S>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let l = tape.constant(rows.clone())?;
        let keys = self.branch_keys(&mut tape, &vars, b, l, prep, prev)?;
        let coords = tape.constant(scaled_rows(&prep.field.coords)?)?;
        let prefix = branch_prefix(b);
        let f = encode_goals(&mut tape, &vars, &prefix, coords, keys)?;
        let target = tape.gather_rows(l, &[0])?;
        let phi = score_goals(&mut tape, &vars, &prefix, f, target)?;
        let features = match self.config.completion_input {
            CompletionInput::Attended => tape.value(f).clone(),
            CompletionInput::Coordinate => scaled_rows(&prep.field.coords)?,
        };
        Ok(StepOutput { phi: tape.value(phi).data().to_vec(), features })
    }

    /// Run the completion head on stacked `[goal features…, target]` rows.
    fn complete(&self, goal_rows: Vec<Vec<S>>, target: &[S]) -> Result<Vec<Vec<Point>>> {
        let k = goal_rows.len();
        let mut data = Vec::new();
        for row in &goal_rows {
            data.extend_from_slice(row);
            data.extend_from_slice(target);
        }
        let width = goal_rows.first().map_or(0, Vec::len) + target.len();
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let input = tape.constant(Tensor::new(vec![k, width], data)?)?;
        let out = mlp2(&mut tape, &vars, &self.config.completion_prefix(), input)?;
        let scale = 1.0 / COORD_SCALE;
        let out = tape.value(out);
        Ok((0..k)
            .map(|r| out.row(r).chunks(2).map(|c| [c[0].as_f64() * scale, c[1].as_f64() * scale]).collect())
            .collect())
    }

    /// Multimodal prediction for one scene in its normalized frame.
    pub fn predict(&self, prep: &PreparedScene, opts: &PredictOptions) -> Result<Prediction> {
        if prep.field.is_empty() {
            return Err(Error::EmptyField);
        }
        let rows = self.scene_rows(prep)?;
        let target = rows.last().expect("at least one branch").row(0).to_vec();
        let coords = &prep.field.coords;
        let first = self.goal_step(prep, 0, &rows[0], None)?;
        let mut field = prep.field.clone();
        field.phi = first.phi.iter().map(|p| p.as_f64()).collect();

        let local = match self.config.mode {
            PredictionMode::Short => {
                let picked = select_goals(coords, &first.phi, opts.k, opts.nms_radius)?;
                let feats = picked.iter().map(|&i| first.features.row(i).to_vec()).collect();
                PredictionSet {
                    trajectories: self.complete(feats, &target)?,
                    scores: picked.iter().map(|&i| first.phi[i].as_f64()).collect(),
                    goals: picked.iter().map(|&i| GoalSpec::Single(coords[i])).collect(),
                }
            }
            PredictionMode::Long => {
                let mut first = Some(first);
                let sets = autoregressive_rollout(coords, 3, opts.n, opts.k, opts.nms_radius, |d, prev| match (d, first.take()) {
                    (0, Some(out)) => Ok(out),
                    _ => self.goal_step(prep, d, &rows[d], prev),
                })?;
                let feats = sets.iter().map(|s| s.features.concat()).collect();
                PredictionSet {
                    trajectories: self.complete(feats, &target)?,
                    scores: sets.iter().map(|s| s.score.as_f64()).collect(),
                    goals: sets
                        .iter()
                        .map(|s| GoalSpec::Triple([coords[s.goals[0]], coords[s.goals[1]], coords[s.goals[2]]]))
                        .collect(),
                }
            }
        };
        Ok(Prediction { local, field })
    }
}
