//! Goal selection, the trajectory model and its prediction output.

mod model;
mod nms;
mod rollout;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{Frame, Point};
use crate::tensor::smooth_l1;

pub use model::{
    branch_prefix, prepare, CompletionInput, LossGraph, LossValues, Model, ModelConfig, PredictOptions, Prediction,
    PredictionMode, PreparedScene, LONG_STEP_HORIZONS,
};
pub use nms::{nms_select, select_goals};
pub use rollout::{autoregressive_rollout, top_k_goal_sets, GoalSet, StepOutput};

/// The goal (or goal chain) a trajectory was completed from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoalSpec {
    Single(Point),
    Triple([Point; 3]),
}

impl GoalSpec {
    pub fn points(&self) -> Vec<Point> {
        match self {
            GoalSpec::Single(p) => vec![*p],
            GoalSpec::Triple(ps) => ps.to_vec(),
        }
    }

    /// The final goal of the chain.
    pub fn last(&self) -> Point {
        match self {
            GoalSpec::Single(p) => *p,
            GoalSpec::Triple(ps) => ps[2],
        }
    }

    fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        match self {
            GoalSpec::Single(p) => GoalSpec::Single(f(*p)),
            GoalSpec::Triple(ps) => GoalSpec::Triple(ps.map(f)),
        }
    }
}

/// `K` trajectories of `T` points each, ordered by descending score.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub trajectories: Vec<Vec<Point>>,
    pub scores: Vec<f64>,
    pub goals: Vec<GoalSpec>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn to_world(&self, frame: &Frame) -> Self {
        Self {
            trajectories: self
                .trajectories
                .iter()
                .map(|t| t.iter().map(|&p| frame.to_world(p)).collect())
                .collect(),
            scores: self.scores.clone(),
            goals: self.goals.iter().map(|g| g.map(|p| frame.to_world(p))).collect(),
        }
    }
}

/// Summed smooth-L1 between a predicted and a ground-truth trajectory.
pub fn completion_loss<S: Scalar>(pred: &[Point], gt: &[Point]) -> Result<S> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| [(p[0], g[0]), (p[1], g[1])])
        .fold(S::zero(), |acc, (a, b)| acc + smooth_l1(S::lit(a), S::lit(b))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_loss_is_zero_on_match() {
        let t = vec![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(completion_loss::<f64>(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn completion_loss_mixes_quadratic_and_linear() {
        let loss: f64 = completion_loss(&[[0.5, 3.0]], &[[0.0, 0.0]]).unwrap();
        assert!((loss - (0.125 + 2.5)).abs() < 1e-12);
    }

    #[test]
    fn completion_loss_rejects_length_mismatch() {
        assert!(completion_loss::<f64>(&[[0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn goal_spec_serializes_untagged() {
        let s = serde_json::to_string(&GoalSpec::Single([1.0, 2.0])).unwrap();
        assert_eq!(s, "[1.0,2.0]");
        let t: GoalSpec = serde_json::from_str("[[0,0],[1,1],[2,2]]").unwrap();
        assert_eq!(t, GoalSpec::Triple([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]));
    }
}
