use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::Point;
use crate::tensor::Tensor;

use super::nms::select_goals;

/// Scores (and goal features) of one conditional step over the shared candidates.
#[derive(Clone, Debug)]
pub struct StepOutput<S> {
    pub phi: Vec<S>,
    /// `n × d` feature rows, one per candidate.
    pub features: Tensor<S>,
}

/// One chain of goals, one per step.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSet<S> {
    /// Candidate index chosen at each step.
    pub goals: Vec<usize>,
    /// Probability of each chosen goal under its step distribution.
    pub probs: Vec<S>,
    /// Product of `probs`.
    pub score: S,
    /// Feature row of each chosen goal.
    pub features: Vec<Vec<S>>,
}

/// Keep the `k` best sets by score; ties keep enumeration order.
pub fn top_k_goal_sets<S: Scalar>(mut sets: Vec<GoalSet<S>>, k: usize) -> Vec<GoalSet<S>> {
    let mut order: Vec<usize> = (0..sets.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        sets[*b]
            .score
            .partial_cmp(&sets[*a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    let mut slots: Vec<Option<GoalSet<S>>> = sets.drain(..).map(Some).collect();
    order.into_iter().filter_map(|i| slots[i].take()).collect()
}

/// Autoregressive goal selection over `depth` steps.
///
/// Step `d` is scored by `step(d, previous_goal)`, where `previous_goal` is the
/// goal chosen at step `d - 1` (`None` at the first step); `n` goals are kept
/// per step by NMS, giving up to `n^depth` chains. `step` must be a pure
/// function of its arguments: results are cached per `(d, previous candidate)`.
pub fn autoregressive_rollout<S, F>(
    coords: &[Point],
    depth: usize,
    n: usize,
    k: usize,
    radius: f64,
    mut step: F,
) -> Result<Vec<GoalSet<S>>>
where
    S: Scalar,
    F: FnMut(usize, Option<Point>) -> Result<StepOutput<S>>,
{
    if depth == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidArgument("rollout needs depth, n and k >= 1".into()));
    }
    let max_sets = (n as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
    if k as u128 > max_sets {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n^depth = {n}^{depth}")));
    }

    let mut cache: HashMap<(usize, Option<usize>), (Vec<usize>, StepOutput<S>)> = HashMap::new();
    let mut frontier = vec![GoalSet { goals: vec![], probs: vec![], score: S::one(), features: vec![] }];
    for d in 0..depth {
        let mut next = Vec::with_capacity(frontier.len() * n);
        for partial in frontier {
            let prev = partial.goals.last().copied();
            if !cache.contains_key(&(d, prev)) {
                let out = step(d, prev.map(|i| coords[i]))?;
                if out.phi.len() != coords.len() || out.features.rows() != coords.len() {
                    return Err(Error::InvalidArgument(format!(
                        "step {d} scored {} of {} candidates",
                        out.phi.len(),
                        coords.len()
                    )));
                }
                let picked = select_goals(coords, &out.phi, n, radius)?;
                if picked.is_empty() {
                    return Err(Error::EmptyField);
                }
                cache.insert((d, prev), (picked, out));
            }
            let (picked, out) = &cache[&(d, prev)];
            for &i in picked {
                let mut set = partial.clone();
                set.goals.push(i);
                set.probs.push(out.phi[i]);
                set.score = set.score * out.phi[i];
                set.features.push(out.features.row(i).to_vec());
                next.push(set);
            }
        }
        frontier = next;
    }
    Ok(top_k_goal_sets(frontier, k))
}
