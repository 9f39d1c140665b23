use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{dist, Point};

/// Candidate indices ordered by descending score, ties by ascending index.
fn ranked<S: Scalar>(scores: &[S]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN goal score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    Ok(order)
}

/// Greedy non-maximum suppression.
///
/// Repeatedly takes the highest-scoring remaining candidate and suppresses
/// every candidate closer than `radius` to it, until `k` goals are taken or
/// none remain. Selected goals are pairwise at least `radius` apart.
pub fn nms_select<S: Scalar>(coords: &[Point], scores: &[S], k: usize, radius: f64) -> Result<Vec<usize>> {
    if coords.len() != scores.len() {
        return Err(Error::InvalidArgument(format!("{} goals, {} scores", coords.len(), scores.len())));
    }
    if coords.is_empty() {
        return Err(Error::EmptyField);
    }
    if k == 0 || !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("nms needs k >= 1 and radius > 0 (k = {k}, radius = {radius})")));
    }
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    // Walking in rank order and skipping anything near an earlier pick is the
    // same as repeatedly taking the argmax of the unsuppressed set.
    for i in ranked(scores)? {
        if picked.iter().all(|&j| dist(coords[i], coords[j]) >= radius) {
            picked.push(i);
            if picked.len() == k {
                break;
            }
        }
    }
    Ok(picked)
}

/// [`nms_select`], topped up with the best suppressed candidates when NMS runs
/// out before `k`. The result is ordered by descending score.
pub fn select_goals<S: Scalar>(coords: &[Point], scores: &[S], k: usize, radius: f64) -> Result<Vec<usize>> {
    let mut picked = nms_select(coords, scores, k, radius)?;
    if picked.len() < k {
        for i in ranked(scores)? {
            if picked.len() == k {
                break;
            }
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        let order = ranked(&picked.iter().map(|&i| scores[i]).collect::<Vec<_>>())?;
        picked = order.into_iter().map(|o| picked[o]).collect();
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_traced_example() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]];
        let scores = [0.5, 0.3, 0.2];
        assert_eq!(nms_select(&coords, &scores, 2, 2.0).unwrap(), vec![0, 2]);
        assert_eq!(nms_select(&coords, &scores, 1, 2.0).unwrap(), vec![0]);
    }

    #[test]
    fn exhaustion_returns_fewer() {
        let coords = [[0.0, 0.0], [1.0, 0.0]];
        assert_eq!(nms_select(&coords, &[0.4, 0.6], 5, 2.0).unwrap(), vec![1]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let coords = [[0.0, 0.0], [10.0, 0.0], [0.5, 0.0]];
        assert_eq!(nms_select(&coords, &[0.3, 0.3, 0.3], 3, 2.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn errors() {
        assert!(matches!(nms_select::<f64>(&[], &[], 1, 2.0), Err(Error::EmptyField)));
        assert!(nms_select(&[[0.0, 0.0]], &[1.0], 0, 2.0).is_err());
        assert!(nms_select(&[[0.0, 0.0]], &[1.0], 1, 0.0).is_err());
    }

    #[test]
    fn top_up_fills_to_k_sorted() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.5], [9.0, 0.0]];
        let scores = [0.4, 0.3, 0.2, 0.1];
        let sel = select_goals(&coords, &scores, 3, 2.0).unwrap();
        assert_eq!(sel, vec![0, 1, 3]);
    }
}
