//! Displacement and miss metrics over multimodal predictions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::Point;

/// Final-displacement threshold of a miss, in meters.
pub const MISS_THRESHOLD: f64 = 2.0;

fn check<S>(preds: &[Vec<[S; 2]>], gt: &[[S; 2]]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one prediction".into()));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument("empty ground-truth trajectory".into()));
    }
    if let Some(p) = preds.iter().find(|p| p.len() != gt.len()) {
        return Err(Error::InvalidArgument(format!(
            "horizon mismatch: prediction has {} steps, ground truth {}",
            p.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn euclid<S: Scalar>(a: [S; 2], b: [S; 2]) -> S {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn min_over<S: Scalar>(values: impl Iterator<Item = S>) -> S {
    values.fold(S::infinity(), |m, v| if v < m { v } else { m })
}

/// Smallest distance between a predicted and the true final point.
pub fn min_fde<S: Scalar>(preds: &[Vec<[S; 2]>], gt: &[[S; 2]]) -> Result<S> {
    check(preds, gt)?;
    let end = gt[gt.len() - 1];
    Ok(min_over(preds.iter().map(|p| euclid(p[p.len() - 1], end))))
}

/// Smallest mean pointwise distance between a prediction and the truth.
pub fn min_ade<S: Scalar>(preds: &[Vec<[S; 2]>], gt: &[[S; 2]]) -> Result<S> {
    check(preds, gt)?;
    let t = S::lit(gt.len() as f64);
    Ok(min_over(preds.iter().map(|p| {
        p.iter().zip(gt).fold(S::zero(), |acc, (&a, &b)| acc + euclid(a, b)) / t
    })))
}

/// Fraction of scenarios whose minFDE exceeds `threshold`.
pub fn miss_rate<S: Scalar>(batch: &[(Vec<Vec<[S; 2]>>, Vec<[S; 2]>)], threshold: S) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("miss rate of an empty batch".into()));
    }
    let mut misses = 0usize;
    for (preds, gt) in batch {
        if min_fde(preds, gt)? > threshold {
            misses += 1;
        }
    }
    Ok(S::lit(misses as f64) / S::lit(batch.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub id: String,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub miss_threshold: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    /// Scenarios that produced a prediction.
    pub count: usize,
    /// Scenarios that could not be predicted (e.g. no goal candidates).
    #[serde(default)]
    pub skipped: usize,
    pub scenarios: Vec<ScenarioMetrics>,
}

impl MetricReport {
    /// Aggregate `(id, predictions, ground truth)` triples.
    pub fn from_predictions<'a>(
        k: usize,
        items: impl IntoIterator<Item = (&'a str, &'a [Vec<Point>], &'a [Point])>,
    ) -> Result<Self> {
        let mut scenarios = Vec::new();
        for (id, preds, gt) in items {
            let min_fde = min_fde(preds, gt)?;
            scenarios.push(ScenarioMetrics {
                id: id.to_string(),
                min_ade: min_ade(preds, gt)?,
                min_fde,
                miss: min_fde > MISS_THRESHOLD,
            });
        }
        if scenarios.is_empty() {
            return Err(Error::EmptyDataset("no scenarios to evaluate".into()));
        }
        let n = scenarios.len() as f64;
        Ok(Self {
            k,
            miss_threshold: MISS_THRESHOLD,
            min_ade: scenarios.iter().map(|s| s.min_ade).sum::<f64>() / n,
            min_fde: scenarios.iter().map(|s| s.min_fde).sum::<f64>() / n,
            miss_rate: scenarios.iter().filter(|s| s.miss).count() as f64 / n,
            count: scenarios.len(),
            skipped: 0,
            scenarios,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "id,min_ade,min_fde,miss")?;
        for s in &self.scenarios {
            let id = if s.id.contains([',', '"', '\n']) { format!("\"{}\"", s.id.replace('"', "\"\"")) } else { s.id.clone() };
            writeln!(w, "{id},{},{},{}", s.min_ade, s.min_fde, u8::from(s.miss))?;
        }
        Ok(())
    }
}
