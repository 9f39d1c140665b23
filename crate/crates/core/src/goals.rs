//! Dense goal candidates over the drivable area and their probability estimate.

use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::scene::{dist, Lane, MapData, Point, SUBMAP_CENTER, SUBMAP_RADIUS};
use crate::tensor::{attention, mlp2, project, ParamVars, Tape, Var};

/// Spacing between adjacent goal candidates in meters.
pub const GOAL_DENSITY: f64 = 1.0;

const ON_ROAD_TOL: f64 = 1e-9;

/// Which candidate set to score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalMode {
    /// Every grid point on the drivable area.
    #[default]
    Dense,
    /// Only grid points nearest to lane centerline points (anchor baseline).
    Sparse,
}

impl std::str::FromStr for GoalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" => Ok(Self::Sparse),
            other => Err(format!("unknown goal mode `{other}` (dense|sparse)")),
        }
    }
}

/// Candidate goals with their scores and ground-truth indicator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenseGoalField {
    pub coords: Vec<Point>,
    /// Predicted probability per goal; empty until scored.
    pub phi: Vec<f64>,
    /// One-hot ground truth; empty at inference.
    pub psi: Vec<f64>,
    /// Index into the map's lanes of the region that produced each goal.
    pub source: Vec<usize>,
}

impl DenseGoalField {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

pub fn point_polyline_dist(p: Point, line: &[Point]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => dist(p, *only),
        _ => line.windows(2).map(|w| point_segment_dist(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// Even-odd point-in-polygon test; the polygon is implicitly closed.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn closed(poly: &[Point]) -> Vec<Point> {
    let mut ring = poly.to_vec();
    if let Some(&first) = poly.first() {
        ring.push(first);
    }
    ring
}

/// Whether `p` lies in the region covered by `lane`: within half the lane
/// width of its centerline, or inside it when it is a parking polygon.
pub fn lane_covers(lane: &Lane, p: Point) -> bool {
    let half = lane.width * 0.5 + ON_ROAD_TOL;
    if lane.parking {
        point_in_polygon(p, &lane.points) || point_polyline_dist(p, &closed(&lane.points)) <= half
    } else {
        point_polyline_dist(p, &lane.points) <= half
    }
}

pub fn on_drivable_area(map: &MapData, p: Point) -> bool {
    map.lanes.iter().any(|l| lane_covers(l, p))
}

pub fn in_submap(p: Point) -> bool {
    dist(p, SUBMAP_CENTER) <= SUBMAP_RADIUS
}

/// Axis-aligned grid points on the drivable area and inside the submap,
/// in row-major order (by y, then x).
pub fn sample_dense_goals(map: &MapData, density: f64) -> DenseGoalField {
    // (iy, ix) -> producing lane
    let mut cells: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (li, lane) in map.lanes.iter().enumerate() {
        let ring;
        let edges: &[Point] = if lane.parking {
            ring = closed(&lane.points);
            &ring
        } else {
            &lane.points
        };
        let half = lane.width * 0.5;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in edges {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d] - half);
                hi[d] = hi[d].max(p[d] + half);
            }
        }
        if !lo[0].is_finite() {
            continue;
        }
        let (ix0, ix1) = ((lo[0] / density).floor() as i64, (hi[0] / density).ceil() as i64);
        let (iy0, iy1) = ((lo[1] / density).floor() as i64, (hi[1] / density).ceil() as i64);
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                if cells.contains_key(&(iy, ix)) {
                    continue;
                }
                let p = [ix as f64 * density, iy as f64 * density];
                if in_submap(p) && lane_covers(lane, p) {
                    cells.insert((iy, ix), li);
                }
            }
        }
    }
    let (coords, source) = cells
        .into_iter()
        .map(|((iy, ix), li)| ([ix as f64 * density, iy as f64 * density], li))
        .unzip();
    DenseGoalField { coords, source, ..Default::default() }
}

/// Anchor baseline: each lane centerline point snapped to its nearest grid
/// point, restricted to the dense candidate set.
pub fn sample_sparse_goals(map: &MapData, density: f64) -> DenseGoalField {
    let mut cells: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (li, lane) in map.lanes.iter().enumerate().filter(|(_, l)| !l.parking) {
        for p in &lane.points {
            let (ix, iy) = ((p[0] / density).round() as i64, (p[1] / density).round() as i64);
            let q = [ix as f64 * density, iy as f64 * density];
            if in_submap(q) && on_drivable_area(map, q) {
                cells.entry((iy, ix)).or_insert(li);
            }
        }
    }
    let (coords, source) = cells
        .into_iter()
        .map(|((iy, ix), li)| ([ix as f64 * density, iy as f64 * density], li))
        .unzip();
    DenseGoalField { coords, source, ..Default::default() }
}

pub fn sample_goals(map: &MapData, mode: GoalMode, density: f64) -> DenseGoalField {
    match mode {
        GoalMode::Dense => sample_dense_goals(map, density),
        GoalMode::Sparse => sample_sparse_goals(map, density),
    }
}

/// Index of the candidate nearest to `endpoint`; ties go to the lowest index.
pub fn assign_ground_truth(coords: &[Point], endpoint: Point) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in coords.iter().enumerate() {
        let d = dist(c, endpoint);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

pub fn one_hot<S: Scalar>(n: usize, index: usize) -> Vec<S> {
    (0..n).map(|i| if i == index { S::one() } else { S::zero() }).collect()
}

/// Summed binary cross-entropy between scores and the one-hot ground truth.
pub fn goal_loss<S: Scalar>(phi: &[S], psi: &[S]) -> Result<S> {
    if phi.len() != psi.len() {
        return shape_err("goal_loss", format!("{} scores, {} targets", phi.len(), psi.len()));
    }
    phi.iter().zip(psi).map(|(&p, &y)| crate::tensor::bce(p, y)).sum()
}

/// Goal features: a 2-layer MLP on the (scaled) coordinates, then
/// cross-attention over the scene rows `keys`, plus a residual.
///
/// Parameters: `{prefix}.goal_mlp`, `{prefix}.goal_attn.{q,k,v}`.
pub fn encode_goals<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, prefix: &str, coords: Var, keys: Var) -> Result<Var> {
    let f = mlp2(tape, vars, &format!("{prefix}.goal_mlp"), coords)?;
    let q = project(tape, vars, &format!("{prefix}.goal_attn.q"), f)?;
    let k = project(tape, vars, &format!("{prefix}.goal_attn.k"), keys)?;
    let v = project(tape, vars, &format!("{prefix}.goal_attn.v"), keys)?;
    let a = attention(tape, q, k, v)?;
    tape.add(a, f)
}

/// Per-goal logits from `{prefix}.scorer` on `[target, goal feature]` rows,
/// softmax-normalized over all goals into an `n×1` column.
pub fn score_goals<S: Scalar>(tape: &mut Tape<S>, vars: &ParamVars, prefix: &str, features: Var, target: Var) -> Result<Var> {
    let n = tape.value(features).rows();
    let t = tape.repeat_rows(target, n)?;
    let x = tape.concat_cols(&[t, features])?;
    let logits = mlp2(tape, vars, &format!("{prefix}.scorer"), x)?;
    tape.softmax(logits, 0)
}
