use crate::error::{Error, Result};

use super::{AgentTrack, AgentType, Lane, Point, TurnType};

/// Lane points per polyline segment.
pub const LANE_SEGMENT_POINTS: usize = 10;

/// Width of the attribute block carried by every vector.
pub const ATTR_DIM: usize = 12;
/// Width of a vector's feature row: start, end, two timestamps, attributes.
pub const VECTOR_DIM: usize = 6 + ATTR_DIM;

mod attr {
    pub const AGENT: usize = 0;
    pub const LANE: usize = 1;
    pub const TYPE: usize = 2; // 3 slots
    pub const TARGET: usize = 5;
    pub const SPEED: usize = 6;
    pub const WIDTH: usize = 7;
    pub const TURN: usize = 8; // left, right, uturn
    pub const PARKING: usize = 11;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Owner {
    Agent { id: String, agent_type: AgentType, is_target: bool },
    Lane { id: String },
}

impl Owner {
    pub fn is_lane(&self) -> bool {
        matches!(self, Owner::Lane { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneVector {
    pub start: Point,
    pub end: Point,
    pub t_start: f64,
    pub t_end: f64,
    pub attrs: [f64; ATTR_DIM],
}

impl SceneVector {
    /// Feature row with coordinates multiplied by `coord_scale`.
    pub fn features(&self, coord_scale: f64) -> [f64; VECTOR_DIM] {
        let mut f = [0.0; VECTOR_DIM];
        f[0] = self.start[0] * coord_scale;
        f[1] = self.start[1] * coord_scale;
        f[2] = self.end[0] * coord_scale;
        f[3] = self.end[1] * coord_scale;
        f[4] = self.t_start;
        f[5] = self.t_end;
        f[6..].copy_from_slice(&self.attrs);
        f
    }
}

/// One polyline as a chain of vectors: every vector starts where the previous one ended.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSeq {
    pub owner: Owner,
    pub vectors: Vec<SceneVector>,
}

impl VectorSeq {
    /// The polyline's points, recovered from the vector chain.
    pub fn points(&self) -> Vec<Point> {
        let mut pts: Vec<Point> = self.vectors.iter().map(|v| v.start).collect();
        pts.extend(self.vectors.last().map(|v| v.end));
        pts
    }

    pub fn is_chained(&self) -> bool {
        self.vectors.windows(2).all(|w| w[0].end == w[1].start && w[0].t_end == w[1].t_start)
    }

    pub fn time_span(&self) -> f64 {
        self.vectors.iter().map(|v| v.t_end - v.t_start).sum()
    }
}

fn lane_attrs(lane: &Lane) -> [f64; ATTR_DIM] {
    let mut a = [0.0; ATTR_DIM];
    a[attr::LANE] = 1.0;
    a[attr::WIDTH] = lane.width * 0.25;
    match lane.turn {
        TurnType::None => {}
        TurnType::Left => a[attr::TURN] = 1.0,
        TurnType::Right => a[attr::TURN + 1] = 1.0,
        TurnType::Uturn => a[attr::TURN + 2] = 1.0,
    }
    if lane.parking {
        a[attr::PARKING] = 1.0;
    }
    if let Some(limit) = lane.speed_limit {
        a[attr::SPEED] = limit * 0.1;
    }
    a
}

/// Split each lane into consecutive chunks of [`LANE_SEGMENT_POINTS`] points.
///
/// Chunks do not overlap. A trailing single point joins the previous chunk so
/// that every segment has at least two points.
pub fn segment_lanes(lanes: &[Lane]) -> Vec<VectorSeq> {
    let mut out = Vec::new();
    for lane in lanes {
        let attrs = lane_attrs(lane);
        let mut chunks: Vec<&[Point]> = lane.points.chunks(LANE_SEGMENT_POINTS).collect();
        if chunks.len() >= 2 && chunks.last().map_or(false, |c| c.len() == 1) {
            let n = chunks.len();
            let start = (n - 2) * LANE_SEGMENT_POINTS;
            chunks.truncate(n - 2);
            chunks.push(&lane.points[start..]);
        }
        for chunk in chunks.into_iter().filter(|c| c.len() >= 2) {
            let vectors = chunk
                .windows(2)
                .map(|w| SceneVector { start: w[0], end: w[1], t_start: 0.0, t_end: 0.0, attrs })
                .collect();
            out.push(VectorSeq { owner: Owner::Lane { id: lane.id.clone() }, vectors });
        }
    }
    out
}

/// Turn agent histories into vector chains, target first.
///
/// Timestamps are taken relative to `t_ref`; only observations within
/// `history_s` before `t_ref` are kept when a window is given. Tracks left with
/// fewer than two observations are skipped, except the target, which is an error.
pub fn vectorize_agents(
    tracks: &[AgentTrack],
    target_id: &str,
    t_ref: f64,
    history_s: Option<f64>,
) -> Result<Vec<VectorSeq>> {
    let mut ordered: Vec<&AgentTrack> = tracks.iter().filter(|t| t.id == target_id).collect();
    if ordered.is_empty() {
        return Err(Error::InvalidArgument(format!("target `{target_id}` not in tracks")));
    }
    ordered.extend(tracks.iter().filter(|t| t.id != target_id));

    let mut out = Vec::with_capacity(ordered.len());
    for track in ordered {
        let is_target = track.id == target_id;
        let states: Vec<_> = track
            .states
            .iter()
            .filter(|s| s.t <= t_ref + 1e-9 && history_s.map_or(true, |h| s.t >= t_ref - h - 1e-6))
            .collect();
        if states.len() < 2 {
            if is_target {
                return Err(Error::InvalidArgument(format!(
                    "target `{}` has fewer than 2 observations in the history window",
                    track.id
                )));
            }
            log::warn!("skipping track `{}`: fewer than 2 observations", track.id);
            continue;
        }
        let vectors = states
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let dt = b.t - a.t;
                let speed = super::dist(a.pos, b.pos) / dt;
                let mut attrs = [0.0; ATTR_DIM];
                attrs[attr::AGENT] = 1.0;
                attrs[attr::TYPE + track.agent_type.index()] = 1.0;
                attrs[attr::TARGET] = if is_target { 1.0 } else { 0.0 };
                attrs[attr::SPEED] = speed * 0.1;
                SceneVector { start: a.pos, end: b.pos, t_start: a.t - t_ref, t_end: b.t - t_ref, attrs }
            })
            .collect();
        out.push(VectorSeq {
            owner: Owner::Agent { id: track.id.clone(), agent_type: track.agent_type, is_target },
            vectors,
        });
    }
    Ok(out)
}
