//! Scenario data model, frame normalization, submap cropping and
//! vectorization of agents and lanes.

mod io;
mod normalize;
mod vectorize;

pub use io::{load_scenarios, read_scenarios, save_scenarios, write_scenarios, OnError};
pub use normalize::{crop_submap, normalize_scene, Frame, NormalizedScene, SUBMAP_CENTER, SUBMAP_RADIUS};
pub use vectorize::{
    segment_lanes, vectorize_agents, Owner, SceneVector, VectorSeq, ATTR_DIM, LANE_SEGMENT_POINTS, VECTOR_DIM,
};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Planar point in meters.
pub type Point = [f64; 2];

/// Observation rate of tracks and ground-truth futures.
pub const SAMPLE_HZ: f64 = 10.0;

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Vehicle, AgentType::Pedestrian, AgentType::Cyclist];

    pub fn index(self) -> usize {
        match self {
            AgentType::Vehicle => 0,
            AgentType::Pedestrian => 1,
            AgentType::Cyclist => 2,
        }
    }
}

impl std::str::FromStr for AgentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicle" => Ok(Self::Vehicle),
            "pedestrian" => Ok(Self::Pedestrian),
            "cyclist" => Ok(Self::Cyclist),
            other => Err(format!("unknown agent type `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnType {
    #[default]
    None,
    Left,
    Right,
    Uturn,
}

/// One observation `[t, x, y, heading]`; `heading` may be `null` or absent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub t: f64,
    pub pos: Point,
    pub heading: Option<f64>,
}

impl Serialize for AgentState {
    fn serialize<Z: Serializer>(&self, s: Z) -> Result<Z::Ok, Z::Error> {
        (self.t, self.pos[0], self.pos[1], self.heading).serialize(s)
    }
}

impl<'de> Deserialize<'de> for AgentState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        let num = |i: usize, what: &str| {
            raw.get(i)
                .copied()
                .flatten()
                .ok_or_else(|| serde::de::Error::custom(format!("state is missing `{what}`")))
        };
        if raw.len() > 4 {
            return Err(serde::de::Error::custom("state has more than 4 entries"));
        }
        Ok(AgentState {
            t: num(0, "t")?,
            pos: [num(1, "x")?, num(2, "y")?],
            heading: raw.get(3).copied().flatten(),
        })
    }
}

/// Ids may arrive as strings or integers; both are kept as strings.
fn de_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Str(String),
        Int(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Str(s) => s,
        Id::Int(i) => i.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    #[serde(rename = "type")]
    pub agent_type: AgentType,
    pub states: Vec<AgentState>,
    pub length: f64,
    pub width: f64,
}

impl AgentTrack {
    pub fn last(&self) -> Option<&AgentState> {
        self.states.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    /// Centerline at roughly 1 m spacing; for parking areas, the polygon boundary.
    pub points: Vec<Point>,
    pub width: f64,
    #[serde(default)]
    pub turn: TurnType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
    #[serde(default)]
    pub parking: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapData {
    pub lanes: Vec<Lane>,
}

impl MapData {
    pub fn num_points(&self) -> usize {
        self.lanes.iter().map(|l| l.points.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    pub horizon_s: f64,
    #[serde(deserialize_with = "de_id")]
    pub target_id: String,
    pub map: MapData,
    pub tracks: Vec<AgentTrack>,
    pub future: Vec<Point>,
}

impl Scenario {
    pub fn target(&self) -> Option<&AgentTrack> {
        self.tracks.iter().find(|t| t.id == self.target_id)
    }

    /// Number of future steps implied by `horizon_s` at [`SAMPLE_HZ`].
    pub fn horizon_steps(&self) -> usize {
        (self.horizon_s * SAMPLE_HZ).round() as usize
    }

    /// Structural checks beyond what the JSON schema enforces.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |p: &Point| p[0].is_finite() && p[1].is_finite();
        if !(self.horizon_s.is_finite() && self.horizon_s > 0.0) {
            return Err(format!("horizon_s must be positive, got {}", self.horizon_s));
        }
        let Some(target) = self.target() else {
            return Err(format!("target_id `{}` not found in tracks", self.target_id));
        };
        if target.states.len() < 2 {
            return Err(format!("target `{}` needs at least 2 observations", target.id));
        }
        if self.future.len() != self.horizon_steps() {
            return Err(format!(
                "future has {} points, horizon_s {} implies {}",
                self.future.len(),
                self.horizon_s,
                self.horizon_steps()
            ));
        }
        if !self.future.iter().all(finite) {
            return Err("future contains non-finite coordinates".into());
        }
        for track in &self.tracks {
            if track.states.windows(2).any(|w| w[1].t <= w[0].t) {
                return Err(format!("track `{}` timestamps are not strictly increasing", track.id));
            }
            if !track.states.iter().all(|s| s.t.is_finite() && finite(&s.pos)) {
                return Err(format!("track `{}` has non-finite states", track.id));
            }
        }
        for lane in &self.map.lanes {
            if lane.points.len() < 2 {
                return Err(format!("lane `{}` needs at least 2 points", lane.id));
            }
            if !(lane.width > 0.0) {
                return Err(format!("lane `{}` width must be positive", lane.id));
            }
            if !lane.points.iter().all(finite) {
                return Err(format!("lane `{}` has non-finite points", lane.id));
            }
        }
        Ok(())
    }
}
