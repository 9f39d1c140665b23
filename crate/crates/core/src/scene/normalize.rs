use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

use super::{dist, Lane, MapData, Point, Scenario};

/// Center of the encoded submap in the normalized frame.
pub const SUBMAP_CENTER: Point = [0.0, 30.0];
/// Radius of the encoded submap in meters.
pub const SUBMAP_RADIUS: f64 = 80.0;

const MIN_DISPLACEMENT: f64 = 1e-9;

/// Rigid transform from the world frame into the target-centric frame:
/// the target's last observed position is the origin and its heading is +y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: Point,
    /// World heading of the target in radians.
    pub heading: f64,
}

impl Frame {
    fn rotation(&self) -> (f64, f64) {
        let angle = FRAC_PI_2 - self.heading;
        (angle.cos(), angle.sin())
    }

    pub fn to_local(&self, p: Point) -> Point {
        let (c, s) = self.rotation();
        let (dx, dy) = (p[0] - self.origin[0], p[1] - self.origin[1]);
        [c * dx - s * dy, s * dx + c * dy]
    }

    pub fn to_world(&self, q: Point) -> Point {
        let (c, s) = self.rotation();
        [c * q[0] + s * q[1] + self.origin[0], -s * q[0] + c * q[1] + self.origin[1]]
    }

    pub fn heading_to_local(&self, h: f64) -> f64 {
        h + FRAC_PI_2 - self.heading
    }

    pub fn heading_to_world(&self, h: f64) -> f64 {
        h - FRAC_PI_2 + self.heading
    }

    /// Apply `f` to every coordinate and heading in a scenario.
    fn map_scenario(&self, s: &Scenario, point: impl Fn(Point) -> Point, heading: impl Fn(f64) -> f64) -> Scenario {
        let mut out = s.clone();
        for lane in &mut out.map.lanes {
            lane.points.iter_mut().for_each(|p| *p = point(*p));
        }
        for track in &mut out.tracks {
            for st in &mut track.states {
                st.pos = point(st.pos);
                st.heading = st.heading.map(&heading);
            }
        }
        out.future.iter_mut().for_each(|p| *p = point(*p));
        out
    }

    pub fn scenario_to_local(&self, s: &Scenario) -> Scenario {
        self.map_scenario(s, |p| self.to_local(p), |h| self.heading_to_local(h))
    }

    pub fn scenario_to_world(&self, s: &Scenario) -> Scenario {
        self.map_scenario(s, |p| self.to_world(p), |h| self.heading_to_world(h))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedScene {
    pub scenario: Scenario,
    pub frame: Frame,
}

/// Re-express `s` in the target-centric frame.
///
/// Heading comes from the last displacement of the target; a stationary
/// target falls back to the heading stored with its last observation.
pub fn normalize_scene(s: &Scenario) -> Result<NormalizedScene> {
    let target = s
        .target()
        .ok_or_else(|| Error::InvalidArgument(format!("target `{}` not in tracks", s.target_id)))?;
    let n = target.states.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("target `{}` needs at least 2 observations", target.id)));
    }
    let (prev, last) = (&target.states[n - 2], &target.states[n - 1]);
    let heading = if dist(prev.pos, last.pos) > MIN_DISPLACEMENT {
        (last.pos[1] - prev.pos[1]).atan2(last.pos[0] - prev.pos[0])
    } else {
        match last.heading {
            Some(h) if h.is_finite() => h,
            _ => return Err(Error::DegenerateHeading(target.id.clone())),
        }
    };
    let frame = Frame { origin: last.pos, heading };
    Ok(NormalizedScene { scenario: frame.scenario_to_local(s), frame })
}

pub fn in_submap(p: Point) -> bool {
    dist(p, SUBMAP_CENTER) <= SUBMAP_RADIUS
}

/// Keep lane points inside the submap disc.
///
/// A lane that leaves and re-enters the disc is split into one lane per
/// contiguous run; runs shorter than two points are dropped.
pub fn crop_submap(m: &MapData) -> MapData {
    let mut lanes = Vec::new();
    for lane in &m.lanes {
        let mut run: Vec<Point> = Vec::new();
        let mut flush = |run: &mut Vec<Point>| {
            if run.len() >= 2 {
                lanes.push(Lane { points: std::mem::take(run), ..lane.clone() });
            }
            run.clear();
        };
        for &p in &lane.points {
            if in_submap(p) {
                run.push(p);
            } else {
                flush(&mut run);
            }
        }
        flush(&mut run);
    }
    MapData { lanes }
}

#[cfg(test)]
mod tests {
    use super::super::{AgentState, AgentTrack, AgentType, TurnType};
    use super::*;

    fn scenario(states: Vec<AgentState>) -> Scenario {
        Scenario {
            id: "s".into(),
            horizon_s: 0.1,
            target_id: "t".into(),
            map: MapData {
                lanes: vec![Lane {
                    id: "l".into(),
                    points: vec![[6.0, 5.0], [7.0, 5.0], [-3.0, 12.5]],
                    width: 4.0,
                    turn: TurnType::None,
                    speed_limit: None,
                    parking: false,
                }],
            },
            tracks: vec![AgentTrack { id: "t".into(), agent_type: AgentType::Vehicle, states, length: 4.0, width: 2.0 }],
            future: vec![[9.0, 5.0]],
        }
    }

    fn st(t: f64, x: f64, y: f64, h: Option<f64>) -> AgentState {
        AgentState { t, pos: [x, y], heading: h }
    }

    #[test]
    fn heading_plus_x_rotates_onto_plus_y() {
        let s = scenario(vec![st(0.0, 4.0, 5.0, None), st(0.1, 5.0, 5.0, None)]);
        let n = normalize_scene(&s).unwrap();
        let p = n.scenario.map.lanes[0].points[0];
        assert!((p[0] - 0.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12, "{p:?}");
        let last = n.scenario.tracks[0].states[1].pos;
        assert!(last[0].abs() < 1e-12 && last[1].abs() < 1e-12);
    }

    #[test]
    fn already_normalized_is_identity() {
        let s = scenario(vec![st(0.0, 0.0, -1.0, None), st(0.1, 0.0, 0.0, None)]);
        let n = normalize_scene(&s).unwrap();
        assert_eq!(n.scenario.map, s.map);
        assert_eq!(n.scenario.future, s.future);
    }

    #[test]
    fn stationary_target_uses_stored_heading() {
        let s = scenario(vec![st(0.0, 5.0, 5.0, None), st(0.1, 5.0, 5.0, Some(0.0))]);
        let n = normalize_scene(&s).unwrap();
        let p = n.scenario.map.lanes[0].points[0];
        assert!((p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_target_without_heading_is_degenerate() {
        let s = scenario(vec![st(0.0, 5.0, 5.0, None), st(0.1, 5.0, 5.0, None)]);
        assert!(matches!(normalize_scene(&s), Err(Error::DegenerateHeading(_))));
    }

    #[test]
    fn round_trip_restores_world_coordinates() {
        let s = scenario(vec![st(0.0, 1.0, 2.0, Some(0.3)), st(0.1, 3.5, -1.0, Some(0.4))]);
        let n = normalize_scene(&s).unwrap();
        let back = n.frame.scenario_to_world(&n.scenario);
        for (a, b) in back.map.lanes[0].points.iter().zip(&s.map.lanes[0].points) {
            assert!(dist(*a, *b) < 1e-9);
        }
        let h = back.tracks[0].states[0].heading.unwrap();
        assert!((h - 0.3).abs() < 1e-12);
    }

    #[test]
    fn crop_keeps_near_and_drops_far_points() {
        let lane = |pts: Vec<Point>| Lane {
            id: "l".into(),
            points: pts,
            width: 4.0,
            turn: TurnType::None,
            speed_limit: None,
            parking: false,
        };
        let map = MapData { lanes: vec![lane(vec![[0.0, 0.0], [0.0, 1.0], [0.0, 120.0]]), lane(vec![[0.0, 111.0], [0.0, 112.0]])] };
        let cropped = crop_submap(&map);
        assert_eq!(cropped.lanes.len(), 1);
        assert_eq!(cropped.lanes[0].points, vec![[0.0, 0.0], [0.0, 1.0]]);
        assert_eq!(crop_submap(&cropped), cropped);
    }

    #[test]
    fn lane_reentering_disc_is_split() {
        let pts = vec![[0.0, -40.0], [0.0, -45.0], [0.0, -60.0], [1.0, -45.0], [1.0, -44.0]];
        let map = MapData {
            lanes: vec![Lane { id: "u".into(), points: pts, width: 3.0, turn: TurnType::Uturn, speed_limit: None, parking: false }],
        };
        let cropped = crop_submap(&map);
        assert_eq!(cropped.lanes.len(), 2);
        assert_eq!(cropped.lanes[1].points, vec![[1.0, -45.0], [1.0, -44.0]]);
    }
}
