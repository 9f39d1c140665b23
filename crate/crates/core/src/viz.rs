//! SVG rendering of a scene, its scored goal field and the predictions.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::predictor::PredictionSet;
use crate::scene::{Point, Scenario};
use crate::trainer::GoalFieldRecord;

const PX_PER_M: f64 = 8.0;
const PAD_M: f64 = 5.0;
const GOAL_RADIUS_PX: f64 = 2.5;

struct Canvas {
    min: Point,
    max: Point,
}

impl Canvas {
    fn fit(points: impl Iterator<Item = Point>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        if !min[0].is_finite() {
            min = [0.0, 0.0];
            max = [0.0, 0.0];
        }
        Self { min: [min[0] - PAD_M, min[1] - PAD_M], max: [max[0] + PAD_M, max[1] + PAD_M] }
    }

    fn size(&self) -> (f64, f64) {
        ((self.max[0] - self.min[0]) * PX_PER_M, (self.max[1] - self.min[1]) * PX_PER_M)
    }

    /// SVG y grows downwards.
    fn px(&self, p: Point) -> (f64, f64) {
        ((p[0] - self.min[0]) * PX_PER_M, (self.max[1] - p[1]) * PX_PER_M)
    }

    fn path(&self, pts: &[Point]) -> String {
        let mut d = String::new();
        for (i, &p) in pts.iter().enumerate() {
            let (x, y) = self.px(p);
            let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
        }
        d
    }
}

/// Render `scenario` (world frame) with an optional goal field and prediction.
///
/// Lanes are gray, dense goals red with opacity `phi / max(phi)`, selected
/// goals and predicted trajectories orange, the ground truth green.
pub fn render_svg(scenario: &Scenario, field: Option<&GoalFieldRecord>, prediction: Option<&PredictionSet>) -> Result<String> {
    for id in field.map(|f| &f.id).into_iter() {
        if *id != scenario.id {
            return Err(Error::InvalidArgument(format!("goal field is for `{id}`, scenario is `{}`", scenario.id)));
        }
    }
    if let Some(f) = field {
        if f.coords.len() != f.phi.len() {
            return Err(Error::InvalidArgument("goal field coords and phi differ in length".into()));
        }
    }
    let target = scenario.target();
    let history: Vec<Point> = target.map(|t| t.states.iter().map(|s| s.pos).collect()).unwrap_or_default();
    let lanes = scenario.map.lanes.iter().flat_map(|l| l.points.iter().copied());
    let goals = field.into_iter().flat_map(|f| f.coords.iter().copied());
    let preds = prediction.into_iter().flat_map(|p| p.trajectories.iter().flatten().copied());
    let canvas = Canvas::fit(lanes.chain(goals).chain(preds).chain(scenario.future.iter().copied()).chain(history.iter().copied()));
    let (w, h) = canvas.size();

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<g id="lanes" fill="none" stroke="gray" stroke-linecap="round" stroke-linejoin="round">"#);
    for lane in &scenario.map.lanes {
        let _ = writeln!(
            s,
            r#"<path d="{}" stroke-width="{:.2}" stroke-opacity="0.25"/>"#,
            canvas.path(&lane.points),
            lane.width * PX_PER_M
        );
        let _ = writeln!(s, r#"<path d="{}" stroke-width="1"/>"#, canvas.path(&lane.points));
    }
    let _ = writeln!(s, "</g>");

    if let Some(f) = field {
        let max = f.phi.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(s, r#"<g id="goals" fill="red">"#);
        for (&p, &phi) in f.coords.iter().zip(&f.phi) {
            let opacity = if max > 0.0 { phi / max } else { 0.0 };
            let (x, y) = canvas.px(p);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{GOAL_RADIUS_PX}" fill-opacity="{opacity:.6}"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }

    if history.len() > 1 {
        let _ = writeln!(s, r#"<path id="history" d="{}" fill="none" stroke="black" stroke-width="2"/>"#, canvas.path(&history));
    }
    let mut gt = history.last().copied().into_iter().collect::<Vec<_>>();
    gt.extend(&scenario.future);
    if gt.len() > 1 {
        let _ = writeln!(s, r#"<path id="ground-truth" d="{}" fill="none" stroke="green" stroke-width="2"/>"#, canvas.path(&gt));
    }

    if let Some(p) = prediction {
        let _ = writeln!(s, r#"<g id="predictions" stroke="orange" fill="orange">"#);
        for traj in &p.trajectories {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke-width="1.5"/>"#, canvas.path(traj));
        }
        for goal in p.goals.iter().flat_map(|g| g.points()) {
            let (x, y) = canvas.px(goal);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill-opacity="0.9"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}
