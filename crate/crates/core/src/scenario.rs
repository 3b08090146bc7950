//! Canonical in-memory scene representation and its validation rules.
//!
//! A [`SceneRecord`] holds one ego track plus the surrounding agent tracks,
//! static obstacles and the drivable map, all in a shared world frame. Every
//! track carries exactly `history_len + future_len` states. States that were
//! not observed have all numeric fields zeroed and must never be read.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{is_simple, signed_area, wrap_angle, Vec2};

/// Box extent in meters. Serialized as `[length, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct BoundingBox {
    pub length: f64,
    pub width: f64,
}

impl From<[f64; 2]> for BoundingBox {
    fn from([length, width]: [f64; 2]) -> Self {
        BoundingBox { length, width }
    }
}

impl From<BoundingBox> for [f64; 2] {
    fn from(b: BoundingBox) -> Self {
        [b.length, b.width]
    }
}

type StateRepr = (f64, f64, f64, f64, f64, f64, f64, bool);

/// One timestep of one agent, world frame.
///
/// On the wire a state is the flat array
/// `[x, y, heading, vx, vy, length, width, observed]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "StateRepr", into = "StateRepr")]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    pub bbox: BoundingBox,
    pub observed: bool,
}

impl From<StateRepr> for AgentState {
    fn from((x, y, heading, vx, vy, length, width, observed): StateRepr) -> Self {
        AgentState {
            position: Vec2::new(x, y),
            heading,
            velocity: Vec2::new(vx, vy),
            bbox: BoundingBox { length, width },
            observed,
        }
    }
}

impl From<AgentState> for StateRepr {
    fn from(s: AgentState) -> Self {
        (
            s.position.x,
            s.position.y,
            s.heading,
            s.velocity.x,
            s.velocity.y,
            s.bbox.length,
            s.bbox.width,
            s.observed,
        )
    }
}

impl AgentState {
    pub fn observed(position: Vec2, heading: f64, velocity: Vec2, bbox: BoundingBox) -> Self {
        AgentState {
            position,
            heading: wrap_angle(heading),
            velocity,
            bbox,
            observed: true,
        }
    }

    /// Sentinel for a timestep with no observation.
    pub fn unobserved() -> Self {
        AgentState::default()
    }

    fn numerics_finite(&self) -> bool {
        self.position.is_finite()
            && self.heading.is_finite()
            && self.velocity.is_finite()
            && self.bbox.length.is_finite()
            && self.bbox.width.is_finite()
    }

    fn is_zeroed(&self) -> bool {
        let z = AgentState::default();
        self.position == z.position
            && self.heading == 0.0
            && self.velocity == z.velocity
            && self.bbox == z.bbox
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCategory {
    Vehicle,
    Pedestrian,
    Bicycle,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: String,
    pub category: AgentCategory,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn fully_observed(&self) -> bool {
        self.states.iter().all(|s| s.observed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub position: Vec2,
    pub heading: f64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DrivableMap {
    pub polygons: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub polylines: Vec<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    Augmented {
        source_scene_id: String,
        source_agent_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub dt: f64,
    pub history_len: usize,
    pub future_len: usize,
    pub ego: AgentTrack,
    pub agents: Vec<AgentTrack>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub drivable: DrivableMap,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl SceneRecord {
    pub fn total_len(&self) -> usize {
        self.history_len + self.future_len
    }

    /// Ego first, then agents in record order. Indices into this sequence are
    /// the track indices used by the metric functions.
    pub fn tracks(&self) -> impl Iterator<Item = &AgentTrack> {
        std::iter::once(&self.ego).chain(self.agents.iter())
    }

    pub fn track(&self, index: usize) -> Option<&AgentTrack> {
        if index == 0 {
            Some(&self.ego)
        } else {
            self.agents.get(index - 1)
        }
    }

    pub fn track_count(&self) -> usize {
        self.agents.len() + 1
    }

    pub fn track_index(&self, agent_id: &str) -> Option<usize> {
        self.tracks().position(|t| t.agent_id == agent_id)
    }

    pub fn agent(&self, agent_id: &str) -> Option<&AgentTrack> {
        self.agents.iter().find(|t| t.agent_id == agent_id)
    }

    /// Normalizes every heading to (−π, π]. Applied once at ingestion.
    pub fn normalize_headings(&mut self) {
        for track in std::iter::once(&mut self.ego).chain(self.agents.iter_mut()) {
            for s in track.states.iter_mut().filter(|s| s.observed) {
                s.heading = wrap_angle(s.heading);
            }
        }
        for o in &mut self.obstacles {
            o.heading = wrap_angle(o.heading);
        }
    }
}

/// The first `history_len` states of `track`.
pub fn history_window<'a>(track: &'a AgentTrack, scene: &SceneRecord) -> &'a [AgentState] {
    let n = scene.history_len.min(track.states.len());
    &track.states[..n]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    NonpositiveTimestep,
    HistoryTooShort,
    LengthMismatch,
    DuplicateAgentId,
    EgoUnobserved,
    HeadingOutOfRange,
    NonpositiveBox,
    NonfiniteValue,
    UnobservedNotZeroed,
    DegeneratePolygon,
    SelfIntersectingPolygon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub location: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}", self.code, self.location)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, code: ViolationCode) -> usize {
        self.violations.iter().filter(|v| v.code == code).count()
    }

    fn push(&mut self, code: ViolationCode, location: impl Into<String>) {
        self.violations.push(Violation {
            code,
            location: location.into(),
        });
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .take(5)
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ")
            + if self.violations.len() > 5 { "; ..." } else { "" }
    }
}

fn heading_in_range(h: f64) -> bool {
    h > -PI && h <= PI
}

fn check_track(report: &mut ValidationReport, track: &AgentTrack, expected_len: usize, is_ego: bool) {
    let who = if is_ego {
        format!("ego {}", track.agent_id)
    } else {
        format!("agent {}", track.agent_id)
    };
    if track.states.len() != expected_len {
        report.push(
            ViolationCode::LengthMismatch,
            format!("{who}: {} states, expected {expected_len}", track.states.len()),
        );
    }
    for (t, s) in track.states.iter().enumerate() {
        if !s.observed {
            if is_ego {
                report.push(ViolationCode::EgoUnobserved, format!("{who} step {t}"));
            }
            if !s.is_zeroed() {
                report.push(ViolationCode::UnobservedNotZeroed, format!("{who} step {t}"));
            }
            continue;
        }
        if !s.numerics_finite() {
            report.push(ViolationCode::NonfiniteValue, format!("{who} step {t}"));
            continue;
        }
        if !heading_in_range(s.heading) {
            report.push(ViolationCode::HeadingOutOfRange, format!("{who} step {t}"));
        }
        if s.bbox.length <= 0.0 || s.bbox.width <= 0.0 {
            report.push(ViolationCode::NonpositiveBox, format!("{who} step {t}"));
        }
    }
}

/// Checks every scene invariant and lists all violations found.
pub fn validate_scene(scene: &SceneRecord) -> ValidationReport {
    let mut report = ValidationReport::default();

    if !(scene.dt > 0.0 && scene.dt.is_finite()) {
        report.push(ViolationCode::NonpositiveTimestep, format!("dt = {}", scene.dt));
    }
    if scene.history_len < 2 {
        report.push(
            ViolationCode::HistoryTooShort,
            format!("history_len = {}", scene.history_len),
        );
    }

    let expected = scene.total_len();
    check_track(&mut report, &scene.ego, expected, true);
    for agent in &scene.agents {
        check_track(&mut report, agent, expected, false);
    }

    let mut seen = HashSet::new();
    for track in scene.tracks() {
        if !seen.insert(track.agent_id.as_str()) {
            report.push(ViolationCode::DuplicateAgentId, format!("agent {}", track.agent_id));
        }
    }

    for (k, o) in scene.obstacles.iter().enumerate() {
        let loc = format!("obstacle {k}");
        if !(o.position.is_finite() && o.heading.is_finite() && o.bbox.length.is_finite() && o.bbox.width.is_finite()) {
            report.push(ViolationCode::NonfiniteValue, loc);
            continue;
        }
        if !heading_in_range(o.heading) {
            report.push(ViolationCode::HeadingOutOfRange, loc.clone());
        }
        if o.bbox.length <= 0.0 || o.bbox.width <= 0.0 {
            report.push(ViolationCode::NonpositiveBox, loc);
        }
    }

    for (k, ring) in scene.drivable.polygons.iter().enumerate() {
        let loc = format!("drivable polygon {k}");
        if ring.iter().any(|p| !p.is_finite()) {
            report.push(ViolationCode::NonfiniteValue, loc);
            continue;
        }
        if ring.len() < 3 || signed_area(ring) == 0.0 {
            report.push(ViolationCode::DegeneratePolygon, loc);
            continue;
        }
        if !is_simple(ring) {
            report.push(ViolationCode::SelfIntersectingPolygon, loc);
        }
    }
    for (k, line) in scene.drivable.polylines.iter().enumerate() {
        if line.iter().any(|p| !p.is_finite()) {
            report.push(ViolationCode::NonfiniteValue, format!("polyline {k}"));
        }
    }

    report
}
