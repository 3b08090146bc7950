//! In-lane time-to-collision and the ego-vs-others violation report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eligibility::{eligible_pool, FilterConfig};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::kinematics::{body_frame_kinematics, comfort_violation_count, ComfortThresholds};
use crate::scenario::{AgentState, SceneRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtcConfig {
    /// Violation threshold, seconds.
    pub theta_ttc: f64,
    /// Closing-speed floor in the denominator, m/s.
    pub epsilon: f64,
    /// Extra half-width added to the in-lane gate, meters.
    pub lateral_margin: f64,
    /// Skip pairs whose centers are farther apart than this. Off by default;
    /// counts are defined by the unfiltered computation.
    pub prefilter_radius: Option<f64>,
}

impl Default for TtcConfig {
    fn default() -> Self {
        TtcConfig {
            theta_ttc: 1.0,
            epsilon: 1e-3,
            lateral_margin: 0.5,
            prefilter_radius: None,
        }
    }
}

impl TtcConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.theta_ttc > 0.0
            && self.theta_ttc.is_finite()
            && self.epsilon > 0.0
            && self.epsilon.is_finite()
            && self.lateral_margin >= 0.0
            && self.lateral_margin.is_finite()
            && self.prefilter_radius.is_none_or(|r| r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("ttc config: theta_ttc and epsilon must be > 0, margin ≥ 0".into()))
        }
    }
}

/// Relative placement of `j` as seen along `i`'s heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalGeometry {
    /// Front-bumper-to-rear-bumper gap, meters.
    pub gap: f64,
    /// `u_i − u_j`, both speeds projected on `i`'s heading.
    pub closing_speed: f64,
    /// Signed perpendicular offset of `j`'s center, meters (left positive).
    pub lateral_offset: f64,
}

pub fn longitudinal_geometry(i: &AgentState, j: &AgentState) -> Result<LongitudinalGeometry> {
    if !(i.observed && j.observed) {
        return Err(Error::UnobservedState);
    }
    Ok(geometry_unchecked(i, j))
}

fn geometry_unchecked(i: &AgentState, j: &AgentState) -> LongitudinalGeometry {
    let axis = Vec2::from_heading(i.heading);
    let rel = j.position - i.position;
    let along = rel.dot(axis);
    LongitudinalGeometry {
        gap: along - 0.5 * i.bbox.length - 0.5 * j.bbox.length,
        closing_speed: i.velocity.dot(axis) - j.velocity.dot(axis),
        lateral_offset: axis.cross(rel),
    }
}

/// `g0 / max(ε, Δu)` for an in-lane leader that is being closed on, else +∞.
/// Unobserved inputs yield +∞.
pub fn ttc_pair(i: &AgentState, j: &AgentState, cfg: &TtcConfig) -> f64 {
    if !(i.observed && j.observed) {
        return f64::INFINITY;
    }
    let g = geometry_unchecked(i, j);
    let gate = 0.5 * (i.bbox.width + j.bbox.width) + cfg.lateral_margin;
    if g.gap > 0.0 && g.closing_speed > 0.0 && g.lateral_offset.abs() <= gate {
        g.gap / g.closing_speed.max(cfg.epsilon)
    } else {
        f64::INFINITY
    }
}

/// History steps at which the track at `track_index` (0 = ego) has a finite
/// minimum TTC below `theta_ttc` against any other observed track.
pub fn ttc_violation_count(scene: &SceneRecord, track_index: usize, cfg: &TtcConfig) -> u32 {
    let Some(me) = scene.track(track_index) else {
        return 0;
    };
    let steps = scene.history_len.min(me.states.len());
    let mut count = 0;
    for t in 0..steps {
        let si = &me.states[t];
        if !si.observed {
            continue;
        }
        let min_ttc = scene
            .tracks()
            .enumerate()
            .filter(|(k, _)| *k != track_index)
            .filter_map(|(_, other)| other.states.get(t))
            .filter(|sj| {
                sj.observed
                    && cfg
                        .prefilter_radius
                        .is_none_or(|r| sj.position.distance(si.position) <= r)
            })
            .map(|sj| ttc_pair(si, sj, cfg))
            .fold(f64::INFINITY, f64::min);
        if min_ttc.is_finite() && min_ttc < cfg.theta_ttc {
            count += 1;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentViolations {
    pub agent_id: String,
    pub ttc: u32,
    pub comfort: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneViolations {
    pub scene_id: String,
    pub ego: AgentViolations,
    pub others: Vec<AgentViolations>,
}

/// Violation counts for the ego and every eligible candidate of one scene.
pub fn scene_violations(
    scene: &SceneRecord,
    thresholds: &ComfortThresholds,
    ttc_cfg: &TtcConfig,
    filter: &FilterConfig,
) -> Result<SceneViolations> {
    let counts = |index: usize| -> Result<AgentViolations> {
        let track = scene.track(index).expect("valid track index");
        let signals = body_frame_kinematics(track, scene.dt, scene.history_len)?;
        Ok(AgentViolations {
            agent_id: track.agent_id.clone(),
            ttc: ttc_violation_count(scene, index, ttc_cfg),
            comfort: comfort_violation_count(&signals, thresholds),
        })
    };
    let others = eligible_pool(scene, filter)
        .iter()
        .map(|id| counts(scene.track_index(id).expect("pool member exists")))
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneViolations {
        scene_id: scene.scene_id.clone(),
        ego: counts(0)?,
        others,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub ttc_mean: f64,
    pub ttc_median: f64,
    pub comfort_mean: f64,
    pub comfort_median: f64,
}

fn mean(values: &[u32]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64
    }
}

fn median(values: &mut [u32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        f64::from(values[mid])
    } else {
        0.5 * (f64::from(values[mid - 1]) + f64::from(values[mid]))
    }
}

impl GroupStats {
    fn from_counts<'a>(items: impl Iterator<Item = &'a AgentViolations>) -> Self {
        let (mut ttc, mut comf): (Vec<u32>, Vec<u32>) = items.map(|a| (a.ttc, a.comfort)).unzip();
        GroupStats {
            count: ttc.len(),
            ttc_mean: mean(&ttc),
            ttc_median: median(&mut ttc),
            comfort_mean: mean(&comf),
            comfort_median: median(&mut comf),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationAggregate {
    pub scenes: usize,
    pub ego: GroupStats,
    pub others: GroupStats,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationReport {
    pub rows: Vec<SceneViolations>,
    pub aggregate: ViolationAggregate,
}

impl ViolationReport {
    /// Builds the report with rows ordered by `scene_id`, whatever order they arrived in.
    pub fn from_rows(mut rows: Vec<SceneViolations>) -> Self {
        rows.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        let aggregate = ViolationAggregate {
            scenes: rows.len(),
            ego: GroupStats::from_counts(rows.iter().map(|r| &r.ego)),
            others: GroupStats::from_counts(rows.iter().flat_map(|r| r.others.iter())),
        };
        ViolationReport { rows, aggregate }
    }

    /// Flat CSV, one row per agent per scene:
    /// `scene_id,agent_id,role,ttc_violations,comfort_violations`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scene_id", "agent_id", "role", "ttc_violations", "comfort_violations"])?;
        for row in &self.rows {
            let entries = std::iter::once(("ego", &row.ego)).chain(row.others.iter().map(|a| ("other", a)));
            for (role, a) in entries {
                w.write_record([
                    row.scene_id.as_str(),
                    a.agent_id.as_str(),
                    role,
                    &a.ttc.to_string(),
                    &a.comfort.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn ego_vs_others_report(
    corpus: &[SceneRecord],
    thresholds: &ComfortThresholds,
    ttc_cfg: &TtcConfig,
    filter: &FilterConfig,
) -> Result<ViolationReport> {
    let rows = corpus
        .iter()
        .map(|s| scene_violations(s, thresholds, ttc_cfg, filter))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViolationReport::from_rows(rows))
}
