//! Candidate pool construction and threshold filters.
//!
//! The eligible pool keeps non-ego vehicles that are observed, near the ego
//! and on drivable ground at every step of the configured window. The
//! filtered pool then prunes that set with the active displacement, comfort
//! and TTC predicates.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ring_contains, Vec2};
use crate::interaction::{ttc_violation_count, TtcConfig};
use crate::kinematics::{
    body_frame_kinematics, comfort_violation_count, displacement, heading_deviation_sum, ComfortThresholds,
};
use crate::scenario::{AgentCategory, DrivableMap, SceneRecord};

/// Filters in application order; rejection tallies attribute an agent to the
/// first active filter it fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Disp,
    Comf,
    Ttc,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Disp, FilterKind::Comf, FilterKind::Ttc];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Disp => "disp",
            FilterKind::Comf => "comf",
            FilterKind::Ttc => "ttc",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "disp" => Ok(FilterKind::Disp),
            "comf" => Ok(FilterKind::Comf),
            "ttc" => Ok(FilterKind::Ttc),
            other => Err(Error::Config(format!("unknown filter `{other}`"))),
        }
    }
}

/// Parses a comma-separated filter list such as `disp,ttc`. Empty means none.
pub fn parse_filter_list(s: &str) -> Result<BTreeSet<FilterKind>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty() && p.trim() != "none")
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservabilityWindow {
    HistoryOnly,
    #[default]
    HistoryAndFuture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Max ego distance in meters, enforced at every window step.
    pub radius_r: f64,
    pub active: BTreeSet<FilterKind>,
    /// Minimum history displacement in meters.
    pub d_min: f64,
    pub kappa_comf: u32,
    pub kappa_ttc: u32,
    pub observability_window: ObservabilityWindow,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            radius_r: 50.0,
            active: BTreeSet::new(),
            d_min: 3.0,
            kappa_comf: 5,
            kappa_ttc: 0,
            observability_window: ObservabilityWindow::HistoryAndFuture,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_r > 0.0 && self.radius_r.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius_r)));
        }
        if !(self.d_min >= 0.0 && self.d_min.is_finite()) {
            return Err(Error::Config(format!("d_min must be nonnegative, got {}", self.d_min)));
        }
        Ok(())
    }

    pub fn window_len(&self, scene: &SceneRecord) -> usize {
        match self.observability_window {
            ObservabilityWindow::HistoryOnly => scene.history_len,
            ObservabilityWindow::HistoryAndFuture => scene.total_len(),
        }
    }

    pub fn with_filters(&self, active: impl IntoIterator<Item = FilterKind>) -> Self {
        FilterConfig {
            active: active.into_iter().collect(),
            ..self.clone()
        }
    }
}

/// Union of the drivable polygons, even–odd per polygon, boundary inclusive.
pub fn point_in_drivable(map: &DrivableMap, p: Vec2) -> bool {
    map.polygons.iter().any(|ring| ring_contains(ring, p))
}

/// Ids of eligible candidates, in scene order. The ego is never a candidate.
pub fn eligible_pool(scene: &SceneRecord, cfg: &FilterConfig) -> Vec<String> {
    let window = cfg.window_len(scene);
    scene
        .agents
        .iter()
        .filter(|a| a.category == AgentCategory::Vehicle)
        .filter(|a| {
            a.states.len() >= window
                && a.states[..window].iter().zip(&scene.ego.states[..window]).all(|(s, ego)| {
                    s.observed
                        && s.position.distance(ego.position) <= cfg.radius_r
                        && point_in_drivable(&scene.drivable, s.position)
                })
        })
        .map(|a| a.agent_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub agent_id: String,
    /// Heading-deviation sum, radians.
    pub h: f64,
    /// History displacement, meters.
    pub d: f64,
    pub v_comf: u32,
    pub v_ttc: u32,
    pub eligible: bool,
    pub passes_filters: bool,
}

impl CandidateScore {
    /// First active filter this candidate fails, if any.
    pub fn first_rejection(&self, cfg: &FilterConfig) -> Option<FilterKind> {
        cfg.active.iter().copied().find(|kind| match kind {
            FilterKind::Disp => self.d < cfg.d_min,
            FilterKind::Comf => self.v_comf > cfg.kappa_comf,
            FilterKind::Ttc => self.v_ttc > cfg.kappa_ttc,
        })
    }

    pub fn passes(&self, cfg: &FilterConfig) -> bool {
        self.first_rejection(cfg).is_none()
    }
}

/// Computes the four selection metrics for each pool member.
///
/// `passes_filters` is left `false`; [`evaluate_scene`] fills it in.
pub fn score_candidates(
    scene: &SceneRecord,
    pool: &[String],
    thresholds: &ComfortThresholds,
    ttc_cfg: &TtcConfig,
) -> Result<Vec<CandidateScore>> {
    pool.iter()
        .map(|id| {
            let index = scene.track_index(id).ok_or_else(|| Error::MissingAgent {
                scene_id: scene.scene_id.clone(),
                agent_id: id.clone(),
            })?;
            let track = scene.track(index).expect("index from track_index");
            let signals = body_frame_kinematics(track, scene.dt, scene.history_len)?;
            Ok(CandidateScore {
                agent_id: id.clone(),
                h: heading_deviation_sum(track, scene.history_len)?,
                d: displacement(track, scene.history_len)?,
                v_comf: comfort_violation_count(&signals, thresholds),
                v_ttc: ttc_violation_count(scene, index, ttc_cfg),
                eligible: true,
                passes_filters: false,
            })
        })
        .collect()
}

/// Pool members satisfying every active filter, in pool order.
pub fn filtered_pool(pool: &[String], scores: &[CandidateScore], cfg: &FilterConfig) -> Result<Vec<String>> {
    if cfg.active.is_empty() {
        return Ok(pool.to_vec());
    }
    let by_id: HashMap<&str, &CandidateScore> = scores.iter().map(|s| (s.agent_id.as_str(), s)).collect();
    let mut kept = Vec::with_capacity(pool.len());
    for id in pool {
        let score = by_id.get(id.as_str()).ok_or_else(|| Error::MissingScore { agent_id: id.clone() })?;
        if score.passes(cfg) {
            kept.push(id.clone());
        }
    }
    Ok(kept)
}

/// Pools and scores for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEvaluation {
    pub scene_id: String,
    pub pool: Vec<String>,
    pub scores: Vec<CandidateScore>,
    pub filtered: Vec<String>,
}

impl SceneEvaluation {
    pub fn score(&self, agent_id: &str) -> Option<&CandidateScore> {
        self.scores.iter().find(|s| s.agent_id == agent_id)
    }

    /// Heading sums of the filtered pool, aligned with `filtered`.
    pub fn filtered_weights(&self) -> Vec<f64> {
        self.filtered
            .iter()
            .map(|id| self.score(id).map(|s| s.h).unwrap_or_default())
            .collect()
    }

    /// Rejections per filter, attributed to the first failing filter.
    pub fn rejection_tally(&self, cfg: &FilterConfig) -> [usize; 3] {
        let mut tally = [0; 3];
        for s in &self.scores {
            if let Some(kind) = s.first_rejection(cfg) {
                tally[kind as usize] += 1;
            }
        }
        tally
    }
}

pub fn evaluate_scene(
    scene: &SceneRecord,
    filter: &FilterConfig,
    thresholds: &ComfortThresholds,
    ttc_cfg: &TtcConfig,
) -> Result<SceneEvaluation> {
    let pool = eligible_pool(scene, filter);
    let mut scores = score_candidates(scene, &pool, thresholds, ttc_cfg)?;
    for s in &mut scores {
        s.passes_filters = s.passes(filter);
    }
    let filtered = filtered_pool(&pool, &scores, filter)?;
    Ok(SceneEvaluation {
        scene_id: scene.scene_id.clone(),
        pool,
        scores,
        filtered,
    })
}
