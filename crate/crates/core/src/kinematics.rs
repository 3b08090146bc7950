//! Per-agent motion descriptors over the history window.
//!
//! Velocities come from the data and are rotated into each timestep's
//! heading-aligned frame; positions are never differentiated. Derivatives use
//! second-order central differences on interior samples and second-order
//! one-sided stencils at both ends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::scenario::{AgentState, AgentTrack};

/// Shortest history that supports two derivative levels.
pub const MIN_KINEMATIC_HISTORY: usize = 4;

/// `theta_a − theta_b` mapped into (−π, π].
pub fn wrapped_heading_delta(theta_a: f64, theta_b: f64) -> f64 {
    wrap_angle(theta_a - theta_b)
}

fn observed_history<'a>(track: &'a AgentTrack, history_len: usize) -> Result<&'a [AgentState]> {
    let window = &track.states[..history_len.min(track.states.len())];
    if let Some(step) = window.iter().position(|s| !s.observed) {
        return Err(Error::Unobserved {
            agent_id: track.agent_id.clone(),
            step,
        });
    }
    Ok(window)
}

/// Sum of absolute wrapped heading changes over the history window.
pub fn heading_deviation_sum(track: &AgentTrack, history_len: usize) -> Result<f64> {
    let window = observed_history(track, history_len)?;
    Ok(window
        .windows(2)
        .map(|w| wrapped_heading_delta(w[1].heading, w[0].heading).abs())
        .sum())
}

/// Straight-line distance between the first and last history positions.
pub fn displacement(track: &AgentTrack, history_len: usize) -> Result<f64> {
    let last = history_len.saturating_sub(1);
    for step in [0, last] {
        match track.states.get(step) {
            Some(s) if s.observed => {}
            _ => {
                return Err(Error::Unobserved {
                    agent_id: track.agent_id.clone(),
                    step,
                })
            }
        }
    }
    Ok(track.states[last].position.distance(track.states[0].position))
}

/// First derivative of a uniformly sampled series. Needs at least 3 samples.
pub(crate) fn differentiate(series: &[f64], dt: f64) -> Vec<f64> {
    let n = series.len();
    debug_assert!(n >= 3);
    let h2 = 2.0 * dt;
    let mut out = Vec::with_capacity(n);
    out.push((-3.0 * series[0] + 4.0 * series[1] - series[2]) / h2);
    for t in 1..n - 1 {
        out.push((series[t + 1] - series[t - 1]) / h2);
    }
    out.push((3.0 * series[n - 1] - 4.0 * series[n - 2] + series[n - 3]) / h2);
    out
}

/// Body-frame acceleration, jerk, yaw rate and yaw acceleration per history step.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSignals {
    pub a_lon: Vec<f64>,
    pub a_lat: Vec<f64>,
    pub jerk_lon: Vec<f64>,
    pub jerk_lat: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_accel: Vec<f64>,
}

impl KinematicSignals {
    pub fn len(&self) -> usize {
        self.a_lon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_lon.is_empty()
    }
}

pub fn body_frame_kinematics(track: &AgentTrack, dt: f64, history_len: usize) -> Result<KinematicSignals> {
    if history_len < MIN_KINEMATIC_HISTORY {
        return Err(Error::HorizonTooShort {
            got: history_len,
            need: MIN_KINEMATIC_HISTORY,
        });
    }
    let window = observed_history(track, history_len)?;
    if window.len() < history_len {
        return Err(Error::HorizonTooShort {
            got: window.len(),
            need: history_len,
        });
    }

    let (mut v_lon, mut v_lat) = (Vec::with_capacity(history_len), Vec::with_capacity(history_len));
    for s in window {
        let body = s.velocity.rotated(-s.heading);
        v_lon.push(body.x);
        v_lat.push(body.y);
    }

    let mut unwrapped = Vec::with_capacity(history_len);
    let mut acc = window[0].heading;
    unwrapped.push(acc);
    for w in window.windows(2) {
        acc += wrapped_heading_delta(w[1].heading, w[0].heading);
        unwrapped.push(acc);
    }

    let a_lon = differentiate(&v_lon, dt);
    let a_lat = differentiate(&v_lat, dt);
    let jerk_lon = differentiate(&a_lon, dt);
    let jerk_lat = differentiate(&a_lat, dt);
    let yaw_rate = differentiate(&unwrapped, dt);
    let yaw_accel = differentiate(&yaw_rate, dt);

    Ok(KinematicSignals {
        a_lon,
        a_lat,
        jerk_lon,
        jerk_lat,
        yaw_rate,
        yaw_accel,
    })
}

/// How the six per-timestep exceedance tests are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    /// Every test must exceed.
    #[default]
    All,
    /// Any single exceedance counts.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComfortThresholds {
    /// Longitudinal acceleration, m/s².
    pub alpha_x: f64,
    /// Lateral acceleration, m/s².
    pub alpha_y: f64,
    /// Longitudinal jerk, m/s³.
    pub beta_x: f64,
    /// Lateral jerk, m/s³.
    pub beta_y: f64,
    /// Yaw rate, rad/s.
    pub gamma_1: f64,
    /// Yaw acceleration, rad/s².
    pub gamma_2: f64,
    pub combiner: Combiner,
}

impl Default for ComfortThresholds {
    // Mirrors the nuPlan comfort metric bounds.
    fn default() -> Self {
        ComfortThresholds {
            alpha_x: 2.40,
            alpha_y: 4.89,
            beta_x: 4.13,
            beta_y: 4.13,
            gamma_1: 0.95,
            gamma_2: 1.93,
            combiner: Combiner::All,
        }
    }
}

impl ComfortThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha_x,
            self.alpha_y,
            self.beta_x,
            self.beta_y,
            self.gamma_1,
            self.gamma_2,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("comfort thresholds must be positive and finite".into()))
        }
    }

    fn exceeds(&self, s: &KinematicSignals, t: usize) -> bool {
        let tests = [
            s.a_lon[t].abs() > self.alpha_x,
            s.a_lat[t].abs() > self.alpha_y,
            s.jerk_lon[t].abs() > self.beta_x,
            s.jerk_lat[t].abs() > self.beta_y,
            s.yaw_rate[t].abs() > self.gamma_1,
            s.yaw_accel[t].abs() > self.gamma_2,
        ];
        match self.combiner {
            Combiner::All => tests.iter().all(|b| *b),
            Combiner::Any => tests.iter().any(|b| *b),
        }
    }
}

/// Number of history timesteps whose combined exceedance indicator fires.
pub fn comfort_violation_count(signals: &KinematicSignals, thresholds: &ComfortThresholds) -> u32 {
    (0..signals.len()).filter(|&t| thresholds.exceeds(signals, t)).count() as u32
}
