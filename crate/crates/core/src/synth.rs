//! Synthetic scenes with closed-form tracks and ground-truth labels.
//!
//! The ego drives along +x on the centerline of a straight road. Other agents
//! occupy slots on six side lanes. Ground truth is written into the scene
//! context as `gt.<metric>.<agent_id>`; every agent also gets
//! `gt.kind.<agent_id>`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::io::{CorpusHeader, CorpusWriter};
use crate::scenario::{AgentCategory, AgentState, AgentTrack, BoundingBox, DrivableMap, Obstacle, Provenance, SceneRecord};

pub const LANES: [f64; 6] = [-12.0, -8.0, -4.0, 4.0, 8.0, 12.0];
pub const SLOT_X: [f64; 4] = [-12.0, 2.0, 16.0, 30.0];
pub const ROAD_HALF_WIDTH: f64 = 14.0;
const CAR: BoundingBox = BoundingBox { length: 4.0, width: 2.0 };
const PERSON: BoundingBox = BoundingBox { length: 0.6, width: 0.6 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub scenes: usize,
    pub dt: f64,
    pub history_len: usize,
    pub future_len: usize,
    /// m/s; cruisers, jerky agents and tailgate leaders share it.
    pub ego_speed: f64,

    pub cruisers: usize,
    pub turners: usize,
    pub tailgate_pairs: usize,
    pub jerky: usize,
    pub stopped: usize,
    pub parkers: usize,
    pub occluded: usize,
    pub pedestrians: usize,
    pub ramps: usize,
    pub cubics: usize,
    pub obstacles: usize,

    /// Cruiser heading noise, uniform in ±this, rad.
    pub cruiser_heading_jitter: f64,
    /// Turner yaw rate magnitude in rad/s; drawn from `turner_yaw_range` when unset.
    pub turner_yaw_rate: Option<f64>,
    pub turner_yaw_range: (f64, f64),
    /// Turning circle radius, m.
    pub turner_radius: f64,
    /// Initial bumper gap of a tailgating pair, m.
    pub tailgate_gap: f64,
    /// Initial closing speed of a tailgating pair, m/s.
    pub tailgate_closing_speed: f64,
    /// Body-frame velocity noise amplitude of jerky agents, m/s.
    pub jerk_velocity_noise: f64,
    /// Heading noise amplitude of jerky agents, rad.
    pub jerk_heading_noise: f64,
    /// Ramp acceleration, m/s².
    pub ramp_accel: f64,
    /// Cubic tracks' constant jerk, m/s³.
    pub cubic_jerk: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            scenes: 100,
            dt: 0.1,
            history_len: 21,
            future_len: 80,
            ego_speed: 3.0,
            cruisers: 6,
            turners: 2,
            tailgate_pairs: 1,
            jerky: 2,
            stopped: 1,
            parkers: 1,
            occluded: 1,
            pedestrians: 1,
            ramps: 0,
            cubics: 0,
            obstacles: 1,
            cruiser_heading_jitter: 0.003,
            turner_yaw_rate: None,
            turner_yaw_range: (0.2, 1.0),
            turner_radius: 2.5,
            tailgate_gap: 2.5,
            tailgate_closing_speed: 5.0,
            jerk_velocity_noise: 1.0,
            jerk_heading_noise: 0.3,
            ramp_accel: 0.5,
            cubic_jerk: 0.3,
        }
    }
}

impl SynthSpec {
    /// Agents that need a lane slot; a tailgating pair takes two.
    pub fn slots_needed(&self) -> usize {
        self.cruisers + self.turners + self.jerky + self.stopped + self.occluded + self.ramps + self.cubics
            + 2 * self.tailgate_pairs
    }

    pub fn agents_per_scene(&self) -> usize {
        self.slots_needed() + self.parkers + self.pedestrians
    }

    /// Time-to-collision every tailgating follower keeps over the whole track.
    pub fn tailgate_ttc(&self) -> f64 {
        self.tailgate_gap / self.tailgate_closing_speed
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("synthetic spec: {what}")));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.history_len == 0 {
            return bad("history_len must be at least 1");
        }
        let slots = LANES.len() * SLOT_X.len();
        if self.slots_needed() > slots {
            return bad(&format!("{} lane slots needed, {slots} available", self.slots_needed()));
        }
        if self.tailgate_pairs > LANES.len() * SLOT_X.len() / 2 {
            return bad("too many tailgating pairs");
        }
        if self.tailgate_pairs > 0 && !(self.tailgate_gap > 0.0 && self.tailgate_closing_speed > 0.0) {
            return bad("tailgate gap and closing speed must be positive");
        }
        if self.tailgate_gap > 14.0 {
            return bad("tailgate gap must fit within two slots");
        }
        let (lo, hi) = self.turner_yaw_range;
        if self.turner_yaw_rate.is_none() && !(0.0 < lo && lo <= hi) {
            return bad("turner_yaw_range must satisfy 0 < lo <= hi");
        }
        if self.turner_yaw_rate.is_some_and(|w| w * self.dt >= PI) || hi * self.dt >= PI {
            return bad("turner yaw step must stay below π");
        }
        if !(self.turner_radius > 0.0) {
            return bad("turner_radius must be positive");
        }
        Ok(())
    }

    pub fn header(&self) -> CorpusHeader {
        let mut h = CorpusHeader::new(self.dt, self.history_len, self.future_len);
        h.tags.insert("source".into(), "synthetic".into());
        h
    }
}

/// Period-4 sign pattern `+ + − −`. Second-order central differences map it
/// onto another period-4 pattern of the same magnitude, so injected noise
/// survives differentiation at every interior step.
fn zigzag(t: usize) -> f64 {
    if t % 4 < 2 {
        1.0
    } else {
        -1.0
    }
}

struct Builder<'a> {
    spec: &'a SynthSpec,
    agents: Vec<AgentTrack>,
    context: BTreeMap<String, String>,
}

impl Builder<'_> {
    fn n(&self) -> usize {
        self.spec.history_len + self.spec.future_len
    }

    fn push(&mut self, id: String, kind: &str, category: AgentCategory, states: Vec<AgentState>) {
        self.context.insert(format!("gt.kind.{id}"), kind.into());
        self.agents.push(AgentTrack {
            agent_id: id,
            category,
            states,
        });
    }

    fn label(&mut self, metric: &str, id: &str, value: f64) {
        self.context.insert(format!("gt.{metric}.{id}"), value.to_string());
    }

    /// Straight line at constant velocity along +x.
    fn straight(&self, start: Vec2, speed: f64, bbox: BoundingBox) -> Vec<AgentState> {
        let dt = self.spec.dt;
        (0..self.n())
            .map(|k| {
                let t = k as f64 * dt;
                AgentState::observed(start + Vec2::new(speed * t, 0.0), 0.0, Vec2::new(speed, 0.0), bbox)
            })
            .collect()
    }
}

/// One synthetic scene; scene `index` depends only on `(spec, seed, index)`.
pub fn gen_scene(spec: &SynthSpec, seed: u64, index: usize) -> SceneRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let dt = spec.dt;
    let v = spec.ego_speed;
    let mut b = Builder {
        spec,
        agents: Vec::new(),
        context: BTreeMap::new(),
    };
    let n = b.n();
    let time = |k: usize| k as f64 * dt;

    // Slots: pairs take two consecutive x positions in one lane.
    let mut pair_slots: Vec<(usize, usize)> = (0..LANES.len()).flat_map(|l| [(l, 0), (l, 2)]).collect();
    pair_slots.shuffle(&mut rng);
    let pairs: Vec<(usize, usize)> = pair_slots[..spec.tailgate_pairs].to_vec();
    let mut singles: Vec<(usize, usize)> = (0..LANES.len())
        .flat_map(|l| (0..SLOT_X.len()).map(move |x| (l, x)))
        .filter(|&(l, x)| !pairs.iter().any(|&(pl, px)| pl == l && (x == px || x == px + 1)))
        .collect();
    singles.shuffle(&mut rng);
    let mut singles = singles.into_iter();
    let mut slot = move || {
        let (l, x) = singles.next().expect("slot count checked by validate");
        Vec2::new(SLOT_X[x], LANES[l])
    };

    let ego = AgentTrack {
        agent_id: "ego".into(),
        category: AgentCategory::Vehicle,
        states: b.straight(Vec2::ZERO, v, CAR),
    };

    for k in 0..spec.cruisers {
        let start = slot();
        let mut states = b.straight(start, v, CAR);
        for s in &mut states {
            s.heading = rng.random_range(-1.0..=1.0) * spec.cruiser_heading_jitter;
        }
        b.push(format!("cruiser-{k}"), "cruiser", AgentCategory::Vehicle, states);
    }

    for k in 0..spec.turners {
        let start = slot();
        let magnitude = spec
            .turner_yaw_rate
            .unwrap_or_else(|| rng.random_range(spec.turner_yaw_range.0..=spec.turner_yaw_range.1));
        // Inner lanes turn away from the ego lane, outer lanes toward it, so
        // the circle stays on the road and clear of the ego.
        let toward_center = start.y.abs() > 4.0;
        let left = (start.y < 0.0) == toward_center;
        let omega = if left { magnitude } else { -magnitude };
        let r = spec.turner_radius;
        let speed = r * magnitude;
        let signed_r = speed / omega;
        let center = start + Vec2::new(0.0, signed_r);
        let states = (0..n)
            .map(|i| {
                let th = omega * time(i);
                let pos = center + Vec2::new(signed_r * th.sin(), -signed_r * th.cos());
                AgentState::observed(pos, th, Vec2::from_heading(th) * speed, CAR)
            })
            .collect();
        let id = format!("turner-{k}");
        b.label("h", &id, magnitude * dt * (spec.history_len.saturating_sub(1)) as f64);
        b.label("yaw_rate", &id, omega);
        b.push(id, "turner", AgentCategory::Vehicle, states);
    }

    for (k, &(l, x)) in pairs.iter().enumerate() {
        // Follower closes in as du(t) = du0·e^(−t/τ) with gap g(t) = τ·du(t),
        // so g/du = τ at every step.
        let follower0 = Vec2::new(SLOT_X[x], LANES[l]);
        let tau = spec.tailgate_ttc();
        let du0 = spec.tailgate_closing_speed;
        let leader0 = follower0 + Vec2::new(CAR.length + spec.tailgate_gap, 0.0);
        let leader = b.straight(leader0, v, CAR);
        let follower = (0..n)
            .map(|i| {
                let t = time(i);
                let decay = (-t / tau).exp();
                let pos = follower0 + Vec2::new(v * t + tau * du0 * (1.0 - decay), 0.0);
                AgentState::observed(pos, 0.0, Vec2::new(v + du0 * decay, 0.0), CAR)
            })
            .collect();
        let id = format!("tail-{k}");
        b.label("ttc", &id, tau);
        b.push(format!("lead-{k}"), "tailgate_leader", AgentCategory::Vehicle, leader);
        b.push(id, "tailgate_follower", AgentCategory::Vehicle, follower);
    }

    for k in 0..spec.jerky {
        let start = slot();
        let a_v = spec.jerk_velocity_noise;
        let a_h = spec.jerk_heading_noise;
        let states = (0..n)
            .map(|i| {
                let heading = a_h * zigzag(i);
                let body = Vec2::new(v + a_v * zigzag(i), a_v * zigzag(i + 1));
                let pos = start + Vec2::new(v * time(i), 0.0);
                AgentState::observed(pos, heading, body.rotated(heading), CAR)
            })
            .collect();
        let id = format!("jerky-{k}");
        b.label("accel_amplitude", &id, a_v / dt);
        b.label("jerk_amplitude", &id, a_v / (dt * dt));
        b.push(id, "jerky", AgentCategory::Vehicle, states);
    }

    for k in 0..spec.stopped {
        let states = b.straight(slot(), 0.0, CAR);
        let id = format!("stopped-{k}");
        b.label("h", &id, 0.0);
        b.label("d", &id, 0.0);
        b.push(id, "stopped", AgentCategory::Vehicle, states);
    }

    for k in 0..spec.occluded {
        let mut states = b.straight(slot(), v, CAR);
        let gap = rng.random_range(0..n);
        states[gap] = AgentState::unobserved();
        b.push(format!("occluded-{k}"), "occluded", AgentCategory::Vehicle, states);
    }

    for k in 0..spec.ramps {
        let start = slot();
        let a = spec.ramp_accel;
        let states = (0..n)
            .map(|i| {
                let t = time(i);
                let pos = start + Vec2::new(v * t + 0.5 * a * t * t, 0.0);
                AgentState::observed(pos, 0.0, Vec2::new(v + a * t, 0.0), CAR)
            })
            .collect();
        let id = format!("ramp-{k}");
        b.label("a_lon", &id, a);
        b.push(id, "ramp", AgentCategory::Vehicle, states);
    }

    for k in 0..spec.cubics {
        let start = slot();
        let j = spec.cubic_jerk;
        let states = (0..n)
            .map(|i| {
                let t = time(i);
                let pos = start + Vec2::new(v * t + j * t * t * t / 6.0, 0.0);
                AgentState::observed(pos, 0.0, Vec2::new(v + 0.5 * j * t * t, 0.0), CAR)
            })
            .collect();
        let id = format!("cubic-{k}");
        b.label("jerk", &id, j);
        b.push(id, "cubic", AgentCategory::Vehicle, states);
    }

    for k in 0..spec.parkers {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let start = Vec2::new(rng.random_range(-10.0..30.0), side * (ROAD_HALF_WIDTH + 3.0));
        let states = b.straight(start, 0.0, CAR);
        b.push(format!("parker-{k}"), "parker", AgentCategory::Vehicle, states);
    }

    for k in 0..spec.pedestrians {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let start = Vec2::new(rng.random_range(-10.0..30.0), side * (ROAD_HALF_WIDTH + 1.5));
        let states = b.straight(start, 1.2 * side, PERSON);
        b.push(format!("ped-{k}"), "pedestrian", AgentCategory::Pedestrian, states);
    }

    let obstacles = (0..spec.obstacles)
        .map(|_| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Obstacle {
                position: Vec2::new(rng.random_range(-20.0..60.0), side * (ROAD_HALF_WIDTH + 2.0)),
                heading: rng.random_range(-PI..PI),
                bbox: BoundingBox { length: 0.5, width: 0.5 },
            }
        })
        .collect();

    let x_end = v * time(n) + 100.0;
    let drivable = DrivableMap {
        polygons: vec![vec![
            Vec2::new(-100.0, -ROAD_HALF_WIDTH),
            Vec2::new(x_end, -ROAD_HALF_WIDTH),
            Vec2::new(x_end, ROAD_HALF_WIDTH),
            Vec2::new(-100.0, ROAD_HALF_WIDTH),
        ]],
        polylines: std::iter::once(0.0)
            .chain(LANES)
            .map(|y| vec![Vec2::new(-100.0, y), Vec2::new(x_end, y)])
            .collect(),
    };

    let mut scene = SceneRecord {
        scene_id: format!("syn-{index:06}"),
        dt,
        history_len: spec.history_len,
        future_len: spec.future_len,
        ego,
        agents: b.agents,
        obstacles,
        drivable,
        context: b.context,
        provenance: Provenance::Original,
    };
    scene.normalize_headings();
    scene
}

/// Whole synthetic corpus in memory.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<(CorpusHeader, Vec<SceneRecord>)> {
    spec.validate()?;
    Ok((spec.header(), (0..spec.scenes).map(|k| gen_scene(spec, seed, k)).collect()))
}

/// Streams a synthetic corpus to `path`; returns the scene count.
pub fn write_synthetic(path: impl AsRef<Path>, spec: &SynthSpec, seed: u64) -> Result<usize> {
    spec.validate()?;
    let mut w = CorpusWriter::create(path, &spec.header())?;
    for k in 0..spec.scenes {
        w.write_scene(&gen_scene(spec, seed, k))?;
    }
    w.finish()
}

/// Parses a ground-truth tag written by the generator.
pub fn ground_truth(scene: &SceneRecord, metric: &str, agent_id: &str) -> Option<f64> {
    scene.context.get(&format!("gt.{metric}.{agent_id}"))?.parse().ok()
}
