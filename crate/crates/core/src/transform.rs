//! SE(2) re-expression of scenes in a selected agent's egocentric frame.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::sampler::SelectionPlan;
use crate::scenario::{AgentCategory, AgentState, AgentTrack, Provenance, SceneRecord};

/// `p ↦ R(rotation)·p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    pub rotation: f64,
    pub translation: Vec2,
}

impl RigidTransform2D {
    pub const IDENTITY: RigidTransform2D = RigidTransform2D {
        rotation: 0.0,
        translation: Vec2::ZERO,
    };

    pub fn apply_point(&self, p: Vec2) -> Vec2 {
        p.rotated(self.rotation) + self.translation
    }

    /// Rotation only; velocities are not translated.
    pub fn apply_vector(&self, v: Vec2) -> Vec2 {
        v.rotated(self.rotation)
    }

    pub fn apply_heading(&self, heading: f64) -> f64 {
        wrap_angle(heading + self.rotation)
    }

    pub fn inverse(&self) -> Self {
        RigidTransform2D {
            rotation: -self.rotation,
            translation: -self.translation.rotated(-self.rotation),
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform2D) -> Self {
        RigidTransform2D {
            rotation: self.rotation + first.rotation,
            translation: self.apply_point(first.translation),
        }
    }

    pub fn apply_state(&self, s: &AgentState) -> AgentState {
        if !s.observed {
            return *s;
        }
        AgentState {
            position: self.apply_point(s.position),
            heading: self.apply_heading(s.heading),
            velocity: self.apply_vector(s.velocity),
            bbox: s.bbox,
            observed: true,
        }
    }
}

/// World → frame of `state`: the state lands at the origin with heading 0.
pub fn se2_from_state(state: &AgentState) -> Result<RigidTransform2D> {
    if !state.observed {
        return Err(Error::UnobservedState);
    }
    let rotation = -state.heading;
    Ok(RigidTransform2D {
        rotation,
        translation: -state.position.rotated(rotation),
    })
}

fn transform_track(track: &AgentTrack, tf: &RigidTransform2D) -> AgentTrack {
    AgentTrack {
        agent_id: track.agent_id.clone(),
        category: track.category,
        states: track.states.iter().map(|s| tf.apply_state(s)).collect(),
    }
}

/// Applies `tf` to every spatial field, keeping roles and ids unchanged.
pub fn transform_spatial(scene: &SceneRecord, tf: &RigidTransform2D) -> SceneRecord {
    let mut out = scene.clone();
    out.ego = transform_track(&scene.ego, tf);
    out.agents = scene.agents.iter().map(|a| transform_track(a, tf)).collect();
    for o in &mut out.obstacles {
        o.position = tf.apply_point(o.position);
        o.heading = tf.apply_heading(o.heading);
    }
    for ring in out.drivable.polygons.iter_mut().chain(out.drivable.polylines.iter_mut()) {
        for p in ring.iter_mut() {
            *p = tf.apply_point(*p);
        }
    }
    out
}

/// Id given to the scene produced from `(scene_id, agent_id)`.
pub fn augmented_scene_id(scene_id: &str, agent_id: &str) -> String {
    format!("{scene_id}+{agent_id}")
}

/// Reference transform for an agent: its state at the last history step.
pub fn reference_transform(scene: &SceneRecord, agent_id: &str) -> Result<RigidTransform2D> {
    let track = scene.agent(agent_id).ok_or_else(|| Error::MissingAgent {
        scene_id: scene.scene_id.clone(),
        agent_id: agent_id.to_string(),
    })?;
    let reference = scene.history_len.saturating_sub(1);
    let state = track.states.get(reference).ok_or_else(|| Error::NotAugmentable {
        agent_id: agent_id.to_string(),
    })?;
    se2_from_state(state).map_err(|_| Error::NotAugmentable {
        agent_id: agent_id.to_string(),
    })
}

/// Re-expresses `scene` with `agent_id` as the new ego.
///
/// The selected track becomes the ego; the original ego is appended to the
/// agents as a vehicle when `keep_original_ego` is set.
pub fn transform_scene(
    scene: &SceneRecord,
    agent_id: &str,
    tf: &RigidTransform2D,
    keep_original_ego: bool,
) -> Result<SceneRecord> {
    let selected = scene.agent(agent_id).ok_or_else(|| Error::MissingAgent {
        scene_id: scene.scene_id.clone(),
        agent_id: agent_id.to_string(),
    })?;
    if !selected.fully_observed() {
        return Err(Error::NotAugmentable {
            agent_id: agent_id.to_string(),
        });
    }

    let moved = transform_spatial(scene, tf);
    let mut agents = Vec::with_capacity(moved.agents.len() + 1);
    let mut new_ego = None;
    for a in moved.agents {
        if a.agent_id == agent_id {
            new_ego = Some(a);
        } else {
            agents.push(a);
        }
    }
    if keep_original_ego {
        let mut old_ego = moved.ego;
        old_ego.category = AgentCategory::Vehicle;
        agents.push(old_ego);
    }

    Ok(SceneRecord {
        scene_id: augmented_scene_id(&scene.scene_id, agent_id),
        ego: new_ego.expect("selected agent located above"),
        agents,
        provenance: Provenance::Augmented {
            source_scene_id: scene.scene_id.clone(),
            source_agent_id: agent_id.to_string(),
        },
        ..moved
    })
}

/// One augmented scene per selected agent, in draw order, each in the
/// agent's frame at the last history step.
pub fn augment_scene(scene: &SceneRecord, plan: &SelectionPlan, keep_original_ego: bool) -> Result<Vec<SceneRecord>> {
    plan.check(None)?;
    plan.agent_ids()
        .map(|id| {
            let tf = reference_transform(scene, id)?;
            transform_scene(scene, id, &tf, keep_original_ego)
        })
        .collect()
}

/// The original corpus followed by every augmented scene, in corpus order
/// then draw order. Every plan is checked before anything is produced.
pub fn augment_dataset(
    corpus: &[SceneRecord],
    plans: &[SelectionPlan],
    keep_original_ego: bool,
) -> Result<Vec<SceneRecord>> {
    let by_id: HashMap<&str, &SelectionPlan> = plans.iter().map(|p| (p.scene_id.as_str(), p)).collect();
    for plan in plans {
        plan.check(None)?;
        let scene = corpus
            .iter()
            .find(|s| s.scene_id == plan.scene_id)
            .ok_or_else(|| Error::InvalidPlan {
                scene_id: plan.scene_id.clone(),
                reason: "plan references a scene not in the corpus".into(),
            })?;
        for id in plan.agent_ids() {
            if scene.agent(id).is_none() {
                return Err(Error::MissingAgent {
                    scene_id: scene.scene_id.clone(),
                    agent_id: id.to_string(),
                });
            }
        }
    }
    let mut out = corpus.to_vec();
    for scene in corpus {
        if let Some(plan) = by_id.get(scene.scene_id.as_str()) {
            out.extend(augment_scene(scene, plan, keep_original_ego)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{SamplingMode, Selection, Temperature};
    use crate::scenario::fixtures::*;
    use crate::scenario::validate_scene;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: Vec2, b: Vec2) -> bool {
        a.distance(b) < 1e-12
    }

    #[test]
    fn se2_examples() {
        let at_origin = AgentState::observed(Vec2::ZERO, 0.0, Vec2::ZERO, car());
        let tf = se2_from_state(&at_origin).unwrap();
        assert_eq!(tf.rotation, 0.0);
        assert!(close(tf.translation, Vec2::ZERO));

        let s = AgentState::observed(Vec2::new(5.0, 0.0), FRAC_PI_2, Vec2::ZERO, car());
        let tf = se2_from_state(&s).unwrap();
        // matrix oracle: [[cos −π/2, −sin −π/2], [sin −π/2, cos −π/2]] = [[0, 1], [−1, 0]]
        let m = [[0.0, 1.0], [-1.0, 0.0]];
        let apply = |p: Vec2| {
            let r = Vec2::new(m[0][0] * p.x + m[0][1] * p.y, m[1][0] * p.x + m[1][1] * p.y);
            r + Vec2::new(0.0, 5.0)
        };
        for p in [Vec2::new(5.0, 0.0), Vec2::new(5.0, 1.0), Vec2::new(-2.0, 3.0)] {
            assert!(close(tf.apply_point(p), apply(p)));
        }
        assert!(close(tf.apply_point(Vec2::new(5.0, 1.0)), Vec2::new(1.0, 0.0)));
        let own = tf.apply_state(&s);
        assert!(close(own.position, Vec2::ZERO));
        assert!(own.heading.abs() < 1e-15);

        assert!(se2_from_state(&AgentState::unobserved()).is_err());
    }

    #[test]
    fn inverse_and_compose() {
        let tf = RigidTransform2D {
            rotation: 2.3,
            translation: Vec2::new(-4.0, 7.5),
        };
        let id = tf.compose(&tf.inverse());
        for p in [Vec2::new(1.0, 2.0), Vec2::new(-300.0, 55.0)] {
            assert!(id.apply_point(p).distance(p) < 1e-12);
            assert!(tf.inverse().apply_point(tf.apply_point(p)).distance(p) < 1e-12);
        }
    }

    fn sample_scene() -> SceneRecord {
        let n = 21 + 10;
        let mut s = scene(
            21,
            10,
            vec![
                straight_track("a", Vec2::new(10.0, 0.0), Vec2::new(3.0, 4.0), n, 0.1),
                straight_track("b", Vec2::new(3.0, 7.0), Vec2::new(5.0, 0.0), n, 0.1),
            ],
        );
        s.obstacles.push(crate::scenario::Obstacle {
            position: Vec2::new(20.0, -5.0),
            heading: 3.0,
            bbox: car(),
        });
        s
    }

    #[test]
    fn identity_transform_on_ego_reproduces_scene() {
        let mut s = sample_scene();
        // move the ego into the agents so it can be selected
        let ego = s.ego.clone();
        s.ego = s.agents.remove(1);
        s.agents.push(ego);
        let out = transform_scene(&s, "ego", &RigidTransform2D::IDENTITY, true).unwrap();
        assert_eq!(out.ego, s.agents[1]);
        assert_eq!(out.agents[0], s.agents[0]);
        assert_eq!(out.agents[1].agent_id, s.ego.agent_id);
        assert_eq!(out.agents[1].states, s.ego.states);
        assert_eq!(out.obstacles, s.obstacles);
        assert_eq!(out.drivable, s.drivable);
        assert!(matches!(out.provenance, Provenance::Augmented { .. }));
    }

    #[test]
    fn velocity_rotates_without_translation() {
        let s = sample_scene();
        let tf = RigidTransform2D {
            rotation: -FRAC_PI_2,
            translation: Vec2::new(100.0, -3.0),
        };
        let out = transform_scene(&s, "a", &tf, true).unwrap();
        let v = out.ego.states[0].velocity;
        assert!(close(v, Vec2::new(4.0, -3.0)), "{v:?}");
    }

    #[test]
    fn augmented_scene_is_egocentric_and_valid() {
        let s = sample_scene();
        let tf = reference_transform(&s, "a").unwrap();
        let out = transform_scene(&s, "a", &tf, true).unwrap();
        let reference = &out.ego.states[s.history_len - 1];
        assert!(reference.position.norm() < 1e-9);
        assert!(reference.heading.abs() < 1e-9);
        assert_eq!(out.track_count(), s.track_count());
        assert!(validate_scene(&out).is_empty(), "{:?}", validate_scene(&out));
        // distance between b and the old ego at step 4 is unchanged
        let before = s.agents[1].states[4].position.distance(s.ego.states[4].position);
        let after = out.agents[0].states[4].position.distance(out.agents[1].states[4].position);
        assert!((before - after).abs() < 1e-9);
        // dropping the original ego
        let dropped = transform_scene(&s, "a", &tf, false).unwrap();
        assert_eq!(dropped.track_count(), s.track_count() - 1);
    }

    #[test]
    fn headings_stay_wrapped() {
        let s = sample_scene();
        let tf = RigidTransform2D {
            rotation: PI - 0.01,
            translation: Vec2::ZERO,
        };
        let out = transform_spatial(&s, &tf);
        assert!(out.obstacles[0].heading <= PI && out.obstacles[0].heading > -PI);
    }

    #[test]
    fn unobservable_selection_is_rejected() {
        let mut s = sample_scene();
        s.agents[0].states[30] = AgentState::unobserved();
        let err = transform_scene(&s, "a", &RigidTransform2D::IDENTITY, true).unwrap_err();
        assert!(matches!(err, Error::NotAugmentable { .. }));
    }

    fn plan_for(scene_id: &str, ids: &[&str]) -> SelectionPlan {
        SelectionPlan {
            scene_id: scene_id.into(),
            mode: SamplingMode::PerScene,
            tau: Temperature::Finite(0.5),
            seed: 0,
            pool_size: 2,
            skipped: ids.is_empty(),
            selected: ids
                .iter()
                .map(|id| Selection {
                    agent_id: id.to_string(),
                    probability: 0.5,
                })
                .collect(),
        }
    }

    #[test]
    fn augment_dataset_counts_and_errors() {
        let s = sample_scene();
        let corpus = vec![s.clone()];
        assert_eq!(augment_dataset(&corpus, &[], true).unwrap(), corpus);
        let out = augment_dataset(&corpus, &[plan_for("s0", &["b", "a"])], true).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].scene_id, "s0+b");
        assert_eq!(out[2].scene_id, "s0+a");
        assert!(augment_dataset(&corpus, &[plan_for("s0", &["a", "a"])], true).is_err());
        assert!(matches!(
            augment_dataset(&corpus, &[plan_for("s0", &["zz"])], true),
            Err(Error::MissingAgent { .. })
        ));
    }
}
