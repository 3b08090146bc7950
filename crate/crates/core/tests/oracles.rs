//! Scenario-level checks against independent oracles on synthetic corpora.

use std::f64::consts::PI;

use trafficaug::eligibility::{evaluate_scene, FilterConfig, FilterKind};
use trafficaug::geometry::Vec2;
use trafficaug::interaction::{ego_vs_others_report, ttc_violation_count, TtcConfig};
use trafficaug::kinematics::{heading_deviation_sum, ComfortThresholds};
use trafficaug::sampler::{select_per_scene, SamplingConfig, SamplingMode, ScenePool, SelectionPlan, Selection, Temperature};
use trafficaug::scenario::{AgentState, SceneRecord};
use trafficaug::stats::{run_summary, PoolTotals};
use trafficaug::synth::{gen_scene, gen_synthetic, ground_truth, SynthSpec};
use trafficaug::transform::augment_dataset;

fn bare(f: impl FnOnce(&mut SynthSpec)) -> SynthSpec {
    let mut s = SynthSpec {
        cruisers: 0,
        turners: 0,
        tailgate_pairs: 0,
        jerky: 0,
        stopped: 0,
        parkers: 0,
        occluded: 0,
        pedestrians: 0,
        obstacles: 0,
        ..SynthSpec::default()
    };
    f(&mut s);
    s
}

/// Constant-velocity rollout in 0.01 s steps: time until the bumper gap along
/// `i`'s heading closes, if it does within `horizon`.
fn rollout_ttc(i: &AgentState, j: &AgentState, horizon: f64) -> Option<f64> {
    let e = Vec2::from_heading(i.heading);
    let lateral = e.cross(j.position - i.position).abs();
    if lateral > (i.bbox.width + j.bbox.width) / 2.0 + 0.5 {
        return None;
    }
    (0..=(horizon / 0.01) as usize).map(|k| k as f64 * 0.01).find(|&t| {
        let rel = (j.position + j.velocity * t) - (i.position + i.velocity * t);
        rel.dot(e) - (i.bbox.length + j.bbox.length) / 2.0 <= 0.0
    })
}

fn rollout_violations(scene: &SceneRecord, id: &str, theta: f64) -> u32 {
    let me = scene.agent(id).unwrap();
    (0..scene.history_len)
        .filter(|&t| {
            scene
                .tracks()
                .filter(|o| o.agent_id != id)
                .filter_map(|o| rollout_ttc(&me.states[t], &o.states[t], 5.0))
                .any(|ttc| ttc < theta)
        })
        .count() as u32
}

#[test]
fn tailgater_violates_at_every_history_step() {
    let spec = bare(|s| {
        s.tailgate_pairs = 1;
        s.tailgate_gap = 2.5;
        s.tailgate_closing_speed = 5.0;
    });
    let scene = gen_scene(&spec, 0, 0);
    assert_eq!(ground_truth(&scene, "ttc", "tail-0"), Some(0.5));
    let index = scene.track_index("tail-0").unwrap();

    let strict = TtcConfig::default();
    assert_eq!(rollout_violations(&scene, "tail-0", 1.0), 21);
    assert_eq!(ttc_violation_count(&scene, index, &strict), 21);

    let loose = TtcConfig { theta_ttc: 0.4, ..TtcConfig::default() };
    assert_eq!(rollout_violations(&scene, "tail-0", 0.4), 0);
    assert_eq!(ttc_violation_count(&scene, index, &loose), 0);

    let leader = scene.track_index("lead-0").unwrap();
    assert_eq!(ttc_violation_count(&scene, leader, &strict), 0);
}

#[test]
fn u_turn_sums_to_pi() {
    // π over 20 deltas at dt = 0.1
    let spec = bare(|s| {
        s.turners = 1;
        s.turner_yaw_rate = Some(PI / 2.0);
    });
    let scene = gen_scene(&spec, 0, 0);
    let h = heading_deviation_sum(scene.agent("turner-0").unwrap(), 21).unwrap();
    assert!((h - PI).abs() < 1e-12, "{h}");
}

#[test]
fn stationary_corpus_has_no_violations() {
    let spec = bare(|s| {
        s.scenes = 5;
        s.stopped = 6;
        s.ego_speed = 0.0;
    });
    let (_, scenes) = gen_synthetic(&spec, 2).unwrap();
    let report = ego_vs_others_report(&scenes, &ComfortThresholds::default(), &TtcConfig::default(), &FilterConfig::default()).unwrap();
    assert_eq!(report.rows.len(), 5);
    for row in &report.rows {
        assert_eq!((row.ego.ttc, row.ego.comfort), (0, 0));
        assert_eq!(row.others.len(), 6);
        assert!(row.others.iter().all(|a| a.ttc == 0 && a.comfort == 0));
    }
}

#[test]
fn jerk_injected_agents_exceed_every_comfort_bound() {
    // Interior steps 2..=T_H−3 see the injected pattern with magnitude
    // A/dt (acceleration, yaw rate) and A/dt² (jerk, yaw acceleration), far
    // above every default bound, so each contributes at least T_H − 4.
    let spec = bare(|s| {
        s.scenes = 10;
        s.jerky = 3;
        s.cruisers = 3;
        s.cruiser_heading_jitter = 0.0;
    });
    let (_, scenes) = gen_synthetic(&spec, 4).unwrap();
    let floor = (spec.history_len - 4) as u32;
    let report = ego_vs_others_report(&scenes, &ComfortThresholds::default(), &TtcConfig::default(), &FilterConfig::default()).unwrap();
    for row in &report.rows {
        assert_eq!(row.ego.comfort, 0);
        for a in &row.others {
            if a.agent_id.starts_with("jerky") {
                assert!(a.comfort >= floor, "{} has {}", a.agent_id, a.comfort);
            } else {
                assert_eq!(a.comfort, 0, "{}", a.agent_id);
            }
        }
    }
    let expected_floor = 3.0 * floor as f64 / 6.0;
    assert!(report.aggregate.others.comfort_mean >= expected_floor);
    assert!(report.aggregate.others.comfort_mean > report.aggregate.ego.comfort_mean);
}

fn tiny_corpus(n: usize) -> Vec<SceneRecord> {
    let spec = bare(|s| {
        s.scenes = n;
        s.cruisers = 3;
        s.future_len = 4;
    });
    gen_synthetic(&spec, 6).unwrap().1
}

fn plan(scene: &SceneRecord, picks: &[&str]) -> SelectionPlan {
    SelectionPlan {
        scene_id: scene.scene_id.clone(),
        mode: SamplingMode::PerScene,
        tau: Temperature::default(),
        seed: 0,
        pool_size: if picks.is_empty() { 0 } else { 3 },
        skipped: picks.is_empty(),
        selected: picks.iter().map(|id| Selection { agent_id: id.to_string(), probability: 1.0 }).collect(),
    }
}

#[test]
fn thousand_scenes_with_forty_skips_yield_1960() {
    let corpus = tiny_corpus(1000);
    let plans: Vec<_> = corpus
        .iter()
        .enumerate()
        .map(|(k, s)| plan(s, if k % 25 == 0 { &[] } else { &["cruiser-1"] }))
        .collect();
    assert_eq!(plans.iter().filter(|p| p.skipped).count(), 40);
    let out = augment_dataset(&corpus, &plans, true).unwrap();
    assert_eq!(out.len(), 1960);
    let summary = run_summary(1000, out.len(), &plans, PoolTotals::default(), false, serde_json::Value::Null).unwrap();
    assert_eq!(summary.skip_rate, 0.04);
}

#[test]
fn two_draws_per_scene_bound_output_by_three_times_input() {
    let corpus = tiny_corpus(1000);
    let cfg = SamplingConfig { n_s: 2, seed: 1, ..SamplingConfig::default() };
    let filter = FilterConfig::default().with_filters([FilterKind::Disp]);
    let thr = ComfortThresholds::default();
    let ttc = TtcConfig::default();
    let plans: Vec<_> = corpus
        .iter()
        .map(|s| select_per_scene(&ScenePool::from(&evaluate_scene(s, &filter, &thr, &ttc).unwrap()), &cfg).unwrap())
        .collect();
    let out = augment_dataset(&corpus, &plans, true).unwrap();
    assert_eq!(out.len(), 3000, "no scene is skipped, so the bound is met exactly");

    let mut thinned = plans.clone();
    thinned[3].selected.clear();
    thinned[3].skipped = true;
    let out = augment_dataset(&corpus, &thinned, true).unwrap();
    assert!(out.len() < 3000);
}
