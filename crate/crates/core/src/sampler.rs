//! Temperature softmax over heading-deviation weights and seeded sampling
//! without replacement.
//!
//! Sampling uses Gumbel-top-k keys, which yield the same ordered selection
//! distribution as sequential categorical draws with renormalization after
//! each removal. Every scene draws from its own stream derived from
//! `(seed, scene_id)`, so results do not depend on scheduling or on which
//! other scenes are present.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::eligibility::SceneEvaluation;
use crate::error::{Error, Result};

/// Softmax temperature, or the exact-uniform limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    Finite(f64),
    Uniform,
}

impl Temperature {
    pub fn validate(self) -> Result<()> {
        match self {
            Temperature::Finite(t) if !(t > 0.0 && t.is_finite()) => {
                Err(Error::Config(format!("tau must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::Finite(0.5)
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Finite(t) => write!(f, "{t}"),
            Temperature::Uniform => f.write_str("uniform"),
        }
    }
}

impl FromStr for Temperature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") || s.eq_ignore_ascii_case("inf") {
            return Ok(Temperature::Uniform);
        }
        s.parse::<f64>()
            .map(Temperature::Finite)
            .map_err(|_| Error::Config(format!("invalid tau `{s}`")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TemperatureRepr {
    Number(f64),
    Word(String),
}

impl Serialize for Temperature {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Temperature::Finite(t) => TemperatureRepr::Number(t),
            Temperature::Uniform => TemperatureRepr::Word("uniform".into()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Temperature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match TemperatureRepr::deserialize(deserializer)? {
            TemperatureRepr::Number(t) => Ok(Temperature::Finite(t)),
            TemperatureRepr::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    PerScene,
    PerEgo,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-scene" | "per_scene" => Ok(SamplingMode::PerScene),
            "per-ego" | "per_ego" => Ok(SamplingMode::PerEgo),
            other => Err(Error::Config(format!("unknown sampling mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub tau: Temperature,
    /// Draws per scene (per-scene mode only).
    pub n_s: usize,
    pub mode: SamplingMode,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            tau: Temperature::default(),
            n_s: 1,
            mode: SamplingMode::PerScene,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        self.tau.validate()?;
        if self.n_s == 0 {
            return Err(Error::Config("n_s must be at least 1".into()));
        }
        Ok(())
    }
}

/// `exp(h_i/τ) / Σ_j exp(h_j/τ)`, evaluated with max subtraction.
pub fn softmax_weights(h: &[f64], tau: Temperature) -> Result<Vec<f64>> {
    if h.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if let Some(bad) = h.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidWeights(format!("nonfinite weight {bad}")));
    }
    tau.validate()?;
    let tau = match tau {
        Temperature::Uniform => return Ok(vec![1.0 / h.len() as f64; h.len()]),
        Temperature::Finite(t) => t,
    };
    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = h.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn stream_from(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Random stream for one scene in per-scene mode.
pub fn scene_stream(seed: u64, scene_id: &str) -> ChaCha8Rng {
    stream_from(&[b"scene", &seed.to_le_bytes(), scene_id.as_bytes()])
}

/// The single corpus-wide stream used in per-ego mode.
pub fn global_stream(seed: u64) -> ChaCha8Rng {
    stream_from(&[b"per-ego", &seed.to_le_bytes()])
}

/// Draws `min(k, n)` distinct indices in draw order. One uniform is consumed
/// per candidate; equal keys resolve to the lower index.
pub fn sample_without_replacement<R: Rng + ?Sized>(probs: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let u = 1.0 - rng.random::<f64>(); // (0, 1]
            let e = -u.ln();
            (p.ln() - e.ln(), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k.min(probs.len())).map(|(_, i)| i).collect()
}

/// Probability each drawn item had at its own draw, given earlier removals.
fn draw_probabilities(probs: &[f64], order: &[usize]) -> Vec<f64> {
    let mut remaining = 1.0;
    order
        .iter()
        .map(|&i| {
            let p = if remaining > 0.0 { (probs[i] / remaining).min(1.0) } else { 0.0 };
            remaining -= probs[i];
            p
        })
        .collect()
}

/// Sampling candidates of one scene: the filtered pool with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePool {
    pub scene_id: String,
    pub candidates: Vec<String>,
    pub weights: Vec<f64>,
}

impl From<&SceneEvaluation> for ScenePool {
    fn from(eval: &SceneEvaluation) -> Self {
        ScenePool {
            scene_id: eval.scene_id.clone(),
            candidates: eval.filtered.clone(),
            weights: eval.filtered_weights(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub agent_id: String,
    pub probability: f64,
}

/// Sampling outcome for one scene; serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub scene_id: String,
    pub mode: SamplingMode,
    pub tau: Temperature,
    pub seed: u64,
    pub pool_size: usize,
    pub skipped: bool,
    pub selected: Vec<Selection>,
}

impl SelectionPlan {
    fn empty(pool: &ScenePool, cfg: &SamplingConfig) -> Self {
        SelectionPlan {
            scene_id: pool.scene_id.clone(),
            mode: cfg.mode,
            tau: cfg.tau,
            seed: cfg.seed,
            pool_size: pool.candidates.len(),
            skipped: pool.candidates.is_empty(),
            selected: Vec::new(),
        }
    }

    /// Structural checks: no duplicates, bounded by the pool size, and by
    /// `n_s` in per-scene mode.
    pub fn check(&self, n_s: Option<usize>) -> Result<()> {
        let fail = |reason: String| Error::InvalidPlan {
            scene_id: self.scene_id.clone(),
            reason,
        };
        let mut seen = HashSet::new();
        for s in &self.selected {
            if !seen.insert(s.agent_id.as_str()) {
                return Err(fail(format!("agent {} selected twice", s.agent_id)));
            }
        }
        if self.selected.len() > self.pool_size {
            return Err(fail(format!(
                "{} selections from a pool of {}",
                self.selected.len(),
                self.pool_size
            )));
        }
        if let (SamplingMode::PerScene, Some(n)) = (self.mode, n_s) {
            if self.selected.len() > n {
                return Err(fail(format!("{} selections exceed n_s = {n}", self.selected.len())));
            }
        }
        Ok(())
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = &str> {
        self.selected.iter().map(|s| s.agent_id.as_str())
    }
}

pub fn select_per_scene(pool: &ScenePool, cfg: &SamplingConfig) -> Result<SelectionPlan> {
    let mut plan = SelectionPlan::empty(pool, cfg);
    if pool.candidates.is_empty() {
        return Ok(plan);
    }
    let probs = softmax_weights(&pool.weights, cfg.tau)?;
    let mut rng = scene_stream(cfg.seed, &pool.scene_id);
    let order = sample_without_replacement(&probs, cfg.n_s, &mut rng);
    let at_draw = draw_probabilities(&probs, &order);
    plan.selected = order
        .iter()
        .zip(at_draw)
        .map(|(&i, probability)| Selection {
            agent_id: pool.candidates[i].clone(),
            probability,
        })
        .collect();
    Ok(plan)
}

/// One global softmax across every scene's candidates; draws as many agents
/// as there are scenes with a nonempty pool, without replacement. A scene may
/// end up with zero or several selections.
pub fn select_per_ego(pools: &[ScenePool], cfg: &SamplingConfig) -> Result<Vec<SelectionPlan>> {
    let mut plans: Vec<SelectionPlan> = pools.iter().map(|p| SelectionPlan::empty(p, cfg)).collect();
    let mut owners = Vec::new();
    let mut weights = Vec::new();
    for (s, pool) in pools.iter().enumerate() {
        for (c, &w) in pool.weights.iter().enumerate() {
            owners.push((s, c));
            weights.push(w);
        }
    }
    if weights.is_empty() {
        return Ok(plans);
    }
    let draws = pools.iter().filter(|p| !p.candidates.is_empty()).count();
    let probs = softmax_weights(&weights, cfg.tau)?;
    let mut rng = global_stream(cfg.seed);
    let order = sample_without_replacement(&probs, draws, &mut rng);
    let at_draw = draw_probabilities(&probs, &order);
    for (&g, probability) in order.iter().zip(at_draw) {
        let (s, c) = owners[g];
        plans[s].selected.push(Selection {
            agent_id: pools[s].candidates[c].clone(),
            probability,
        });
    }
    Ok(plans)
}

/// Index of plans by scene id, for replay.
pub fn plans_by_scene(plans: Vec<SelectionPlan>) -> Result<HashMap<String, SelectionPlan>> {
    let mut map = HashMap::with_capacity(plans.len());
    for p in plans {
        if let Some(prev) = map.insert(p.scene_id.clone(), p) {
            return Err(Error::InvalidPlan {
                scene_id: prev.scene_id,
                reason: "scene appears twice in plan file".into(),
            });
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(id: &str, weights: &[f64]) -> ScenePool {
        ScenePool {
            scene_id: id.into(),
            candidates: (0..weights.len()).map(|i| format!("{id}-a{i}")).collect(),
            weights: weights.to_vec(),
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_weights(&[1.0, 1.0], Temperature::Finite(3.0)).unwrap(), vec![0.5, 0.5]);
        let p = softmax_weights(&[0.0, 2f64.ln()], Temperature::Finite(1.0)).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15 && (p[1] - 2.0 / 3.0).abs() < 1e-15);
        // e^{-1000} underflows to 0 in f64; the exact value is far below 1e-9
        let p = softmax_weights(&[0.0, 10.0], Temperature::Finite(0.01)).unwrap();
        assert!(p[1] > 1.0 - 1e-9);
        assert_eq!(softmax_weights(&[0.3, 9.0, 1.0], Temperature::Uniform).unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn softmax_errors() {
        assert!(softmax_weights(&[], Temperature::Finite(1.0)).is_err());
        assert!(softmax_weights(&[1.0, f64::NAN], Temperature::Finite(1.0)).is_err());
        assert!(softmax_weights(&[1.0], Temperature::Finite(0.0)).is_err());
        assert!(softmax_weights(&[1.0], Temperature::Finite(-1.0)).is_err());
    }

    #[test]
    fn swr_edge_cases() {
        let mut rng = scene_stream(1, "x");
        assert_eq!(sample_without_replacement(&[1.0], 1, &mut rng), vec![0]);
        let mut all = sample_without_replacement(&[0.5, 0.25, 0.25], 5, &mut rng);
        assert_eq!(all.len(), 3);
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(sample_without_replacement(&[], 2, &mut rng).is_empty());
    }

    #[test]
    fn zero_probability_items_come_last_in_index_order() {
        let mut rng = scene_stream(3, "z");
        let order = sample_without_replacement(&[0.0, 1.0, 0.0], 3, &mut rng);
        assert_eq!(order, vec![1, 0, 2]);
    }

    #[test]
    fn per_scene_examples() {
        let cfg = SamplingConfig::default();
        let plan = select_per_scene(&pool("s", &[4.0]), &cfg).unwrap();
        assert_eq!(plan.agent_ids().collect::<Vec<_>>(), vec!["s-a0"]);
        assert_eq!(plan.selected[0].probability, 1.0);

        let empty = select_per_scene(&pool("e", &[]), &cfg).unwrap();
        assert!(empty.skipped && empty.selected.is_empty());

        let two = SamplingConfig { n_s: 2, ..cfg };
        let plan = select_per_scene(&pool("q", &[0.0, 1.0, 2.0]), &two).unwrap();
        assert_eq!(plan.selected.len(), 2);
        plan.check(Some(2)).unwrap();
    }

    #[test]
    fn per_scene_concentrates_on_high_weight() {
        // P(third) = e^10 / (2 + e^10) ≈ 0.99991
        let cfg = SamplingConfig {
            tau: Temperature::Finite(0.5),
            ..Default::default()
        };
        let hits = (0..10_000)
            .filter(|&k| {
                let plan = select_per_scene(&pool(&format!("s{k}"), &[0.0, 0.0, 5.0]), &cfg).unwrap();
                plan.selected[0].agent_id.ends_with("a2")
            })
            .count();
        assert!(hits as f64 / 10_000.0 > 0.99, "{hits}");
    }

    #[test]
    fn per_scene_is_independent_of_other_scenes() {
        let cfg = SamplingConfig { seed: 7, ..Default::default() };
        let a = select_per_scene(&pool("keep", &[1.0, 1.0, 1.0, 1.0]), &cfg).unwrap();
        let _ = select_per_scene(&pool("other", &[1.0, 2.0]), &cfg).unwrap();
        let b = select_per_scene(&pool("keep", &[1.0, 1.0, 1.0, 1.0]), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_ego_examples() {
        let cfg = SamplingConfig {
            mode: SamplingMode::PerEgo,
            tau: Temperature::Finite(0.1),
            ..Default::default()
        };
        let plans = select_per_ego(&[pool("only", &[1.0, 2.0])], &cfg).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].selected.len(), 1);

        // scene A holds both high-h candidates: global mass outside A is
        // 2e^0 / (2e^0 + 2e^30) per draw, so both draws land in A
        let pools = [pool("A", &[3.0, 3.0]), pool("B", &[0.0, 0.0])];
        let plans = select_per_ego(&pools, &cfg).unwrap();
        assert_eq!(plans[0].selected.len(), 2);
        assert!(plans[1].selected.is_empty());
        assert!(!plans[1].skipped);

        let none = select_per_ego(&[pool("x", &[]), pool("y", &[])], &cfg).unwrap();
        assert!(none.iter().all(|p| p.skipped && p.selected.is_empty()));
    }

    #[test]
    fn plan_check_rejects_duplicates() {
        let plan = SelectionPlan {
            scene_id: "s".into(),
            mode: SamplingMode::PerScene,
            tau: Temperature::Uniform,
            seed: 0,
            pool_size: 3,
            skipped: false,
            selected: vec![
                Selection { agent_id: "a".into(), probability: 0.5 },
                Selection { agent_id: "a".into(), probability: 0.5 },
            ],
        };
        assert!(matches!(plan.check(None), Err(Error::InvalidPlan { .. })));
    }

    #[test]
    fn temperature_round_trips_through_json() {
        for t in [Temperature::Finite(0.1), Temperature::Uniform] {
            let s = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<Temperature>(&s).unwrap(), t);
        }
        assert_eq!(serde_json::to_string(&Temperature::Uniform).unwrap(), "\"uniform\"");
        assert_eq!("uniform".parse::<Temperature>().unwrap(), Temperature::Uniform);
        assert_eq!("0.5".parse::<Temperature>().unwrap(), Temperature::Finite(0.5));
    }

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if *x > v[best] {
                best = i;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn softmax_invariants(h in prop::collection::vec(-20.0f64..20.0, 1..20), c in -50.0f64..50.0, tau in 0.01f64..10.0) {
            let p = softmax_weights(&h, Temperature::Finite(tau)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
            let shifted: Vec<f64> = h.iter().map(|x| x + c).collect();
            let q = softmax_weights(&shifted, Temperature::Finite(tau)).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(argmax(&p), argmax(&h));
            let flatter = softmax_weights(&h, Temperature::Finite(tau * 2.0)).unwrap();
            let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
            prop_assert!(max(&flatter) <= max(&p) + 1e-12);
        }

        #[test]
        fn swr_returns_distinct_indices(
            w in prop::collection::vec(0.0f64..5.0, 1..15),
            k in 1usize..20,
            seed in any::<u64>(),
        ) {
            let p = softmax_weights(&w, Temperature::Finite(1.0)).unwrap();
            let mut rng = global_stream(seed);
            let out = sample_without_replacement(&p, k, &mut rng);
            prop_assert_eq!(out.len(), k.min(w.len()));
            let set: HashSet<_> = out.iter().collect();
            prop_assert_eq!(set.len(), out.len());
        }
    }
}
