//! Heading-deviation histogram and run summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eligibility::{eligible_pool, FilterConfig, FilterKind};
use crate::error::{Error, Result};
use crate::kinematics::heading_deviation_sum;
use crate::sampler::SelectionPlan;
use crate::scenario::SceneRecord;

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleHint {
    Linear,
    #[default]
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts_base: Vec<u64>,
    pub counts_sampled: Vec<u64>,
    pub scale_hint: ScaleHint,
}

impl Histogram {
    /// Uniform bins over `[0, max(base)]`; a degenerate range becomes `[0, 1]`.
    pub fn from_values(base: &[f64], sampled: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::TooFewBins(bins));
        }
        let max = base.iter().chain(sampled).copied().fold(0.0, f64::max);
        let upper = if max > 0.0 { max } else { 1.0 };
        let width = upper / bins as f64;
        let bin_edges = (0..=bins).map(|k| if k == bins { upper } else { k as f64 * width }).collect();
        let bin_of = |h: f64| ((h / width).floor().max(0.0) as usize).min(bins - 1);
        let mut counts_base = vec![0; bins];
        let mut counts_sampled = vec![0; bins];
        for &h in base {
            counts_base[bin_of(h)] += 1;
        }
        for &h in sampled {
            counts_sampled[bin_of(h)] += 1;
        }
        Ok(Histogram {
            bin_edges,
            counts_base,
            counts_sampled,
            scale_hint: ScaleHint::Log,
        })
    }

    /// `bin_lo,bin_hi,base_count,sampled_count`
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "base_count", "sampled_count"])?;
        for (k, edges) in self.bin_edges.windows(2).enumerate() {
            w.write_record([
                edges[0].to_string(),
                edges[1].to_string(),
                self.counts_base[k].to_string(),
                self.counts_sampled[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Heading sums of every eligible agent, and of every plan member.
pub fn heading_samples(
    corpus: &[SceneRecord],
    plans: &[SelectionPlan],
    cfg: &FilterConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let plans: BTreeMap<&str, &SelectionPlan> = plans.iter().map(|p| (p.scene_id.as_str(), p)).collect();
    let mut base = Vec::new();
    let mut sampled = Vec::new();
    for scene in corpus {
        for id in eligible_pool(scene, cfg) {
            base.push(heading_deviation_sum(scene.agent(&id).expect("pool member"), scene.history_len)?);
        }
        if let Some(plan) = plans.get(scene.scene_id.as_str()) {
            for id in plan.agent_ids() {
                let track = scene.agent(id).ok_or_else(|| Error::MissingAgent {
                    scene_id: scene.scene_id.clone(),
                    agent_id: id.to_string(),
                })?;
                sampled.push(heading_deviation_sum(track, scene.history_len)?);
            }
        }
    }
    Ok((base, sampled))
}

pub fn heading_histogram(
    corpus: &[SceneRecord],
    plans: &[SelectionPlan],
    bins: usize,
    cfg: &FilterConfig,
) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::TooFewBins(bins));
    }
    let (base, sampled) = heading_samples(corpus, plans, cfg)?;
    Histogram::from_values(&base, &sampled, bins)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionTally {
    pub disp: usize,
    pub comf: usize,
    pub ttc: usize,
}

impl RejectionTally {
    pub fn add(&mut self, counts: [usize; 3]) {
        self.disp += counts[FilterKind::Disp as usize];
        self.comf += counts[FilterKind::Comf as usize];
        self.ttc += counts[FilterKind::Ttc as usize];
    }

    pub fn total(&self) -> usize {
        self.disp + self.comf + self.ttc
    }
}

/// Pool-level totals accumulated while scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolTotals {
    pub eligible: usize,
    pub filtered: usize,
    pub rejected: RejectionTally,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub input_scenes: usize,
    pub output_scenes: usize,
    pub augmented_scenes: usize,
    pub skipped_scenes: usize,
    pub skip_rate: f64,
    /// Scenes dropped by lenient validation.
    #[serde(default)]
    pub invalid_scenes: usize,
    pub eligible_agents: usize,
    pub filtered_agents: usize,
    pub rejected_by_filter: RejectionTally,
    pub replayed: bool,
    pub config: serde_json::Value,
}

pub fn run_summary(
    input_scenes: usize,
    output_scenes: usize,
    plans: &[SelectionPlan],
    pools: PoolTotals,
    replayed: bool,
    config: serde_json::Value,
) -> Result<RunSummary> {
    let augmented: usize = plans.iter().map(|p| p.selected.len()).sum();
    if output_scenes != input_scenes + augmented {
        return Err(Error::Data(format!(
            "output holds {output_scenes} scenes, expected {input_scenes} + {augmented}"
        )));
    }
    if !replayed && pools.eligible != pools.filtered + pools.rejected.total() {
        return Err(Error::Data(format!(
            "rejection tallies ({}) do not partition eligible − filtered ({} − {})",
            pools.rejected.total(),
            pools.eligible,
            pools.filtered
        )));
    }
    let skipped = plans.iter().filter(|p| p.skipped).count();
    Ok(RunSummary {
        input_scenes,
        output_scenes,
        augmented_scenes: augmented,
        skipped_scenes: skipped,
        skip_rate: if input_scenes == 0 { 0.0 } else { skipped as f64 / input_scenes as f64 },
        invalid_scenes: 0,
        eligible_agents: pools.eligible,
        filtered_agents: pools.filtered,
        rejected_by_filter: pools.rejected,
        replayed,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{SamplingMode, Selection, Temperature};

    fn plan(id: &str, n: usize, pool: usize) -> SelectionPlan {
        SelectionPlan {
            scene_id: id.into(),
            mode: SamplingMode::PerScene,
            tau: Temperature::Finite(0.5),
            seed: 1,
            pool_size: pool,
            skipped: pool == 0,
            selected: (0..n)
                .map(|k| Selection {
                    agent_id: format!("a{k}"),
                    probability: 0.5,
                })
                .collect(),
        }
    }

    #[test]
    fn all_zero_mass_lands_in_first_bin() {
        let h = Histogram::from_values(&[0.0; 7], &[], 10).unwrap();
        assert_eq!(h.counts_base[0], 7);
        assert_eq!(h.counts_base.iter().sum::<u64>(), 7);
        assert!(h.counts_sampled.iter().all(|&c| c == 0));
        assert_eq!(h.bin_edges.len(), 11);
    }

    #[test]
    fn max_value_goes_to_last_bin() {
        let h = Histogram::from_values(&[0.0, 0.5, 1.0, 2.0], &[2.0], 4).unwrap();
        assert_eq!(h.counts_base, vec![1, 1, 1, 1]);
        assert_eq!(h.counts_sampled, vec![0, 0, 0, 1]);
        assert_eq!(*h.bin_edges.last().unwrap(), 2.0);
    }

    #[test]
    fn too_few_bins() {
        assert!(matches!(Histogram::from_values(&[1.0], &[], 1), Err(Error::TooFewBins(1))));
        assert!(heading_histogram(&[], &[], 0, &FilterConfig::default()).is_err());
    }

    #[test]
    fn histogram_csv_layout() {
        let h = Histogram::from_values(&[0.0, 1.0], &[1.0], 2).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin_lo,bin_hi,base_count,sampled_count\n0,0.5,1,0\n0.5,1,1,1\n");
    }

    #[test]
    fn summary_examples() {
        let noop = run_summary(0, 0, &[], PoolTotals::default(), false, serde_json::Value::Null).unwrap();
        assert_eq!(noop.skip_rate, 0.0);
        assert_eq!(noop.output_scenes, 0);

        let all_skipped: Vec<_> = (0..4).map(|k| plan(&format!("s{k}"), 0, 0)).collect();
        let s = run_summary(4, 4, &all_skipped, PoolTotals::default(), false, serde_json::Value::Null).unwrap();
        assert_eq!(s.skip_rate, 1.0);

        let plans: Vec<_> = (0..1000).map(|k| plan(&format!("s{k}"), if k < 30 { 0 } else { 2 }, if k < 30 { 0 } else { 3 })).collect();
        let s = run_summary(1000, 1000 + 970 * 2, &plans, PoolTotals::default(), false, serde_json::Value::Null).unwrap();
        assert_eq!(s.output_scenes, 2940);
        assert!(s.output_scenes <= 3000);
        assert_eq!(s.skipped_scenes, 30);

        assert!(run_summary(1000, 3000, &plans, PoolTotals::default(), false, serde_json::Value::Null).is_err());
    }

    #[test]
    fn summary_checks_tally_partition() {
        let pools = PoolTotals {
            eligible: 10,
            filtered: 6,
            rejected: RejectionTally { disp: 2, comf: 1, ttc: 0 },
        };
        assert!(run_summary(0, 0, &[], pools, false, serde_json::Value::Null).is_err());
    }
}
