//! End-to-end runs over corpus files: read, score, filter, sample,
//! transform, write.
//!
//! Scenes are processed in fixed-size batches. Each batch is mapped on the
//! executor and written back in input order, so the output bytes do not
//! depend on the thread count. Original scenes go straight to the output
//! corpus; augmented scenes are spooled to a temporary file and appended at
//! the end, which keeps per-scene mode at O(scene) memory. Per-ego mode
//! first gathers every scene's pool, since its softmax spans the corpus.

use std::collections::{HashMap, HashSet};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::config::RunConfig;
use crate::eligibility::{evaluate_scene, SceneEvaluation};
use crate::error::{Error, Result};
use crate::interaction::{scene_violations, ViolationReport};
use crate::io::{parse_scene_line, read_corpus, read_plans, write_json, write_with, CorpusHeader, CorpusWriter, JsonLinesWriter, ValidationMode};
use crate::kinematics::heading_deviation_sum;
use crate::par::Executor;
use crate::sampler::{plans_by_scene, select_per_ego, select_per_scene, SamplingMode, ScenePool, SelectionPlan};
use crate::scenario::SceneRecord;
use crate::stats::{heading_samples, run_summary, Histogram, PoolTotals, RunSummary};
use crate::transform::augment_scene;

/// Scenes per parallel batch. Fixed so batching never depends on thread count.
pub const BATCH_SIZE: usize = 256;

pub const SCORES_HEADER: &str = "scene_id,agent_id,h,d,v_comf,v_ttc,eligible,passes_filters";

/// Files written by [`run_augment`] into the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub corpus: PathBuf,
    pub plans: PathBuf,
    pub summary: PathBuf,
    pub histogram: PathBuf,
    pub scores: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            corpus: dir.join("corpus.jsonl"),
            plans: dir.join("plans.jsonl"),
            summary: dir.join("summary.json"),
            histogram: dir.join("histogram.csv"),
            scores: dir.join("scores.csv"),
        }
    }
}

enum PlanSource {
    Sample,
    Fixed(HashMap<String, SelectionPlan>),
}

struct Processed {
    original: String,
    augmented: Vec<String>,
    plan: SelectionPlan,
    scores_csv: Vec<u8>,
    score_rows: usize,
    tally: [usize; 3],
    eligible: usize,
    filtered: usize,
    base_h: Vec<f64>,
    sampled_h: Vec<f64>,
    from_plan_file: bool,
}

struct Context<'a> {
    cfg: &'a RunConfig,
    path: &'a Path,
    header: &'a CorpusHeader,
    plans: &'a PlanSource,
}

impl Context<'_> {
    fn parse(&self, line: usize, text: &str) -> Result<Option<SceneRecord>> {
        parse_scene_line(self.path, line, text, self.header, self.cfg.io.validation).map_err(|e| e.in_stage("read"))
    }

    fn evaluate(&self, scene: &SceneRecord) -> Result<SceneEvaluation> {
        let cfg = self.cfg;
        evaluate_scene(scene, &cfg.filter, &cfg.comfort, &cfg.ttc).map_err(|e| e.in_stage("score"))
    }

    fn process(&self, line: usize, text: &str) -> Result<Option<Processed>> {
        let Some(scene) = self.parse(line, text)? else {
            return Ok(None);
        };
        let cfg = self.cfg;
        let eval = self.evaluate(&scene)?;
        let (plan, from_plan_file) = match self.plans {
            PlanSource::Sample => (
                select_per_scene(&ScenePool::from(&eval), &cfg.sampling).map_err(|e| e.in_stage("sample"))?,
                false,
            ),
            PlanSource::Fixed(map) => match map.get(&scene.scene_id) {
                Some(p) => (p.clone(), true),
                None => (
                    SelectionPlan {
                        scene_id: scene.scene_id.clone(),
                        mode: cfg.sampling.mode,
                        tau: cfg.sampling.tau,
                        seed: cfg.sampling.seed,
                        pool_size: eval.filtered.len(),
                        skipped: eval.filtered.is_empty(),
                        selected: Vec::new(),
                    },
                    false,
                ),
            },
        };
        let augmented = augment_scene(&scene, &plan, cfg.keep_original_ego).map_err(|e| e.in_stage("transform"))?;
        let sampled_h = plan
            .agent_ids()
            .map(|id| heading_deviation_sum(scene.agent(id).expect("checked by augment_scene"), scene.history_len))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("report"))?;

        let to_line = |s: &SceneRecord| serde_json::to_string(s).map_err(|e| Error::Data(e.to_string()).in_stage("write"));
        let mut scores = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for s in &eval.scores {
            scores
                .write_record([
                    scene.scene_id.as_str(),
                    s.agent_id.as_str(),
                    &s.h.to_string(),
                    &s.d.to_string(),
                    &s.v_comf.to_string(),
                    &s.v_ttc.to_string(),
                    &s.eligible.to_string(),
                    &s.passes_filters.to_string(),
                ])
                .map_err(|e| Error::Data(e.to_string()).in_stage("write"))?;
        }
        let scores_csv = scores.into_inner().map_err(|e| Error::Data(e.to_string()).in_stage("write"))?;

        Ok(Some(Processed {
            original: to_line(&scene)?,
            augmented: augmented.iter().map(to_line).collect::<Result<_>>()?,
            plan,
            scores_csv,
            score_rows: eval.scores.len(),
            tally: eval.rejection_tally(&cfg.filter),
            eligible: eval.pool.len(),
            filtered: eval.filtered.len(),
            base_h: eval.scores.iter().map(|s| s.h).collect(),
            sampled_h,
            from_plan_file,
        }))
    }
}

fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Config(format!("no {what} path given")))
}

/// Runs the whole pipeline as configured and writes every output file.
///
/// Config problems are reported before any file is touched. Outputs are
/// written to temporaries and only renamed into place once every stage has
/// succeeded.
pub fn run_augment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let input = required(&cfg.io.input, "input")?;
    let out_dir = required(&cfg.io.output, "output")?;
    let exec = Executor::new(cfg.parallelism)?;

    let (source, replayed) = match &cfg.io.replay_plan {
        Some(path) => {
            let plans = read_plans(path).map_err(|e| e.in_stage("replay"))?;
            (PlanSource::Fixed(plans_by_scene(plans).map_err(|e| e.in_stage("replay"))?), true)
        }
        None if cfg.sampling.mode == SamplingMode::PerEgo => {
            let pools = gather_pools(cfg, &input, &exec)?;
            let plans = select_per_ego(&pools, &cfg.sampling).map_err(|e| e.in_stage("sample"))?;
            (PlanSource::Fixed(plans_by_scene(plans)?), false)
        }
        None => (PlanSource::Sample, false),
    };

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    stream_pass(cfg, &input, &out_dir, &exec, &source, replayed)
}

/// First per-ego pass: every scene's filtered pool, in corpus order.
fn gather_pools(cfg: &RunConfig, input: &Path, exec: &Executor) -> Result<Vec<ScenePool>> {
    let mut reader = read_corpus(input, cfg.io.validation).map_err(|e| e.in_stage("read"))?;
    let header = reader.header().clone();
    let source = PlanSource::Sample;
    let ctx = Context {
        cfg,
        path: input,
        header: &header,
        plans: &source,
    };
    let mut pools = Vec::new();
    loop {
        let batch = reader.next_raw_batch(BATCH_SIZE).map_err(|e| e.in_stage("read"))?;
        if batch.is_empty() {
            break;
        }
        let evals = exec.try_map(&batch, |(line, text)| match ctx.parse(*line, text)? {
            Some(scene) => ctx.evaluate(&scene).map(|e| Some(ScenePool::from(&e))),
            None => Ok(None),
        })?;
        pools.extend(evals.into_iter().flatten());
    }
    Ok(pools)
}

fn stream_pass(
    cfg: &RunConfig,
    input: &Path,
    out_dir: &Path,
    exec: &Executor,
    source: &PlanSource,
    replayed: bool,
) -> Result<RunSummary> {
    let paths = OutputPaths::in_dir(out_dir);
    let mut reader = read_corpus(input, cfg.io.validation).map_err(|e| e.in_stage("read"))?;
    let header = reader.header().clone();
    let ctx = Context {
        cfg,
        path: input,
        header: &header,
        plans: source,
    };

    let mut corpus = CorpusWriter::create(&paths.corpus, &header)?;
    let spill_file = NamedTempFile::new_in(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut spill = BufWriter::with_capacity(1 << 20, spill_file);
    let mut spilled = 0usize;
    let mut plan_out = JsonLinesWriter::create(&paths.plans)?;
    let mut scores_out = JsonLinesWriter::create(&paths.scores)?;
    scores_out.write_raw(SCORES_HEADER)?;

    let mut plans = Vec::new();
    let mut totals = PoolTotals::default();
    let mut base_h = Vec::new();
    let mut sampled_h = Vec::new();
    let mut invalid = 0usize;
    let mut planned_scenes = HashSet::new();

    loop {
        let batch = reader.next_raw_batch(BATCH_SIZE).map_err(|e| e.in_stage("read"))?;
        if batch.is_empty() {
            break;
        }
        for processed in exec.try_map(&batch, |(line, text)| ctx.process(*line, text))? {
            let Some(p) = processed else {
                invalid += 1;
                continue;
            };
            corpus.write_raw(&p.original)?;
            for line in &p.augmented {
                spill
                    .write_all(line.as_bytes())
                    .and_then(|_| spill.write_all(b"\n"))
                    .map_err(|e| Error::io(out_dir, e))?;
            }
            spilled += p.augmented.len();
            plan_out.write_value(&p.plan)?;
            scores_out.write_chunk(&p.scores_csv, p.score_rows)?;
            totals.eligible += p.eligible;
            totals.filtered += p.filtered;
            totals.rejected.add(p.tally);
            base_h.extend(p.base_h);
            sampled_h.extend(p.sampled_h);
            if p.from_plan_file {
                planned_scenes.insert(p.plan.scene_id.clone());
            }
            plans.push(p.plan);
        }
    }
    reader.note_skipped(invalid);
    if invalid > 0 {
        log::warn!("skipped {invalid} invalid scenes in {}", input.display());
    }

    if let PlanSource::Fixed(map) = source {
        let mut orphans: Vec<&String> = map.keys().filter(|id| !planned_scenes.contains(*id)).collect();
        orphans.sort();
        if let Some(id) = orphans.first() {
            return Err(Error::InvalidPlan {
                scene_id: (*id).clone(),
                reason: "plan references a scene not in the corpus".into(),
            }
            .in_stage("transform"));
        }
    }

    let originals = corpus.scenes();
    let spill_file = spill.into_inner().map_err(|e| Error::io(out_dir, e.into_error()))?;
    corpus.append_file(spill_file.path(), spilled)?;

    let mut summary = run_summary(originals, corpus.scenes(), &plans, totals, replayed, cfg.algorithmic_echo())
        .map_err(|e| e.in_stage("report"))?;
    summary.invalid_scenes = invalid;
    let histogram = Histogram::from_values(&base_h, &sampled_h, cfg.histogram_bins).map_err(|e| e.in_stage("report"))?;

    corpus.finish()?;
    plan_out.finish()?;
    scores_out.finish()?;
    write_with(&paths.histogram, |w| histogram.write_csv(w).map_err(std::io::Error::other))?;
    write_json(&paths.summary, &summary)?;
    Ok(summary)
}

/// Heading-sum histogram of a corpus file, with plan members as the sampled series.
pub fn histogram_from_files(cfg: &RunConfig, input: &Path, plans: Option<&Path>) -> Result<Histogram> {
    cfg.validate()?;
    let plans = match plans {
        Some(p) => plans_by_scene(read_plans(p)?)?,
        None => HashMap::new(),
    };
    let mut base = Vec::new();
    let mut sampled = Vec::new();
    for scene in read_corpus(input, cfg.io.validation)? {
        let scene = scene?;
        let plan: Vec<SelectionPlan> = plans.get(&scene.scene_id).cloned().into_iter().collect();
        let (b, s) = heading_samples(std::slice::from_ref(&scene), &plan, &cfg.filter)?;
        base.extend(b);
        sampled.extend(s);
    }
    Histogram::from_values(&base, &sampled, cfg.histogram_bins)
}

/// Ego-versus-others violation report over a corpus file.
pub fn violations_from_file(cfg: &RunConfig, input: &Path) -> Result<ViolationReport> {
    cfg.validate()?;
    let exec = Executor::new(cfg.parallelism)?;
    let mut reader = read_corpus(input, cfg.io.validation)?;
    let header = reader.header().clone();
    let source = PlanSource::Sample;
    let ctx = Context {
        cfg,
        path: input,
        header: &header,
        plans: &source,
    };
    let mut rows = Vec::new();
    loop {
        let batch = reader.next_raw_batch(BATCH_SIZE)?;
        if batch.is_empty() {
            break;
        }
        let done = exec.try_map(&batch, |(line, text)| match ctx.parse(*line, text)? {
            Some(scene) => scene_violations(&scene, &cfg.comfort, &cfg.ttc, &cfg.filter).map(Some),
            None => Ok(None),
        })?;
        rows.extend(done.into_iter().flatten());
    }
    Ok(ViolationReport::from_rows(rows))
}

/// Outcome of checking every scene of a corpus file.
#[derive(Debug, Default)]
pub struct ValidationOutcome {
    pub valid: usize,
    /// One parse or validation error per rejected line.
    pub invalid: Vec<Error>,
}

/// Checks every line without stopping at the first failure. Only a bad
/// header or an unreadable file is returned as `Err`.
pub fn validate_file(path: &Path) -> Result<ValidationOutcome> {
    let mut reader = read_corpus(path, ValidationMode::Strict)?;
    let header = reader.header().clone();
    let mut outcome = ValidationOutcome::default();
    loop {
        let batch = reader.next_raw_batch(BATCH_SIZE)?;
        if batch.is_empty() {
            break;
        }
        for (line, text) in batch {
            match parse_scene_line(path, line, &text, &header, ValidationMode::Strict) {
                Ok(_) => outcome.valid += 1,
                Err(e @ (Error::Parse { .. } | Error::InvalidScene { .. })) => outcome.invalid.push(e),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(outcome)
}
