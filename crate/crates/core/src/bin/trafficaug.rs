use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trafficaug::config::RunConfig;
use trafficaug::eligibility::parse_filter_list;
use trafficaug::io::{write_json, write_with, ValidationMode};
use trafficaug::pipeline::{histogram_from_files, run_augment, validate_file, violations_from_file};
use trafficaug::sampler::{SamplingMode, Temperature};
use trafficaug::synth::{write_synthetic, SynthSpec};
use trafficaug::{Error, Result};

#[derive(Parser)]
#[command(name = "trafficaug", version, about = "Agent-centric augmentation of driving scene corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample agents, re-center scenes on them and write the augmented corpus.
    Augment(AugmentArgs),
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Check every scene of a corpus and list the failures.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write a synthetic corpus with ground-truth labels.
    GenSynthetic {
        #[arg(long)]
        output: PathBuf,
        /// TOML generator spec; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Heading-deviation histogram of eligible agents and, with a plan file, of the selections.
    Histogram {
        #[command(flatten)]
        common: StatsArgs,
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        /// CSV destination.
        #[arg(long)]
        output: PathBuf,
    },
    /// TTC and comfort violation counts of egos versus other agents.
    Violations {
        #[command(flatten)]
        common: StatsArgs,
        /// Directory for violations.csv and violations_summary.json.
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Softmax temperature, or `uniform`.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    ns: Option<usize>,
    /// per-scene or per-ego
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated subset of disp,comf,ttc; empty disables filtering.
    #[arg(long)]
    filters: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    replay_plan: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Skip invalid scenes instead of aborting.
    #[arg(long)]
    lenient: bool,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn augment(args: AugmentArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    if let Some(v) = args.input {
        cfg.io.input = Some(v);
    }
    if let Some(v) = args.output {
        cfg.io.output = Some(v);
    }
    if let Some(v) = args.replay_plan {
        cfg.io.replay_plan = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.sampling.seed = v;
    }
    if let Some(v) = args.tau {
        cfg.sampling.tau = v.parse::<Temperature>()?;
    }
    if let Some(v) = args.ns {
        cfg.sampling.n_s = v;
    }
    if let Some(v) = args.mode {
        cfg.sampling.mode = v.parse::<SamplingMode>()?;
    }
    if let Some(v) = args.filters {
        cfg.filter.active = parse_filter_list(&v)?;
    }
    if let Some(v) = args.radius {
        cfg.filter.radius_r = v;
    }
    if let Some(v) = args.parallelism {
        cfg.parallelism = v;
    }
    if args.lenient {
        cfg.io.validation = ValidationMode::Lenient;
    }
    let s = run_augment(&cfg)?;
    println!(
        "{} scenes in, {} out ({} augmented, {} skipped, {} invalid)",
        s.input_scenes, s.output_scenes, s.augmented_scenes, s.skipped_scenes, s.invalid_scenes
    );
    Ok(())
}

fn stats_config(common: &StatsArgs) -> Result<RunConfig> {
    let mut cfg = load_config(common.config.as_ref())?;
    if common.lenient {
        cfg.io.validation = ValidationMode::Lenient;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Augment(args) => augment(args),
        Command::Stats(StatsCommand::Histogram {
            common,
            plans,
            bins,
            output,
        }) => {
            let mut cfg = stats_config(&common)?;
            if let Some(b) = bins {
                cfg.histogram_bins = b;
            }
            let h = histogram_from_files(&cfg, &common.input, plans.as_deref())?;
            write_with(&output, |w| h.write_csv(w).map_err(std::io::Error::other))
        }
        Command::Stats(StatsCommand::Violations { common, output }) => {
            let cfg = stats_config(&common)?;
            let report = violations_from_file(&cfg, &common.input)?;
            std::fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;
            write_with(output.join("violations.csv"), |w| report.write_csv(w).map_err(std::io::Error::other))?;
            write_json(output.join("violations_summary.json"), &report.aggregate)?;
            let a = &report.aggregate;
            println!(
                "ego: mean ttc {:.3}, mean comfort {:.3}; others: mean ttc {:.3}, mean comfort {:.3}",
                a.ego.ttc_mean, a.ego.comfort_mean, a.others.ttc_mean, a.others.comfort_mean
            );
            Ok(())
        }
        Command::Validate { input } => {
            let outcome = validate_file(&input)?;
            for e in &outcome.invalid {
                println!("{e}");
            }
            println!("{} valid, {} invalid", outcome.valid, outcome.invalid.len());
            if outcome.invalid.is_empty() {
                Ok(())
            } else {
                Err(Error::Data(format!("{} invalid scenes", outcome.invalid.len())))
            }
        }
        Command::GenSynthetic {
            output,
            spec,
            scenes,
            seed,
        } => {
            let mut spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    toml::from_str::<SynthSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec::default(),
            };
            if let Some(n) = scenes {
                spec.scenes = n;
            }
            let n = write_synthetic(&output, &spec, seed)?;
            println!("wrote {n} scenes to {}", output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.category().exit_code();
            ExitCode::from(code as u8)
        }
    }
}
