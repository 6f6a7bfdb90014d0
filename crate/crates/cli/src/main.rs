use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lenspipe_cli::bench::{self, BuildBenchArgs};
use lenspipe_cli::demo::{self, SynthArgs};
use lenspipe_cli::export::{self, ExportArgs};
use lenspipe_cli::profiles::{self, BuildCentroidsArgs, BuildProfilesArgs};
use lenspipe_cli::run::{self, EvalArgs, RecommendArgs};
use lenspipe_cli::validate::{self, FileKind};
use lenspipe_core::benchgen::Splitter;
use lenspipe_core::config::{BackendKind, DatasetProfile};
use lenspipe_core::eval::{DEFAULT_CANDIDATE_BIN, DEFAULT_HISTORY_BIN};
use lenspipe_core::model::ExampleLimits;
use lenspipe_core::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "lenspipe", version, about = "Visual-history place recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Parses a kebab-case enum through its serde representation.
fn kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Build benchmark examples and histories from raw review and business logs.
    BuildBench {
        #[arg(long)]
        reviews: PathBuf,
        #[arg(long)]
        businesses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// google-review-v, yelp-v or custom
        #[arg(long, value_parser = kebab::<DatasetProfile>)]
        profile: Option<DatasetProfile>,
        /// user-id:DEV,TEST | long-his:TIMESTAMP | category:A,B
        #[arg(long, value_parser = |s: &str| bench::parse_splitter(s).map_err(|e| e.to_string()))]
        split: Option<Splitter>,
    },
    /// Caption, tag and embed every history photo.
    BuildProfiles {
        #[arg(long)]
        histories: PathBuf,
        /// Raw embedding store for history images.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Recorded augmenter outputs (JSONL of image_ref, task, output_text).
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        images_root: Option<PathBuf>,
    },
    /// Compute one centroid per category from item images.
    BuildCentroids {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra pool entries (JSONL of category, image_id).
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank every benchmark example's candidates.
    Recommend {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        centroids: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// remote, oracle or random
        #[arg(long, value_parser = kebab::<BackendKind>)]
        backend: Option<BackendKind>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        images_root: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        max_inflight: Option<usize>,
        #[arg(long)]
        always_render: bool,
    },
    /// Hit@k, MRR and breakdowns for a results file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CANDIDATE_BIN)]
        candidate_bin: u64,
        #[arg(long, default_value_t = DEFAULT_HISTORY_BIN)]
        history_bin: u64,
    },
    /// Export grid-caption and joint training examples.
    ExportTrain {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        centroids: PathBuf,
        /// Caption corpus directory.
        #[arg(long)]
        docci: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        images_root: Option<PathBuf>,
        #[arg(long)]
        grid_examples: Option<usize>,
    },
    /// Check a file against its schema and invariants.
    Validate {
        /// benchmark, histories, profiles, results, centroids, config or train
        #[arg(long)]
        kind: FileKind,
        file: PathBuf,
        #[arg(long, default_value_t = 10)]
        fc_min: usize,
        #[arg(long, default_value_t = 2)]
        gtc_min: usize,
    },
    /// Write a synthetic benchmark with planted user tastes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        users: usize,
        #[arg(long, default_value_t = 1000)]
        examples: usize,
        #[arg(long, default_value_t = 20)]
        candidates: usize,
        #[arg(long, default_value_t = 100)]
        history_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        images: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::BuildBench {
            reviews,
            businesses,
            out,
            config,
            seed,
            profile,
            split,
        } => {
            let stats = bench::build_bench(&BuildBenchArgs {
                reviews,
                businesses,
                out,
                config,
                seed,
                profile,
                split,
            })?;
            print_json(&stats)?;
        }
        Command::BuildProfiles {
            histories,
            embeddings,
            out,
            config,
            replay,
            images_root,
        } => {
            let report = profiles::build_profiles(&BuildProfilesArgs {
                histories,
                embeddings,
                out,
                config,
                replay,
                images_root,
            })?;
            print_json(&report)?;
        }
        Command::BuildCentroids {
            benchmark,
            embeddings,
            out,
            pool,
            config,
            n,
            seed,
        } => {
            let cs = profiles::build_centroids(&BuildCentroidsArgs {
                benchmark,
                embeddings,
                out,
                pool,
                config,
                n,
                seed,
            })?;
            for c in &cs {
                println!("{}\t{}", c.category, c.sample_size);
            }
        }
        Command::Recommend {
            benchmark,
            profiles,
            embeddings,
            centroids,
            out,
            config,
            backend,
            endpoint,
            images_root,
            cache_dir,
            max_inflight,
            always_render,
        } => {
            let s = run::recommend(&RecommendArgs {
                benchmark,
                profiles,
                embeddings,
                centroids,
                out,
                config,
                backend,
                endpoint,
                images_root,
                cache_dir,
                max_inflight,
                always_render,
            })?;
            println!(
                "total {} computed {} resumed {} failed {}",
                s.total,
                s.computed,
                s.resumed,
                s.failures.len()
            );
            if s.too_many_failures() {
                eprintln!("error: more than 1% of examples failed; rerun to retry them");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval {
            results,
            benchmark,
            out,
            candidate_bin,
            history_bin,
        } => {
            let report = run::evaluate(&EvalArgs {
                results,
                benchmark,
                out,
                candidate_bin,
                history_bin,
            })?;
            print_json(&report.summary)?;
        }
        Command::ExportTrain {
            benchmark,
            profiles,
            embeddings,
            centroids,
            docci,
            out,
            config,
            images_root,
            grid_examples,
        } => {
            let r = export::export_train(&ExportArgs {
                benchmark,
                profiles,
                embeddings,
                centroids,
                docci,
                out,
                config,
                images_root,
                grid_examples,
            })?;
            println!("grid-caption {} joint {} skipped {}", r.grid_caption, r.joint, r.skipped.len());
        }
        Command::Validate {
            kind,
            file,
            fc_min,
            gtc_min,
        } => {
            let violations = validate::validate_file(kind, &file, ExampleLimits { fc_min, gtc_min })
                .with_context(|| format!("validating {}", file.display()))?;
            for v in &violations {
                println!("{v}");
            }
            if !violations.is_empty() {
                eprintln!("{} violation(s)", violations.len());
                return Ok(ExitCode::FAILURE);
            }
            println!("ok");
        }
        Command::Synth {
            out,
            users,
            examples,
            candidates,
            history_len,
            seed,
            images,
        } => {
            let config = SynthConfig {
                users,
                examples,
                candidates,
                history_len,
                seed,
                ..SynthConfig::default()
            };
            let b = demo::write_synth(&SynthArgs { out, config, images })?;
            println!("{} examples, {} users", b.examples.len(), b.histories.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}
