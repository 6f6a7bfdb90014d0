use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lenspipe_core::benchgen::{self, BenchStats, BusinessRecord, ReviewRecord, Splitter};
use lenspipe_core::config::DatasetProfile;
use lenspipe_core::jsonl;

use crate::{ensure_dir, load_config, write_json};

#[derive(Debug, Clone)]
pub struct BuildBenchArgs {
    pub reviews: PathBuf,
    pub businesses: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub profile: Option<DatasetProfile>,
    pub split: Option<Splitter>,
}

/// Parses `user-id:DEV,TEST`, `long-his:TIMESTAMP` or `category:A,B,...`.
pub fn parse_splitter(s: &str) -> Result<Splitter> {
    let (kind, arg) = s.split_once(':').ok_or_else(|| anyhow!("splitter needs KIND:ARGS, got {s:?}"))?;
    match kind {
        "user-id" => {
            let (dev, test) = arg.split_once(',').ok_or_else(|| anyhow!("user-id:DEV,TEST"))?;
            let dev_fraction: f64 = dev.trim().parse().context("dev fraction")?;
            let test_fraction: f64 = test.trim().parse().context("test fraction")?;
            if dev_fraction < 0.0 || test_fraction < 0.0 || dev_fraction + test_fraction > 1.0 {
                bail!("split fractions must be non-negative and sum to at most 1");
            }
            Ok(Splitter::UserId {
                dev_fraction,
                test_fraction,
            })
        }
        "long-his" => Ok(Splitter::LongHis {
            cutoff_timestamp: arg.trim().parse().context("cutoff timestamp")?,
        }),
        "category" => {
            let held_out: BTreeSet<String> =
                arg.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect();
            if held_out.is_empty() {
                bail!("category splitter needs at least one category");
            }
            Ok(Splitter::Category { held_out })
        }
        other => bail!("unknown splitter {other:?}"),
    }
}

pub fn build_bench(args: &BuildBenchArgs) -> Result<BenchStats> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(p) = args.profile {
        cfg.dataset = p;
    }
    let mut gen = cfg.gen_config();
    if let Some(seed) = args.seed {
        gen.seed = seed;
    }
    let reviews: Vec<ReviewRecord> = jsonl::read_plain(&args.reviews)?;
    let businesses: Vec<BusinessRecord> = jsonl::read_plain(&args.businesses)?;
    log::info!("{} reviews, {} businesses", reviews.len(), businesses.len());

    let corpus = benchgen::build_corpus(&reviews, &businesses, &gen)?;
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    if corpus.examples.is_empty() {
        bail!("0 examples emitted; check the category filter and history thresholds");
    }
    ensure_dir(&args.out)?;
    jsonl::write(&args.out.join("benchmark.jsonl"), &corpus.examples)?;
    jsonl::write(&args.out.join("histories.jsonl"), &corpus.histories)?;
    let stats = benchgen::stats(&corpus.examples);
    write_json(&args.out.join("stats.json"), &stats)?;

    if let Some(splitter) = &args.split {
        let parts = benchgen::split(corpus.examples, splitter, gen.seed);
        write_split(&args.out, "train", &parts.train)?;
        write_split(&args.out, "dev", &parts.dev)?;
        write_split(&args.out, "test", &parts.test)?;
    }
    Ok(stats)
}

fn write_split(dir: &Path, name: &str, examples: &[lenspipe_core::model::BenchmarkExample]) -> Result<()> {
    log::info!("{name}: {} examples", examples.len());
    Ok(jsonl::write(&dir.join(format!("{name}.jsonl")), examples)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitter_syntax() {
        assert_eq!(
            parse_splitter("user-id:0.1,0.2").unwrap(),
            Splitter::UserId {
                dev_fraction: 0.1,
                test_fraction: 0.2
            }
        );
        assert_eq!(
            parse_splitter("long-his:42").unwrap(),
            Splitter::LongHis { cutoff_timestamp: 42 }
        );
        let Splitter::Category { held_out } = parse_splitter("category:park, cafe").unwrap() else {
            panic!("category splitter expected");
        };
        assert_eq!(held_out.into_iter().collect::<Vec<_>>(), ["cafe", "park"]);
        for bad in ["user-id:0.7,0.7", "user-id:0.1", "category:", "bogus:1", "long-his"] {
            assert!(parse_splitter(bad).is_err(), "{bad}");
        }
    }
}
