//! Hit@k and MRR over ranked results, reported as percentages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BenchmarkExample, RankedResult};

pub const DEFAULT_CANDIDATE_BIN: u64 = 10;
pub const DEFAULT_HISTORY_BIN: u64 = 25;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no result for query {0}")]
    MissingResult(String),
    #[error("query {0}: no ground-truth item appears in the ranking")]
    NoRelevant(String),
    #[error("results do not match the benchmark: missing {missing:?}, extra {extra:?}")]
    Mismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("no examples to evaluate")]
    Empty,
    #[error("unknown breakdown dimension {0:?}")]
    UnknownDimension(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("bin width must be at least 1")]
    ZeroBin,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// 1-based position of the earliest ground-truth id in `ranking`.
pub fn first_relevant_rank(ranking: &[String], gt_ids: &BTreeSet<String>) -> Option<usize> {
    ranking.iter().position(|id| gt_ids.contains(id)).map(|p| p + 1)
}

/// First-relevant ranks in example order.
pub fn ranks(results: &[RankedResult], examples: &[BenchmarkExample]) -> Result<Vec<usize>, EvalError> {
    let by_id: HashMap<&str, &RankedResult> = results.iter().map(|r| (r.query_id.as_str(), r)).collect();
    examples
        .iter()
        .map(|ex| {
            let qid = &ex.query.query_id;
            let r = by_id.get(qid.as_str()).ok_or_else(|| EvalError::MissingResult(qid.clone()))?;
            first_relevant_rank(&r.ranking, &ex.ground_truth_ids).ok_or_else(|| EvalError::NoRelevant(qid.clone()))
        })
        .collect()
}

/// Errors listing every missing and extra query id.
pub fn check_alignment(results: &[RankedResult], examples: &[BenchmarkExample]) -> Result<(), EvalError> {
    let have: BTreeSet<&str> = results.iter().map(|r| r.query_id.as_str()).collect();
    let want: BTreeSet<&str> = examples.iter().map(|e| e.query.query_id.as_str()).collect();
    let missing: Vec<String> = want.difference(&have).map(|s| s.to_string()).collect();
    let extra: Vec<String> = have.difference(&want).map(|s| s.to_string()).collect();
    if missing.is_empty() && extra.is_empty() {
        Ok(())
    } else {
        Err(EvalError::Mismatch { missing, extra })
    }
}

pub fn hit_from_ranks(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn mrr_from_ranks(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn hit_at_k(results: &[RankedResult], examples: &[BenchmarkExample], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(hit_from_ranks(&ranks(results, examples)?, k))
}

pub fn mrr(results: &[RankedResult], examples: &[BenchmarkExample]) -> Result<f64, EvalError> {
    Ok(mrr_from_ranks(&ranks(results, examples)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Category,
    CandidateCount { bin: u64 },
    HistoryLength { bin: u64 },
}

impl Dimension {
    pub fn name(&self) -> &'static str {
        match self {
            Dimension::Category => "category",
            Dimension::CandidateCount { .. } => "candidate_count",
            Dimension::HistoryLength { .. } => "history_length",
        }
    }

    pub fn all_default() -> [Dimension; 3] {
        [
            Dimension::Category,
            Dimension::CandidateCount { bin: DEFAULT_CANDIDATE_BIN },
            Dimension::HistoryLength { bin: DEFAULT_HISTORY_BIN },
        ]
    }
}

impl FromStr for Dimension {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "category" => Ok(Dimension::Category),
            "candidate_count" => Ok(Dimension::CandidateCount { bin: DEFAULT_CANDIDATE_BIN }),
            "history_length" => Ok(Dimension::HistoryLength { bin: DEFAULT_HISTORY_BIN }),
            other => Err(EvalError::UnknownDimension(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub bucket: String,
    pub n: usize,
    pub mrr: f64,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Bin(u64),
    Label(String),
}

fn bin_label(lo: u64, width: u64) -> String {
    if width == 1 {
        lo.to_string()
    } else {
        format!("{lo}-{}", lo + width - 1)
    }
}

/// Per-bucket N and MRR. Numeric buckets are ordered by lower bound.
pub fn breakdown_from_ranks(
    ranks: &[usize],
    examples: &[BenchmarkExample],
    dim: Dimension,
) -> Result<Vec<Bucket>, EvalError> {
    let mut groups: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (ex, &r) in examples.iter().zip(ranks) {
        let key = match dim {
            Dimension::Category => Key::Label(ex.query.category.clone()),
            Dimension::CandidateCount { bin } | Dimension::HistoryLength { bin } => {
                if bin == 0 {
                    return Err(EvalError::ZeroBin);
                }
                let v = match dim {
                    Dimension::CandidateCount { .. } => ex.candidates.len() as u64,
                    _ => ex.history_cutoff,
                };
                Key::Bin(v / bin * bin)
            }
        };
        groups.entry(key).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(k, rs)| Bucket {
            bucket: match (k, dim) {
                (Key::Label(l), _) => l,
                (Key::Bin(lo), Dimension::CandidateCount { bin } | Dimension::HistoryLength { bin }) => {
                    bin_label(lo, bin)
                }
                (Key::Bin(lo), Dimension::Category) => lo.to_string(),
            },
            n: rs.len(),
            mrr: mrr_from_ranks(&rs),
        })
        .collect())
}

pub fn breakdown(
    results: &[RankedResult],
    examples: &[BenchmarkExample],
    dim: Dimension,
) -> Result<Vec<Bucket>, EvalError> {
    breakdown_from_ranks(&ranks(results, examples)?, examples, dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub summary: Summary,
    pub breakdowns: BTreeMap<String, Vec<Bucket>>,
}

/// Full report. Results must cover exactly the benchmark's query ids.
pub fn evaluate(
    results: &[RankedResult],
    examples: &[BenchmarkExample],
    dims: &[Dimension],
) -> Result<EvalReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    check_alignment(results, examples)?;
    let rs = ranks(results, examples)?;
    let mut breakdowns = BTreeMap::new();
    for &d in dims {
        breakdowns.insert(d.name().to_string(), breakdown_from_ranks(&rs, examples, d)?);
    }
    Ok(EvalReport {
        summary: Summary {
            n: rs.len(),
            hit1: hit_from_ranks(&rs, 1),
            hit3: hit_from_ranks(&rs, 3),
            hit10: hit_from_ranks(&rs, 10),
            mrr: mrr_from_ranks(&rs),
        },
        breakdowns,
    })
}

impl EvalReport {
    /// Writes `summary.json`, one `breakdown_<dim>.csv` per dimension and a
    /// long-format `breakdown_long.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| EvalError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let summary = dir.join("summary.json");
        let json = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        fs::write(&summary, json + "\n").map_err(io(&summary))?;

        let mut long = csv::Writer::from_path(dir.join("breakdown_long.csv"))?;
        long.write_record(["dimension", "bucket", "n", "mrr"])?;
        for (dim, buckets) in &self.breakdowns {
            let mut w = csv::Writer::from_path(dir.join(format!("breakdown_{dim}.csv")))?;
            w.write_record(["bucket", "n", "mrr"])?;
            for b in buckets {
                w.write_record([b.bucket.as_str(), &b.n.to_string(), &b.mrr.to_string()])?;
                long.write_record([dim.as_str(), b.bucket.as_str(), &b.n.to_string(), &b.mrr.to_string()])?;
            }
            w.flush().map_err(io(dir))?;
        }
        long.flush().map_err(io(dir))?;
        Ok(())
    }
}
