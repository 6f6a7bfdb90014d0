//! Benchmark construction from review logs.
//!
//! For every user, visits are walked chronologically. Each unselected visit
//! anchors an attempt: draw a candidate count `m`, take the `m` nearest
//! same-category businesses, drop repeated names, and intersect with the
//! user's remaining unselected visits to get the ground truth. Attempts with
//! too few candidates, too few ground truths or too short a history are
//! discarded; otherwise every ground-truth business is flagged selected.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{GeoError, GeoGraph};
use crate::model::{BenchmarkExample, CandidateItem, GeoPoint, Query};

pub const GOOGLE_BLOCKLIST: &[&str] = &[
    "shop", "store", "complex", "service", "company", "supplier", "caterer", "agency", "center",
    "organization", "attraction", "house", "mall", "landmark", "wash", "course", "preserve",
    "alley", "groomer", "field", "peak", "venue", "delivery", "dealer", "lounge", "office",
    "arcade", "court", "spot", "stop", "maintenance", "trainer", "wholesaler", "planner", "place",
    "facility", "school", "stand", "range", "consultant", "designer", "veterinarian", "ground",
    "contractor", "manufacturer", "studio", "point", "lot",
];

pub const YELP_BLOCKLIST: &[&str] = &[
    "planning", "nightlife", "services", "wings", "arts", "dogs", "tacos", "caribbean", "beer",
    "spirits", "wine", "venues", "fusion", "entertainment", "southern", "spaces", "lounges",
    "breweries", "shopping", "smoothies", "flavor", "plates", "eastern", "tex-mex", "shop",
    "noodles", "markets", "market", "donuts", "gelato", "sum", "veggies", "fruits", "trucks",
    "bagels", "cheesesteaks", "clubs", "cuban", "ramen", "life", "roasteries", "stands",
    "brewpubs", "gluten-free", "gardens", "travel",
];

pub const MULTIWORD_ALLOWLIST: &[&str] = &[
    "tourist attraction",
    "steak house",
    "historical landmark",
    "nature preserve",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("rc_min {rc_min} exceeds rc_max {rc_max}")]
    BadRange { rc_min: usize, rc_max: usize },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub rc_min: usize,
    pub rc_max: usize,
    pub fc_min: usize,
    pub gtc_min: usize,
    pub min_history: usize,
    pub seed: u64,
    /// Categories with fewer review occurrences are dropped.
    pub min_category_occurrence: usize,
    pub category_blocklist: BTreeSet<String>,
    pub multiword_allowlist: BTreeSet<String>,
    /// When set, reviews without photos borrow this fraction of the business's
    /// photos, sampled per review.
    pub business_photo_fraction: Option<f64>,
}

fn set(words: &[&str]) -> BTreeSet<String> {
    words.iter().map(|s| s.to_string()).collect()
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            rc_min: 30,
            rc_max: 100,
            fc_min: 10,
            gtc_min: 2,
            min_history: 10,
            seed: 0,
            min_category_occurrence: 1,
            category_blocklist: BTreeSet::new(),
            multiword_allowlist: set(MULTIWORD_ALLOWLIST),
            business_photo_fraction: None,
        }
    }
}

impl GenConfig {
    pub fn google_review_v() -> Self {
        Self {
            gtc_min: 2,
            min_category_occurrence: 10_000,
            category_blocklist: set(GOOGLE_BLOCKLIST),
            ..Self::default()
        }
    }

    pub fn yelp_v() -> Self {
        Self {
            gtc_min: 5,
            min_category_occurrence: 50_000,
            category_blocklist: set(YELP_BLOCKLIST),
            business_photo_fraction: Some(1.0 / 3.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.rc_min > self.rc_max {
            return Err(BenchError::BadRange {
                rc_min: self.rc_min,
                rc_max: self.rc_max,
            });
        }
        for (name, v) in [
            ("rc_min", self.rc_min),
            ("fc_min", self.fc_min),
            ("gtc_min", self.gtc_min),
            ("min_history", self.min_history),
        ] {
            if v == 0 {
                return Err(BenchError::NonPositive(name));
            }
        }
        Ok(())
    }
}

/// One review line of the input log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub lon: Option<f64>,
    #[serde(default)]
    pub photo_refs: Vec<String>,
}

/// One business line of the input log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusinessRecord {
    pub item_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub categories: Vec<String>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    #[serde(default)]
    pub rating: Option<f64>,
    #[serde(default)]
    pub photo_refs: Vec<String>,
}

/// Maps an annotated tag to its category: the whole tag if it is an allowed
/// multi-word category, otherwise its last word. Blocklisted results are
/// dropped.
pub fn canonical_category(tag: &str, cfg: &GenConfig) -> Option<String> {
    let tag = tag.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if tag.is_empty() {
        return None;
    }
    let cat = if cfg.multiword_allowlist.contains(&tag) {
        tag
    } else {
        tag.rsplit(' ').next().unwrap_or_default().to_string()
    };
    (!cfg.category_blocklist.contains(&cat)).then_some(cat)
}

/// The first tag whose category survives the blocklist and occurrence
/// threshold.
pub fn prune_categories(
    raw_tags: &[String],
    cfg: &GenConfig,
    occurrences: &HashMap<String, usize>,
) -> Option<String> {
    raw_tags
        .iter()
        .filter_map(|t| canonical_category(t, cfg))
        .find(|c| occurrences.get(c).copied().unwrap_or(0) >= cfg.min_category_occurrence)
}

/// Case-folded, trimmed, whitespace-collapsed name.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Keeps the first item per normalized name, preserving input order.
pub fn unique_name<'a>(items: impl IntoIterator<Item = &'a CandidateItem>) -> Vec<&'a CandidateItem> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|c| seen.insert(normalize_name(&c.name)))
        .collect()
}

/// A visit prepared for generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub item_id: String,
    pub timestamp: i64,
    pub category: Option<String>,
    pub location: Option<GeoPoint>,
    pub photo_refs: Vec<String>,
}

/// Per-category spatial indexes.
#[derive(Debug, Clone, Default)]
pub struct CategoryGraphs {
    pub graphs: BTreeMap<String, GeoGraph>,
}

impl CategoryGraphs {
    pub fn build(businesses: &[CandidateItem]) -> Result<Self, BenchError> {
        let mut by_cat: BTreeMap<String, Vec<CandidateItem>> = BTreeMap::new();
        for b in businesses.iter().filter(|b| b.location.is_some()) {
            by_cat.entry(b.category.clone()).or_default().push(b.clone());
        }
        let graphs = by_cat
            .into_iter()
            .map(|(c, items)| Ok((c, GeoGraph::new(items)?)))
            .collect::<Result<_, BenchError>>()?;
        Ok(Self { graphs })
    }
}

fn question_for(category: &str) -> String {
    format!("Recommend a nearby {category}.")
}

fn user_rng(seed: u64, user_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(user_id.as_bytes());
    let d = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&d[..32]);
    ChaCha8Rng::from_seed(s)
}

/// Outcome of one anchoring attempt, kept for tracing and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub visit_index: usize,
    pub m: usize,
    pub candidate_ids: Vec<String>,
    pub ground_truth_ids: BTreeSet<String>,
    /// Photos before the visit.
    pub history: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct UserOutput {
    pub examples: Vec<BenchmarkExample>,
    pub attempts: Vec<Attempt>,
    pub warnings: Vec<String>,
}

/// Runs generation for one user's chronological visits.
pub fn generate_examples(
    user_id: &str,
    visits: &[Visit],
    graphs: &CategoryGraphs,
    cfg: &GenConfig,
) -> Result<UserOutput, BenchError> {
    cfg.validate()?;
    let mut out = UserOutput::default();
    let mut rng = user_rng(cfg.seed, user_id);

    // Photo offsets and in-category photo counts before each visit.
    let mut photo_start = Vec::with_capacity(visits.len());
    let mut cat_before: Vec<HashMap<&str, usize>> = Vec::with_capacity(visits.len());
    let mut running = 0usize;
    let mut per_cat: HashMap<&str, usize> = HashMap::new();
    for v in visits {
        photo_start.push(running);
        cat_before.push(per_cat.clone());
        running += v.photo_refs.len();
        if let Some(c) = &v.category {
            *per_cat.entry(c.as_str()).or_default() += v.photo_refs.len();
        }
    }

    let mut selected: HashSet<&str> = HashSet::new();
    for (i, b) in visits.iter().enumerate() {
        let Some(category) = b.category.as_deref() else {
            continue;
        };
        if selected.contains(b.item_id.as_str()) {
            continue;
        }
        let Some(loc) = b.location else {
            out.warnings.push(format!("{user_id}: visit {i} ({}) has no location; skipped", b.item_id));
            continue;
        };
        let Some(graph) = graphs.graphs.get(category) else {
            continue;
        };
        let m = rng.random_range(cfg.rc_min..=cfg.rc_max);
        let nearest = graph.nearest(loc, m)?;
        let candidates: Vec<CandidateItem> = unique_name(nearest.items).into_iter().cloned().collect();
        let remaining: HashSet<&str> = visits[i..]
            .iter()
            .map(|v| v.item_id.as_str())
            .filter(|id| !selected.contains(id))
            .collect();
        let ground_truth: BTreeSet<String> = candidates
            .iter()
            .filter(|c| remaining.contains(c.item_id.as_str()))
            .map(|c| c.item_id.clone())
            .collect();
        let history = photo_start[i];
        let in_category = cat_before[i].get(category).copied().unwrap_or(0);
        let accepted = candidates.len() >= cfg.fc_min
            && ground_truth.len() >= cfg.gtc_min
            && history >= cfg.min_history
            && in_category >= cfg.min_history;
        out.attempts.push(Attempt {
            visit_index: i,
            m,
            candidate_ids: candidates.iter().map(|c| c.item_id.clone()).collect(),
            ground_truth_ids: ground_truth.clone(),
            history,
            accepted,
        });
        if !accepted {
            continue;
        }
        for g in &ground_truth {
            let id = visits.iter().find(|v| &v.item_id == g).expect("gt is a visit");
            selected.insert(id.item_id.as_str());
        }
        out.examples.push(BenchmarkExample {
            query: Query {
                query_id: format!("{user_id}-{}", out.examples.len() + 1),
                user_id: user_id.to_string(),
                category: category.to_string(),
                question_text: question_for(category),
            },
            history_cutoff: history as u64,
            candidates,
            ground_truth_ids: ground_truth,
            timestamp: Some(b.timestamp),
        });
    }
    Ok(out)
}

/// One photo in a user's flattened history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPhoto {
    pub user_id: String,
    pub image_id: String,
    pub pixels_ref: String,
    pub taken_order: u64,
    pub category: Option<String>,
}

/// Everything produced from a review corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub examples: Vec<BenchmarkExample>,
    pub histories: Vec<HistoryPhoto>,
    pub warnings: Vec<String>,
}

/// Prunes categories, builds per-category graphs, groups reviews by user and
/// runs generation for each user. Users are processed in ascending id order.
pub fn build_corpus(
    reviews: &[ReviewRecord],
    businesses: &[BusinessRecord],
    cfg: &GenConfig,
) -> Result<Corpus, BenchError> {
    cfg.validate()?;
    let by_id: HashMap<&str, &BusinessRecord> = businesses.iter().map(|b| (b.item_id.as_str(), b)).collect();
    let tags_of = |r: &ReviewRecord| -> Vec<String> {
        match by_id.get(r.item_id.as_str()) {
            Some(b) if !b.categories.is_empty() => b.categories.clone(),
            _ => r.categories.clone(),
        }
    };

    let mut occurrences: HashMap<String, usize> = HashMap::new();
    for r in reviews {
        if let Some(c) = tags_of(r).iter().find_map(|t| canonical_category(t, cfg)) {
            *occurrences.entry(c).or_default() += 1;
        }
    }

    let mut corpus = Corpus::default();
    let items: Vec<CandidateItem> = businesses
        .iter()
        .filter_map(|b| {
            let category = prune_categories(&b.categories, cfg, &occurrences)?;
            let location = match (b.lat, b.lon) {
                (Some(lat), Some(lon)) => Some(GeoPoint { lat, lon }),
                _ => None,
            };
            Some(CandidateItem {
                item_id: b.item_id.clone(),
                name: b.name.clone(),
                description: b.description.clone(),
                category,
                images: vec![],
                location,
                rating: b.rating,
            })
        })
        .collect();
    let graphs = CategoryGraphs::build(&items)?;
    let item_by_id: HashMap<&str, &CandidateItem> = items.iter().map(|c| (c.item_id.as_str(), c)).collect();

    let mut by_user: BTreeMap<&str, Vec<&ReviewRecord>> = BTreeMap::new();
    for r in reviews {
        by_user.entry(r.user_id.as_str()).or_default().push(r);
    }
    for (user_id, mut rs) in by_user {
        rs.sort_by_key(|r| r.timestamp);
        let mut photo_rng = user_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, user_id);
        let visits: Vec<Visit> = rs
            .iter()
            .map(|r| {
                let item = item_by_id.get(r.item_id.as_str());
                let category = match item {
                    Some(it) => Some(it.category.clone()),
                    None => prune_categories(&r.categories, cfg, &occurrences),
                };
                let location = item.and_then(|it| it.location).or(match (r.lat, r.lon) {
                    (Some(lat), Some(lon)) => Some(GeoPoint { lat, lon }),
                    _ => None,
                });
                let mut photo_refs = r.photo_refs.clone();
                if let (true, Some(frac), Some(b)) =
                    (photo_refs.is_empty(), cfg.business_photo_fraction, by_id.get(r.item_id.as_str()))
                {
                    let n = b.photo_refs.len();
                    let take = ((n as f64) * frac).ceil() as usize;
                    let mut picked = sample(&mut photo_rng, n, take.min(n)).into_vec();
                    picked.sort_unstable();
                    photo_refs = picked.into_iter().map(|i| b.photo_refs[i].clone()).collect();
                }
                Visit {
                    item_id: r.item_id.clone(),
                    timestamp: r.timestamp,
                    category,
                    location,
                    photo_refs,
                }
            })
            .collect();

        let mut order = 0u64;
        for (vi, v) in visits.iter().enumerate() {
            for (pi, p) in v.photo_refs.iter().enumerate() {
                corpus.histories.push(HistoryPhoto {
                    user_id: user_id.to_string(),
                    image_id: format!("{user_id}/{vi}/{pi}"),
                    pixels_ref: p.clone(),
                    taken_order: order,
                    category: v.category.clone(),
                });
                order += 1;
            }
        }
        let out = generate_examples(user_id, &visits, &graphs, cfg)?;
        corpus.examples.extend(out.examples);
        corpus.warnings.extend(out.warnings);
    }
    Ok(corpus)
}

/// Dataset statistics in the shape of the published benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub n_examples: usize,
    pub n_users: usize,
    pub n_categories: usize,
    pub avg_images: f64,
    pub avg_ground_truth: f64,
    pub avg_candidates: f64,
    pub per_category: BTreeMap<String, usize>,
}

pub fn stats(examples: &[BenchmarkExample]) -> BenchStats {
    let n = examples.len();
    let avg = |f: &dyn Fn(&BenchmarkExample) -> usize| {
        if n == 0 {
            0.0
        } else {
            examples.iter().map(f).sum::<usize>() as f64 / n as f64
        }
    };
    let mut per_category = BTreeMap::new();
    for e in examples {
        *per_category.entry(e.query.category.clone()).or_default() += 1;
    }
    BenchStats {
        n_examples: n,
        n_users: examples.iter().map(|e| &e.query.user_id).collect::<HashSet<_>>().len(),
        n_categories: per_category.len(),
        avg_images: avg(&|e| e.history_cutoff as usize),
        avg_ground_truth: avg(&|e| e.ground_truth_ids.len()),
        avg_candidates: avg(&|e| e.candidates.len()),
        per_category,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Splitter {
    /// Disjoint users; fractions of users assigned to dev and test.
    UserId { dev_fraction: f64, test_fraction: f64 },
    /// Train before `cutoff_timestamp`, test from it on.
    LongHis { cutoff_timestamp: i64 },
    /// Held-out categories go to test.
    Category { held_out: BTreeSet<String> },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<BenchmarkExample>,
    pub dev: Vec<BenchmarkExample>,
    pub test: Vec<BenchmarkExample>,
}

pub fn split(examples: Vec<BenchmarkExample>, splitter: &Splitter, seed: u64) -> Split {
    let mut s = Split::default();
    for e in examples {
        let bucket = match splitter {
            Splitter::UserId {
                dev_fraction,
                test_fraction,
            } => {
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(e.query.user_id.as_bytes());
                let d = h.finalize();
                let u = u64::from_le_bytes(d[..8].try_into().unwrap()) as f64 / u64::MAX as f64;
                if u < *test_fraction {
                    2
                } else if u < test_fraction + dev_fraction {
                    1
                } else {
                    0
                }
            }
            Splitter::LongHis { cutoff_timestamp } => {
                if e.timestamp.unwrap_or(i64::MIN) >= *cutoff_timestamp {
                    2
                } else {
                    0
                }
            }
            Splitter::Category { held_out } => {
                if held_out.contains(&e.query.category) {
                    2
                } else {
                    0
                }
            }
        };
        match bucket {
            0 => s.train.push(e),
            1 => s.dev.push(e),
            _ => s.test.push(e),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(id: &str, name: &str) -> CandidateItem {
        CandidateItem {
            item_id: id.into(),
            name: name.into(),
            description: String::new(),
            category: "cafe".into(),
            images: vec![],
            location: Some(GeoPoint { lat: 0.0, lon: 0.0 }),
            rating: None,
        }
    }

    #[test]
    fn unique_name_keeps_first() {
        let items = [named("1", "Joe's Cafe"), named("2", "  joe's   CAFE "), named("3", "Blue Bar")];
        let kept: Vec<_> = unique_name(&items).iter().map(|c| c.item_id.as_str()).collect();
        assert_eq!(kept, ["1", "3"]);
        let distinct = [named("1", "a"), named("2", "b")];
        assert_eq!(unique_name(&distinct).len(), 2);
    }

    #[test]
    fn category_pruning_rules() {
        let mut cfg = GenConfig::google_review_v();
        cfg.min_category_occurrence = 0;
        cfg.multiword_allowlist.insert("steak house".into());
        let occ = HashMap::new();
        assert_eq!(prune_categories(&["Steak House".into()], &cfg, &occ), Some("steak house".into()));
        assert_eq!(prune_categories(&["hardware store".into()], &cfg, &occ), None);
        assert_eq!(prune_categories(&["french restaurant".into()], &cfg, &occ), Some("restaurant".into()));
        assert_eq!(
            prune_categories(&["gift shop".into(), "art museum".into()], &cfg, &occ),
            Some("museum".into())
        );
        let mut cfg = GenConfig::google_review_v();
        let occ: HashMap<_, _> = [("museum".to_string(), 9_999usize), ("restaurant".into(), 10_000)].into();
        assert_eq!(prune_categories(&["art museum".into()], &cfg, &occ), None);
        assert_eq!(prune_categories(&["thai restaurant".into()], &cfg, &occ), Some("restaurant".into()));
        cfg.min_category_occurrence = 1;
        assert_eq!(canonical_category("  ", &cfg), None);
    }

    #[test]
    fn profiles_carry_published_defaults() {
        let g = GenConfig::google_review_v();
        assert_eq!((g.rc_min, g.rc_max, g.fc_min, g.gtc_min, g.min_history), (30, 100, 10, 2, 10));
        let y = GenConfig::yelp_v();
        assert_eq!((y.rc_min, y.rc_max, y.fc_min, y.gtc_min), (30, 100, 10, 5));
        assert!(g.category_blocklist.contains("store") && y.category_blocklist.contains("tex-mex"));
        assert!(GenConfig { rc_min: 5, rc_max: 4, ..GenConfig::default() }.validate().is_err());
    }

    #[test]
    fn question_text() {
        assert_eq!(question_for("museum"), "Recommend a nearby museum.");
    }

    #[test]
    fn single_ground_truth_is_filtered() {
        // Two businesses, one visit: GT count 1 < gtc_min 2.
        let mut far = named("b", "Other");
        far.location = Some(GeoPoint { lat: 0.0, lon: 0.01 });
        let graphs = CategoryGraphs::build(&[named("a", "Mine"), far]).unwrap();
        let visits = vec![Visit {
            item_id: "a".into(),
            timestamp: 0,
            category: Some("cafe".into()),
            location: Some(GeoPoint { lat: 0.0, lon: 0.0 }),
            photo_refs: vec![],
        }];
        let cfg = GenConfig {
            rc_min: 2,
            rc_max: 2,
            fc_min: 1,
            gtc_min: 2,
            min_history: 1,
            ..GenConfig::default()
        };
        let out = generate_examples("u", &visits, &graphs, &cfg).unwrap();
        assert!(out.examples.is_empty());
        assert_eq!(out.attempts.len(), 1);
        assert_eq!(out.attempts[0].ground_truth_ids.len(), 1);
    }

    #[test]
    fn visits_without_location_are_skipped_with_warning() {
        let graphs = CategoryGraphs::build(&[named("a", "Mine")]).unwrap();
        let visits = vec![Visit {
            item_id: "a".into(),
            timestamp: 0,
            category: Some("cafe".into()),
            location: None,
            photo_refs: vec![],
        }];
        let out = generate_examples("u", &visits, &graphs, &GenConfig::default()).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.attempts.is_empty());
    }
}
