//! Iterative aspect-word refinement and training-example construction.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{gridify, GridError, GridImage, GridSource, GridSpec};
use crate::scorer::tokens;

pub const DEFAULT_MAX_ROUNDS: usize = 4;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("refinement of {image_id} already finished at round {round}")]
    Finished { image_id: String, round: usize },
    #[error("{images} images but {captions} captions")]
    Mismatch { images: usize, captions: usize },
    #[error("need at least {needed} image/caption pairs, have {have}")]
    TooFewPairs { needed: usize, have: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("joint example needs at least one positive label")]
    NoPositive,
    #[error("lambda must be positive, got {0}")]
    BadLambda(f64),
}

/// Chooses the useful subset of an image's current aspect words.
pub trait Selector {
    fn select(&mut self, image_id: &str, current: &[String], ground_truths: &[String]) -> Vec<String>;
}

impl<F> Selector for F
where
    F: FnMut(&str, &[String], &[String]) -> Vec<String>,
{
    fn select(&mut self, image_id: &str, current: &[String], ground_truths: &[String]) -> Vec<String> {
        self(image_id, current, ground_truths)
    }
}

/// Keeps words whose tokens all occur in some ground-truth text.
#[derive(Debug, Clone, Copy, Default)]
pub struct GtContainmentSelector;

impl Selector for GtContainmentSelector {
    fn select(&mut self, _: &str, current: &[String], ground_truths: &[String]) -> Vec<String> {
        let gt: Vec<_> = ground_truths.iter().map(|t| tokens(t)).collect();
        current
            .iter()
            .filter(|w| {
                let wt = tokens(w);
                !wt.is_empty() && gt.iter().any(|g| wt.is_subset(g))
            })
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementState {
    pub image_id: String,
    /// `word_sets[j]` is the set after round `j`; index 0 is the initial set.
    pub word_sets: Vec<Vec<String>>,
    pub converged: bool,
    pub max_rounds: usize,
}

impl RefinementState {
    pub fn new(image_id: impl Into<String>, initial: Vec<String>, max_rounds: usize) -> Self {
        Self {
            image_id: image_id.into(),
            word_sets: vec![initial],
            converged: false,
            max_rounds,
        }
    }

    pub fn round(&self) -> usize {
        self.word_sets.len() - 1
    }

    pub fn current(&self) -> &[String] {
        self.word_sets.last().expect("at least the initial set")
    }

    pub fn is_terminal(&self) -> bool {
        self.converged || self.round() >= self.max_rounds
    }
}

/// Runs one round. The selector's output is intersected with the previous
/// set; words it invents are dropped with a warning.
pub fn refine_round(
    mut state: RefinementState,
    selector: &mut dyn Selector,
    ground_truths: &[String],
) -> Result<RefinementState, RefineError> {
    if state.is_terminal() {
        let round = state.round();
        return Err(RefineError::Finished {
            image_id: state.image_id,
            round,
        });
    }
    let prev = state.current().to_vec();
    let picked = selector.select(&state.image_id, &prev, ground_truths);
    for w in picked.iter().filter(|w| !prev.contains(w)) {
        log::warn!("{}: selector returned unknown word {w:?}; dropped", state.image_id);
    }
    let next: Vec<String> = prev.iter().filter(|w| picked.contains(w)).cloned().collect();
    if next.is_empty() || next == prev {
        state.word_sets.push(prev);
        state.converged = true;
    } else {
        state.word_sets.push(next);
    }
    Ok(state)
}

/// Refines until convergence or the round cap.
pub fn refine(
    image_id: &str,
    initial: Vec<String>,
    selector: &mut dyn Selector,
    ground_truths: &[String],
    max_rounds: usize,
) -> RefinementState {
    let mut state = RefinementState::new(image_id, initial, max_rounds);
    while !state.is_terminal() {
        state = refine_round(state, selector, ground_truths).expect("non-terminal state");
    }
    state
}

#[derive(Debug, Clone)]
pub struct GridCaptionExample {
    pub grid: GridImage,
    pub target_text: String,
    /// Indices into the input pairs, in cell order.
    pub sampled: Vec<usize>,
}

/// `Image 1: x₁, Image 2: x₂, …`
pub fn grid_caption_target(captions: &[&str]) -> String {
    captions
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Image {}: {}", i + 1, c.trim()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Samples `d²` image/caption pairs with `seed` and grids them.
pub fn build_grid_caption_example(
    images: &[GridSource],
    captions: &[String],
    spec: &GridSpec,
    seed: u64,
) -> Result<GridCaptionExample, RefineError> {
    if images.len() != captions.len() {
        return Err(RefineError::Mismatch {
            images: images.len(),
            captions: captions.len(),
        });
    }
    let w = spec.capacity();
    if images.len() < w {
        return Err(RefineError::TooFewPairs {
            needed: w,
            have: images.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = sample(&mut rng, images.len(), w).into_vec();
    let chosen: Vec<GridSource> = sampled.iter().map(|&i| images[i].clone()).collect();
    let grid = gridify(&chosen, spec)?;
    let texts: Vec<&str> = sampled.iter().map(|&i| captions[i].as_str()).collect();
    Ok(GridCaptionExample {
        grid,
        target_text: grid_caption_target(&texts),
        sampled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectPart {
    pub image_ref: String,
    pub prompt: String,
    pub target_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPart {
    pub prompt: String,
    pub grid_png_path: String,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointExample {
    pub aspect: AspectPart,
    #[serde(rename = "match")]
    pub match_part: MatchPart,
    pub lambda: f64,
}

impl JointExample {
    pub fn new(aspect: AspectPart, match_part: MatchPart, lambda: f64) -> Result<Self, RefineError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(RefineError::BadLambda(lambda));
        }
        if !match_part.labels.contains(&1) {
            return Err(RefineError::NoPositive);
        }
        Ok(Self {
            aspect,
            match_part,
            lambda,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCaptionRecord {
    pub grid_png_path: String,
    pub target_text: String,
}

/// One line of the training export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainRecord {
    GridCaption(GridCaptionRecord),
    Joint(JointExample),
}
