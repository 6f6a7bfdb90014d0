//! Candidate-matching prompts and score → ranking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::RetrievalResult;
use crate::model::{CandidateItem, Query, RankedResult, VisualHistory};
use crate::template::{Template, TemplateError};

/// The identifier vocabulary is `<I1>` … `<I100>`.
pub const MAX_CANDIDATES: usize = 100;

pub const MATCH_SLOTS: &[&str] = &[
    "Question",
    "Category",
    "GridSize",
    "Profile",
    "Candidates",
    "Answer",
];

pub const DEFAULT_MATCH_TEMPLATE: &str = "\
The image is a [[GridSize]] grid of numbered photos from the user's photo history. \
The caption and aspect words of each numbered photo follow.
[[Profile]]

Question: [[Question]]
Candidates:
[[Candidates]]

Based on the user's photos, which candidate would the user prefer? \
Answer with the candidate's identifier token.
Answer: [[Answer]]";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("empty candidate set")]
    NoCandidates,
    #[error("token scheme exhausted: {0} candidates exceeds {MAX_CANDIDATES}")]
    TooManyCandidates(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("retrieved image {0} is not in the user's history")]
    UnknownImage(String),
    #[error("{scores} scores for {candidates} candidates")]
    LengthMismatch { scores: usize, candidates: usize },
    #[error("score for candidate {0} is NaN")]
    NaN(String),
}

pub fn candidate_token(k: usize) -> String {
    format!("<I{k}>")
}

pub fn candidate_tokens(n: usize) -> Vec<String> {
    (1..=n).map(candidate_token).collect()
}

/// Text of one retrieved image, in grid-cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub k: usize,
    pub image_id: String,
    pub caption: String,
    pub aspect_words: Vec<String>,
}

/// Query-specific profile text; the matching grid image travels separately.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryProfile {
    pub grid_side: u32,
    pub entries: Vec<ProfileEntry>,
}

impl QueryProfile {
    pub fn from_retrieval(
        history: &VisualHistory,
        retrieved: &RetrievalResult,
        grid_side: u32,
    ) -> Result<Self, MatchError> {
        let entries = retrieved
            .image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let t = history.get(id).ok_or_else(|| MatchError::UnknownImage(id.clone()))?;
                Ok(ProfileEntry {
                    k: i + 1,
                    image_id: id.clone(),
                    caption: t.caption.clone(),
                    aspect_words: t.aspect_words.clone(),
                })
            })
            .collect::<Result<_, MatchError>>()?;
        Ok(Self { grid_side, entries })
    }

    /// `Image k: <caption>. Aspects: <words>.` per cell, one line each.
    /// Entries with no text at all are skipped.
    pub fn text(&self) -> String {
        let mut lines = Vec::new();
        for e in &self.entries {
            let caption = e.caption.trim().trim_end_matches('.');
            let mut line = format!("Image {}:", e.k);
            if !caption.is_empty() {
                line.push(' ');
                line.push_str(caption);
                line.push('.');
            }
            if !e.aspect_words.is_empty() {
                line.push_str(" Aspects: ");
                line.push_str(&e.aspect_words.join(", "));
                line.push('.');
            }
            if caption.is_empty() && e.aspect_words.is_empty() {
                continue;
            }
            lines.push(line);
        }
        lines.join("\n")
    }

    pub fn aspect_words(&self) -> BTreeSet<String> {
        self.entries
            .iter()
            .flat_map(|e| e.aspect_words.iter().cloned())
            .collect()
    }
}

/// A fully rendered candidate-matching prompt plus what backends need to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPrompt {
    pub query_id: String,
    pub text: String,
    pub candidate_ids: Vec<String>,
    pub candidate_texts: Vec<String>,
    pub profile_aspects: BTreeSet<String>,
    /// PNG bytes of the profile grid, when rendered.
    pub grid_png: Option<Vec<u8>>,
}

impl MatchPrompt {
    pub fn candidate_tokens(&self) -> Vec<String> {
        candidate_tokens(self.candidate_ids.len())
    }
}

#[derive(Debug, Clone)]
pub struct MatchTemplate(Template);

impl Default for MatchTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_MATCH_TEMPLATE).expect("default template parses")
    }
}

impl MatchTemplate {
    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        Template::parse(source, MATCH_SLOTS).map(Self)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `<Ik> name: description`, one line per candidate.
pub fn candidate_block(k: usize, c: &CandidateItem) -> String {
    let name = one_line(&c.name);
    let desc = one_line(&c.description);
    if desc.is_empty() {
        format!("{} {}", candidate_token(k), name)
    } else {
        format!("{} {}: {}", candidate_token(k), name, desc)
    }
}

pub fn build_match_prompt(
    query: &Query,
    profile: &QueryProfile,
    candidates: &[CandidateItem],
    template: &MatchTemplate,
    grid_png: Option<Vec<u8>>,
) -> Result<MatchPrompt, MatchError> {
    if candidates.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    if candidates.len() > MAX_CANDIDATES {
        return Err(MatchError::TooManyCandidates(candidates.len()));
    }
    let block = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| candidate_block(i + 1, c))
        .collect::<Vec<_>>()
        .join("\n");
    let mut values = BTreeMap::new();
    values.insert("Question", query.question_text.clone());
    values.insert("Category", query.category.clone());
    values.insert("GridSize", format!("{0}x{0}", profile.grid_side));
    values.insert("Profile", profile.text());
    values.insert("Candidates", block);
    let text = template.0.render(&values)?;
    Ok(MatchPrompt {
        query_id: query.query_id.clone(),
        text,
        candidate_ids: candidates.iter().map(|c| c.item_id.clone()).collect(),
        candidate_texts: candidates
            .iter()
            .map(|c| format!("{} {}", c.name, c.description))
            .collect(),
        profile_aspects: profile.aspect_words(),
        grid_png,
    })
}

/// Orders candidates by descending score, ties by ascending item_id.
pub fn rank(query_id: &str, scores: &[f64], candidate_ids: &[String]) -> Result<RankedResult, MatchError> {
    if scores.len() != candidate_ids.len() {
        return Err(MatchError::LengthMismatch {
            scores: scores.len(),
            candidates: candidate_ids.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(MatchError::NaN(candidate_ids[i].clone()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| candidate_ids[a].cmp(&candidate_ids[b]))
    });
    Ok(RankedResult {
        query_id: query_id.to_string(),
        scores: candidate_ids.iter().cloned().zip(scores.iter().copied()).collect(),
        ranking: order.into_iter().map(|i| candidate_ids[i].clone()).collect(),
    })
}
