//! `[[Slot]]` prompt templates.
//!
//! Templates are checked against a slot registry when loaded, so a typo in a
//! slot name fails at load time rather than leaking into a rendered prompt.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown slot [[{slot}]] (allowed: {allowed})")]
    UnknownSlot { slot: String, allowed: String },
    #[error("unterminated slot starting at byte {0}")]
    Unterminated(usize),
    #[error("missing value for slot [[{0}]]")]
    MissingValue(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    pieces: Vec<Piece>,
}

/// The slot where a model writes its answer. It renders as the empty string so
/// the prompt ends where generation begins.
pub const ANSWER_SLOT: &str = "Answer";

impl Template {
    pub fn parse(source: &str, registry: &[&str]) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(start) = rest.find("[[") {
            let after = &rest[start + 2..];
            let end = after
                .find("]]")
                .ok_or(TemplateError::Unterminated(offset + start))?;
            let name = &after[..end];
            if !registry.contains(&name) {
                return Err(TemplateError::UnknownSlot {
                    slot: name.to_string(),
                    allowed: registry.join(", "),
                });
            }
            if start > 0 {
                pieces.push(Piece::Text(rest[..start].to_string()));
            }
            pieces.push(Piece::Slot(name.to_string()));
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(Self {
            source: source.to_string(),
            pieces,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(s.as_str()),
            Piece::Text(_) => None,
        })
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.source.len());
        for p in &self.pieces {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) if s == ANSWER_SLOT => {}
                Piece::Slot(s) => out.push_str(
                    values
                        .get(s.as_str())
                        .ok_or_else(|| TemplateError::MissingValue(s.clone()))?,
                ),
            }
        }
        Ok(out)
    }
}
