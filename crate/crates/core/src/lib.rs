//! Personalized recommendation from task-agnostic photo histories.

pub mod grid;
pub mod index;
pub mod jsonl;
pub mod model;
pub mod profile;
pub mod store;
pub mod template;
pub mod wire;
pub mod matcher;
pub mod scorer;
pub mod benchgen;
pub mod geo;
pub mod loss;
pub mod refine;
pub mod eval;
pub mod pipeline;
pub mod config;
pub mod synth;
