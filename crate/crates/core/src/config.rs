//! Pipeline configuration, stored as TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::GenConfig;
use crate::grid::{GridError, GridSpec, LabelStyle};
use crate::index::DEFAULT_CENTROID_SAMPLES;
use crate::loss::DEFAULT_LAMBDA;
use crate::refine::DEFAULT_MAX_ROUNDS;

pub const BACKEND_URL_ENV: &str = "LENSPIPE_BACKEND_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}: unsupported config extension, expected .toml or .json")]
    Extension(PathBuf),
    #[error("w = {w} but d = {d}; the grid holds exactly d² images")]
    WindowMismatch { w: usize, d: u32 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("lambda must be positive, got {0}")]
    Lambda(f64),
    #[error("remote backend needs an endpoint (config or {BACKEND_URL_ENV})")]
    NoEndpoint,
    #[error("unknown preset {0:?}; expected paligemma or minicpm")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// JSON over HTTP.
    Remote,
    Oracle,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub max_inflight: usize,
    pub retries: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Random,
            endpoint: None,
            timeout_ms: 30_000,
            max_inflight: 8,
            retries: 2,
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn require_endpoint(&self) -> Result<&str, ConfigError> {
        self.endpoint.as_deref().ok_or(ConfigError::NoEndpoint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetProfile {
    GoogleReviewV,
    YelpV,
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Resolves relative `pixels_ref`s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_template: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption_template: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aspect_template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub w: usize,
    pub d: u32,
    pub h: u32,
    pub n_centroid: usize,
    pub lambda: f64,
    pub max_refine_rounds: usize,
    pub seed: u64,
    pub label: LabelStyle,
    pub backend: BackendConfig,
    /// Caption and aspect generation service, when different from `backend`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augmenter: Option<BackendConfig>,
    pub dataset: DatasetProfile,
    /// Generation settings for the custom profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<GenConfig>,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            w: 64,
            d: 8,
            h: 896,
            n_centroid: DEFAULT_CENTROID_SAMPLES,
            lambda: DEFAULT_LAMBDA,
            max_refine_rounds: DEFAULT_MAX_ROUNDS,
            seed: 0,
            label: LabelStyle::default(),
            backend: BackendConfig::default(),
            augmenter: None,
            dataset: DatasetProfile::GoogleReviewV,
            bench: None,
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    /// Grid geometry presets.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let spec = match name {
            "paligemma" => GridSpec::paligemma(),
            "minicpm" => GridSpec::minicpm(),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Ok(Self::default().with_grid(spec.d, spec.h))
    }

    /// Sets `d`, `h` and the matching window `w = d²`.
    pub fn with_grid(mut self, d: u32, h: u32) -> Self {
        self.d = d;
        self.h = h;
        self.w = (d * d) as usize;
        self
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        let mut spec = GridSpec::new(self.d, self.h)?;
        spec.label = self.label;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid_spec()?;
        if self.w != (self.d * self.d) as usize {
            return Err(ConfigError::WindowMismatch { w: self.w, d: self.d });
        }
        if self.n_centroid == 0 {
            return Err(ConfigError::NonPositive("n_centroid"));
        }
        if self.max_refine_rounds == 0 {
            return Err(ConfigError::NonPositive("max_refine_rounds"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(ConfigError::Lambda(self.lambda));
        }
        for b in std::iter::once(&self.backend).chain(&self.augmenter) {
            if b.max_inflight == 0 {
                return Err(ConfigError::NonPositive("backend.max_inflight"));
            }
            if b.kind == BackendKind::Remote {
                b.require_endpoint()?;
            }
        }
        Ok(())
    }

    /// Benchmark generation settings for the chosen dataset profile.
    pub fn gen_config(&self) -> GenConfig {
        let mut g = match (self.dataset, &self.bench) {
            (_, Some(g)) => g.clone(),
            (DatasetProfile::GoogleReviewV, None) => GenConfig::google_review_v(),
            (DatasetProfile::YelpV, None) => GenConfig::yelp_v(),
            (DatasetProfile::Custom, None) => GenConfig::default(),
        };
        if self.bench.is_none() {
            g.seed = self.seed;
        }
        g
    }

    /// The augmenter service, defaulting to the scoring backend.
    pub fn augmenter(&self) -> &BackendConfig {
        self.augmenter.as_ref().unwrap_or(&self.backend)
    }

    /// Replaces backend endpoints with `url` when set.
    pub fn apply_endpoint_override(&mut self, url: Option<String>) {
        if let Some(url) = url.filter(|u| !u.is_empty()) {
            self.backend.endpoint = Some(url.clone());
            if let Some(a) = &mut self.augmenter {
                a.endpoint = Some(url);
            }
        }
    }

    pub fn apply_env(&mut self) {
        self.apply_endpoint_override(std::env::var(BACKEND_URL_ENV).ok());
    }

    pub fn from_toml_str(s: &str) -> Result<Self, String> {
        toml::from_str(s).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = match ext(path)? {
            Format::Toml => Self::from_toml_str(&text),
            Format::Json => serde_json::from_str(&text).map_err(|e| e.to_string()),
        };
        parsed.map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = match ext(path)? {
            Format::Toml => self.to_toml_string(),
            Format::Json => serde_json::to_string_pretty(self).expect("config serializes") + "\n",
        };
        fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

enum Format {
    Toml,
    Json,
}

fn ext(path: &Path) -> Result<Format, ConfigError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => Ok(Format::Toml),
        Some("json") => Ok(Format::Json),
        _ => Err(ConfigError::Extension(path.to_path_buf())),
    }
}
