//! Layered settings: built-in defaults, then environment, then a TOML file,
//! then command-line overrides.

use crate::backend::{HttpConfig, BACKEND_URL_ENV};
use crate::doi::DoiThresholds;
use crate::search::{NoiseMatch, SearchConfig};
use crate::synth::ScaleRange;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid setting {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSettings {
    pub url: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub timeout_secs: f64,
    pub retries: u32,
    pub max_connections: usize,
}

impl Default for BackendSettings {
    fn default() -> Self {
        let http = HttpConfig::new("");
        Self {
            url: None,
            fixtures: None,
            timeout_secs: http.timeout.as_secs_f64(),
            retries: http.retries,
            max_connections: http.max_connections,
        }
    }
}

impl BackendSettings {
    pub fn http_config(&self, url: &str) -> HttpConfig {
        HttpConfig {
            base_url: url.to_owned(),
            timeout: Duration::from_secs_f64(self.timeout_secs),
            retries: self.retries,
            max_connections: self.max_connections,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub threshold: f64,
    pub doi: DoiThresholds,
    pub search: SearchConfig,
    pub scale_range: ScaleRange,
    pub backend: BackendSettings,
    /// Worker threads; `None` uses one per logical core.
    pub workers: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            doi: DoiThresholds::default(),
            search: SearchConfig::default(),
            scale_range: ScaleRange::default(),
            backend: BackendSettings::default(),
            workers: None,
        }
    }
}

/// A partial set of settings. Every field is optional; present fields
/// replace the value underneath when layered.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overlay {
    pub threshold: Option<f64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub doi: DoiOverlay,
    #[serde(default)]
    pub search: SearchOverlay,
    #[serde(default)]
    pub synth: SynthOverlay,
    #[serde(default)]
    pub backend: BackendOverlay,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoiOverlay {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOverlay {
    pub dilation_iterations: Option<usize>,
    pub noise_match: Option<NoiseMatch>,
    pub confidence_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthOverlay {
    pub scale_min: Option<f64>,
    pub scale_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendOverlay {
    pub url: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub timeout_secs: Option<f64>,
    pub retries: Option<u32>,
    pub max_connections: Option<usize>,
}

impl Overlay {
    /// Reads the recognised environment variables through `lookup`.
    pub fn from_env_with(lookup: impl Fn(&str) -> Option<String>) -> Self {
        let mut o = Self::default();
        o.backend.url = lookup(BACKEND_URL_ENV).filter(|v| !v.trim().is_empty());
        o
    }

    pub fn from_env() -> Self {
        Self::from_env_with(|k| std::env::var(k).ok())
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut o: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(f) = &o.backend.fixtures {
            if f.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                o.backend.fixtures = Some(base.join(f));
            }
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Settings {
    pub fn apply(&mut self, o: Overlay) {
        set(&mut self.threshold, o.threshold);
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        set(&mut self.doi.lower, o.doi.lower);
        set(&mut self.doi.upper, o.doi.upper);
        set(
            &mut self.search.dilation_iterations,
            o.search.dilation_iterations,
        );
        set(&mut self.search.noise_match, o.search.noise_match);
        set(&mut self.search.confidence_floor, o.search.confidence_floor);
        set(&mut self.scale_range.min, o.synth.scale_min);
        set(&mut self.scale_range.max, o.synth.scale_max);
        let b = o.backend;
        if b.url.is_some() {
            self.backend.url = b.url;
        }
        if b.fixtures.is_some() {
            self.backend.fixtures = b.fixtures;
        }
        set(&mut self.backend.timeout_secs, b.timeout_secs);
        set(&mut self.backend.retries, b.retries);
        set(&mut self.backend.max_connections, b.max_connections);
    }

    /// Defaults, then `env`, then `file`, then `cli`; the result is validated.
    pub fn resolve(env: Overlay, file: Option<Overlay>, cli: Overlay) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        s.apply(env);
        if let Some(f) = file {
            s.apply(f);
        }
        s.apply(cli);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, message: String| Err(ConfigError::Invalid { key, message });
        if !(0.0..1.0).contains(&self.threshold) {
            return invalid("threshold", format!("{} not in [0, 1)", self.threshold));
        }
        let d = self.doi;
        if !(d.lower.is_finite() && d.upper.is_finite() && d.lower <= d.upper) {
            return invalid(
                "doi",
                format!("bounds ({}, {}) out of order", d.lower, d.upper),
            );
        }
        if !(0.0..=1.0).contains(&self.search.confidence_floor) {
            return invalid(
                "search.confidence_floor",
                format!("{} not in [0, 1]", self.search.confidence_floor),
            );
        }
        if self.scale_range.validate().is_err() {
            return invalid(
                "synth.scale",
                format!("[{}, {}]", self.scale_range.min, self.scale_range.max),
            );
        }
        if !(self.backend.timeout_secs > 0.0 && self.backend.timeout_secs.is_finite()) {
            return invalid(
                "backend.timeout_secs",
                format!("{}", self.backend.timeout_secs),
            );
        }
        if self.backend.max_connections == 0 {
            return invalid("backend.max_connections", "must be positive".into());
        }
        if self.workers == Some(0) {
            return invalid("workers", "must be positive".into());
        }
        Ok(())
    }
}
