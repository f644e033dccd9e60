//! Experiment configuration. JSON keys match the struct fields; every key is
//! optional and falls back to the defaults below.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use bifta_core::geometry::default_max_attempts;
use bifta_core::{CropWindow, Source, Temperature};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scoring pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// View refinement + description refinement + weighted cross-alignment.
    Bifta,
    /// Unfiltered random crops, unrefined descriptions, weighted cross-alignment.
    Wca,
    BiftaNoVr,
    BiftaNoDr,
    /// Label prompt only.
    Clip,
    /// Averaged label prompts.
    ClipE,
    /// Mean similarity over unrefined descriptions.
    DescAvg,
}

impl Mode {
    pub fn uses_views(self) -> bool {
        matches!(self, Mode::Bifta | Mode::Wca | Mode::BiftaNoVr | Mode::BiftaNoDr)
    }
    pub fn refines_views(self) -> bool {
        matches!(self, Mode::Bifta | Mode::BiftaNoDr)
    }
    pub fn refines_descriptions(self) -> bool {
        matches!(self, Mode::Bifta | Mode::BiftaNoVr)
    }
}

/// How views are proposed and deduplicated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VrStrategy {
    /// Random crops, IoU filter.
    Iou,
    /// Random crops, embedding-cosine filter.
    EmbedCosine,
    /// Fixed `g × g` tiling.
    Grid(usize),
}

impl fmt::Display for VrStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VrStrategy::Iou => f.write_str("iou"),
            VrStrategy::EmbedCosine => f.write_str("embed_cosine"),
            VrStrategy::Grid(g) => write!(f, "grid:{g}"),
        }
    }
}

impl FromStr for VrStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou" => Ok(VrStrategy::Iou),
            "embed_cosine" => Ok(VrStrategy::EmbedCosine),
            _ => s
                .strip_prefix("grid:")
                .and_then(|g| g.parse().ok())
                .filter(|&g: &usize| g >= 1)
                .map(VrStrategy::Grid)
                .ok_or_else(|| {
                    Error::Config(format!("unknown vr_strategy '{s}' (expected iou, embed_cosine or grid:<g>)"))
                }),
        }
    }
}

impl Serialize for VrStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VrStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrStrategy {
    EmbedCosine,
    Tfidf,
    None,
}

/// Where crop embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSource {
    /// Oracle encoder when the dataset is synthetic, candidate pool otherwise.
    Auto,
    Oracle,
    /// Precomputed candidate crops from the image archive.
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub capacity: usize,
    /// Candidate budget per queue; defaults to ten times the capacity.
    pub max_attempts: Option<usize>,
    pub s_th: f64,
    pub k: usize,
    pub tau: f64,
    pub mode: Mode,
    pub vr_strategy: VrStrategy,
    /// Cosine threshold of the embedding-space view filter.
    pub vr_cos_threshold: f64,
    pub dr_strategy: DrStrategy,
    pub seeds: Vec<u64>,
    pub include_full_view: bool,
    /// Restricts description pools to these sources; empty keeps all.
    pub sources: Vec<Source>,
    pub view_source: ViewSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.9,
            eta: 0.8,
            capacity: 60,
            max_attempts: None,
            s_th: 0.99,
            k: 50,
            tau: 0.01,
            mode: Mode::Bifta,
            vr_strategy: VrStrategy::Iou,
            vr_cos_threshold: 0.95,
            dr_strategy: DrStrategy::EmbedCosine,
            seeds: vec![0],
            include_full_view: false,
            sources: Vec::new(),
            view_source: ViewSource::Auto,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_slice(&text).map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn window(&self) -> Result<CropWindow> {
        CropWindow::new(self.alpha, self.beta).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.tau).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn attempts(&self) -> usize {
        self.max_attempts.unwrap_or_else(|| default_max_attempts(self.capacity))
    }

    /// Checks every component precondition.
    pub fn validate(&self) -> Result<()> {
        self.window()?;
        self.temperature()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if self.capacity == 0 {
            return bad("capacity must be at least 1".into());
        }
        if self.attempts() < self.capacity {
            return bad(format!("max_attempts {} is below capacity {}", self.attempts(), self.capacity));
        }
        if !(self.s_th > 0.0 && self.s_th <= 1.0) {
            return bad(format!("s_th must lie in (0, 1], got {}", self.s_th));
        }
        if !(self.vr_cos_threshold > 0.0 && self.vr_cos_threshold <= 1.0) {
            return bad(format!("vr_cos_threshold must lie in (0, 1], got {}", self.vr_cos_threshold));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        Ok(())
    }
}
