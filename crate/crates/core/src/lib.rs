//! Allocation-only kernels for refined fine-grained visual-text alignment.
//!
//! The crate is `no_std` (it needs `alloc`) and covers everything that does
//! not touch the filesystem:
//!
//! * [`geometry`]: crop proposals, IoU, and the view-refinement queue.
//! * [`text`]: description deduplication, top-k selection, TF-IDF.
//! * [`scoring`]: temperature similarity, softmax weights, the weighted
//!   cross-alignment score, and the baseline classifiers.
//! * [`synth`]: a synthetic part-prototype world with an analytic encoder.
//!
//! IO, manifests, the experiment harness and the CLI live in the `bifta` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod error;
pub use error::{Error, Result};

pub mod geometry;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod text;
pub mod vector;

pub use geometry::{BoundingBox, CropWindow, ViewQueue};
pub use rng::CropRng;
pub use scoring::{ClassScore, ScoreMatrix, Temperature, WeightVector};
pub use text::{DedupMode, DescriptionCandidate, DescriptionSet, LabelPrompt, Source};
