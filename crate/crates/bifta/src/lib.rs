//! Embedding archives, dataset manifests, the experiment harness and the
//! `bifta` command line, on top of [`bifta_core`].

pub use bifta_core as core;

pub mod archive;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fixture;
pub mod manifest;
pub mod pools;
pub mod sweep;

pub use error::{Error, Result};
