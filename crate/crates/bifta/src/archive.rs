//! Embedding archive: `manifest.json` plus raw little-endian `data.f32`.
//!
//! ```text
//! <name>/manifest.json   {"dim", "count", "dtype": "f32le", "l2_normalized", "names"}
//! <name>/data.f32        count * dim * 4 bytes, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE: &str = "f32le";
pub const NORM_TOLERANCE: f64 = 1e-3;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.f32";

/// Named rows of equal dimension, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    dim: usize,
    l2_normalized: bool,
    names: Vec<String>,
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    dtype: String,
    l2_normalized: bool,
    names: Vec<String>,
}

impl EmbeddingArchive {
    pub fn new(dim: usize, l2_normalized: bool) -> Self {
        Self { dim, l2_normalized, names: Vec::new(), data: Vec::new() }
    }

    pub fn from_rows(dim: usize, l2_normalized: bool, names: Vec<String>, data: Vec<f32>) -> Result<Self> {
        let a = Self { dim, l2_normalized, names, data };
        a.check().map_err(Error::Validation)?;
        Ok(a)
    }

    /// Appends a row and returns its index.
    pub fn push(&mut self, name: impl Into<String>, row: &[f32]) -> Result<usize> {
        if row.len() != self.dim {
            return Err(bifta_core::Error::DimensionMismatch { expected: self.dim, actual: row.len() }.into());
        }
        self.names.push(name.into());
        self.data.extend_from_slice(row);
        Ok(self.names.len() - 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn count(&self) -> usize {
        self.names.len()
    }
    pub fn l2_normalized(&self) -> bool {
        self.l2_normalized
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        (i < self.count()).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Every invariant violation, one message each.
    pub fn check(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim must be positive".to_string());
        }
        if self.data.len() != self.names.len() * self.dim {
            problems.push(format!("{} values for {} rows of dim {}", self.data.len(), self.names.len(), self.dim));
            return Err(problems);
        }
        let mut seen = HashSet::new();
        for n in &self.names {
            if !seen.insert(n.as_str()) {
                problems.push(format!("duplicate row name '{n}'"));
            }
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            problems.push("non-finite values".to_string());
        }
        if self.l2_normalized && self.dim > 0 {
            let bad: Vec<usize> = (0..self.count())
                .filter(|&i| !bifta_core::vector::is_unit(self.row(i).unwrap(), NORM_TOLERANCE))
                .collect();
            if !bad.is_empty() {
                problems.push(format!("rows {bad:?} are not unit norm"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `archive` into directory `dir`, creating it if needed.
pub fn write_archive(archive: &EmbeddingArchive, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    archive.check().map_err(Error::Validation)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(archive.data.len() * 4);
    for x in &archive.data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(&dir.join(DATA_FILE), &bytes)?;
    let header = Header {
        dim: archive.dim,
        count: archive.count(),
        dtype: DTYPE.to_string(),
        l2_normalized: archive.l2_normalized,
        names: archive.names.clone(),
    };
    let json = serde_json::to_vec_pretty(&header).map_err(|e| Error::json(dir, e))?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

pub fn read_archive(dir: impl AsRef<Path>) -> Result<EmbeddingArchive> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let header: Header = serde_json::from_slice(&text).map_err(|e| Error::json(&mpath, e))?;
    let corrupt = |reason: String| Error::CorruptArchive { path: PathBuf::from(dir), reason };
    if header.dtype != DTYPE {
        return Err(corrupt(format!("unsupported dtype '{}'", header.dtype)));
    }
    if header.names.len() != header.count {
        return Err(corrupt(format!("{} names for count {}", header.names.len(), header.count)));
    }
    let dpath = dir.join(DATA_FILE);
    let bytes = fs::read(&dpath).map_err(|e| Error::io(&dpath, e))?;
    let expected = header.count * header.dim * 4;
    if bytes.len() != expected {
        return Err(corrupt(format!("expected {expected} bytes of data, found {}", bytes.len())));
    }
    let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(corrupt(format!("non-finite value in row {}", i / header.dim.max(1))));
    }
    let archive = EmbeddingArchive { dim: header.dim, l2_normalized: header.l2_normalized, names: header.names, data };
    archive.check().map_err(Error::Validation)?;
    Ok(archive)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_archive_has_empty_data_file() {
        let dir = tempfile::tempdir().unwrap();
        let a = EmbeddingArchive::new(8, true);
        write_archive(&a, dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join(DATA_FILE)).unwrap().len(), 0);
        assert_eq!(read_archive(dir.path()).unwrap(), a);
    }

    #[test]
    fn golden_bytes_for_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = EmbeddingArchive::new(4, true);
        a.push("e0", &[1.0, 0.0, 0.0, 0.0]).unwrap();
        write_archive(&a, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(DATA_FILE)).unwrap();
        let mut expected = vec![0x00, 0x00, 0x80, 0x3F];
        expected.extend([0u8; 12]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_data_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = EmbeddingArchive::new(2, false);
        a.push("a", &[1.0, 2.0]).unwrap();
        a.push("b", &[3.0, 4.0]).unwrap();
        write_archive(&a, dir.path()).unwrap();
        let p = dir.path().join(DATA_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(10);
        fs::write(&p, bytes).unwrap();
        let err = read_archive(dir.path()).unwrap_err().to_string();
        assert!(err.contains("expected 16 bytes") && err.contains("found 10"), "{err}");
    }

    #[test]
    fn nan_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = EmbeddingArchive::new(2, false);
        a.push("a", &[1.0, 2.0]).unwrap();
        write_archive(&a, dir.path()).unwrap();
        fs::write(dir.path().join(DATA_FILE), [0, 0, 0xC0, 0x7F, 0, 0, 0, 0]).unwrap();
        assert!(matches!(read_archive(dir.path()), Err(Error::CorruptArchive { .. })));
    }

    #[test]
    fn norm_violation_rejected() {
        let mut a = EmbeddingArchive::new(2, true);
        a.push("ok", &[1.0, 0.0]).unwrap();
        a.push("bad", &[2.0, 0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = write_archive(&a, dir.path()).unwrap_err();
        assert!(err.to_string().contains("rows [1]"), "{err}");
        // a hand-written archive with the same content fails on read
        let plain =
            EmbeddingArchive::from_rows(2, false, vec!["ok".into(), "bad".into()], vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        write_archive(&plain, dir.path()).unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&m).unwrap().replace("\"l2_normalized\": false", "\"l2_normalized\": true");
        fs::write(&m, text).unwrap();
        assert!(matches!(read_archive(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(EmbeddingArchive::from_rows(1, false, vec!["a".into(), "a".into()], vec![1.0, 2.0]).is_err());
    }
}
