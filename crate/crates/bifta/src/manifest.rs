//! Dataset manifests tying images, classes and descriptions to archive rows.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bifta_core::synth::{gen_world, SynthImage, SynthWorld, WorldParams};
use bifta_core::{BoundingBox, Source};
use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, write_archive, EmbeddingArchive};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Archive directory with full-image and patch embeddings, relative to
    /// the manifest file.
    pub image_archive: String,
    /// Archive directory with prompt and description embeddings.
    pub text_archive: String,
    pub classes: Vec<ClassEntry>,
    pub images: Vec<ImageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: String,
    pub prompt: String,
    pub prompt_row: usize,
    /// Additional prompt templates, used by the prompt-ensemble baseline.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_prompt_rows: Vec<usize>,
    pub description_rows: Vec<DescriptionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRow {
    pub row: usize,
    pub text: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub truth_label: String,
    pub full_row: usize,
    /// Precomputed candidate crops, in the order they were sampled.
    #[serde(default)]
    pub patch_rows: Vec<PatchRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRow {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub row: usize,
}

/// Enough to regenerate the synthetic world and encode new crops on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSection {
    pub world: WorldParams,
    /// One entry per manifest image, same order.
    pub images: Vec<SynthImage>,
    #[serde(default)]
    pub clustered_crops: ClusterSpec,
}

/// Near-identical crops placed at the head of every image's candidate
/// stream, over the region with the most shared-part content.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub count: usize,
    /// Side length of the clustered crops.
    #[serde(default)]
    pub size: f64,
    /// Maximum corner offset between clustered crops.
    #[serde(default)]
    pub jitter: f64,
}

/// One problem found by [`validate_manifest`].
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    DanglingRow { archive: &'static str, row: usize, count: usize, context: String },
    DuplicateName { what: &'static str, name: String },
    LabelMismatch { image: String, label: String },
    DimensionMismatch { images: usize, texts: usize },
    Archive { archive: &'static str, problem: String },
    Synthetic(String),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DanglingRow { archive, row, count, context } => {
                write!(f, "{context}: row {row} is beyond the {count} rows of the {archive} archive")
            }
            Diagnostic::DuplicateName { what, name } => write!(f, "duplicate {what} '{name}'"),
            Diagnostic::LabelMismatch { image, label } => {
                write!(f, "image '{image}' has truth label '{label}' which is not a class")
            }
            Diagnostic::DimensionMismatch { images, texts } => {
                write!(f, "image archive dim {images} differs from text archive dim {texts}")
            }
            Diagnostic::Archive { archive, problem } => write!(f, "{archive} archive: {problem}"),
            Diagnostic::Synthetic(msg) => write!(f, "synthetic section: {msg}"),
        }
    }
}

/// Collects every dangling-row, duplicate-name and label-mismatch problem.
pub fn validate_manifest(m: &DatasetManifest, images: &EmbeddingArchive, texts: &EmbeddingArchive) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (name, a) in [("image", images), ("text", texts)] {
        if let Err(problems) = a.check() {
            out.extend(problems.into_iter().map(|problem| Diagnostic::Archive { archive: name, problem }));
        }
    }
    if images.dim() != texts.dim() {
        out.push(Diagnostic::DimensionMismatch { images: images.dim(), texts: texts.dim() });
    }
    let mut check_row = |archive: &'static str, a: &EmbeddingArchive, row: usize, context: String| {
        if row >= a.count() {
            out.push(Diagnostic::DanglingRow { archive, row, count: a.count(), context });
        }
    };
    for c in &m.classes {
        check_row("text", texts, c.prompt_row, format!("class '{}' prompt", c.label));
        for &r in &c.extra_prompt_rows {
            check_row("text", texts, r, format!("class '{}' extra prompt", c.label));
        }
        for d in &c.description_rows {
            check_row("text", texts, d.row, format!("class '{}' description", c.label));
        }
    }
    for img in &m.images {
        check_row("image", images, img.full_row, format!("image '{}' full view", img.id));
        for p in &img.patch_rows {
            check_row("image", images, p.row, format!("image '{}' patch", img.id));
        }
    }
    let mut labels = HashSet::new();
    for c in &m.classes {
        if !labels.insert(c.label.as_str()) {
            out.push(Diagnostic::DuplicateName { what: "class label", name: c.label.clone() });
        }
    }
    let mut ids = HashSet::new();
    for img in &m.images {
        if !ids.insert(img.id.as_str()) {
            out.push(Diagnostic::DuplicateName { what: "image id", name: img.id.clone() });
        }
        if !labels.contains(img.truth_label.as_str()) {
            out.push(Diagnostic::LabelMismatch { image: img.id.clone(), label: img.truth_label.clone() });
        }
    }
    if let Some(s) = &m.synthetic {
        if s.images.len() != m.images.len() {
            out.push(Diagnostic::Synthetic(format!(
                "{} synthetic images for {} manifest images",
                s.images.len(),
                m.images.len()
            )));
        }
        if s.world.classes != m.classes.len() {
            out.push(Diagnostic::Synthetic(format!(
                "world has {} classes, manifest {}",
                s.world.classes,
                m.classes.len()
            )));
        }
        if s.world.dim != images.dim() {
            out.push(Diagnostic::Synthetic(format!(
                "world dim {} differs from archive dim {}",
                s.world.dim,
                images.dim()
            )));
        }
        for (img, entry) in s.images.iter().zip(&m.images) {
            let ok_label = m.classes.get(img.class_id).is_some_and(|c| c.label == entry.truth_label);
            if !ok_label {
                out.push(Diagnostic::Synthetic(format!(
                    "image '{}' class id {} does not match its label",
                    entry.id, img.class_id
                )));
            }
        }
    }
    out
}

/// Regenerated synthetic world, for on-demand crop encoding.
#[derive(Debug, Clone)]
pub struct SynthRuntime {
    pub world: SynthWorld,
    pub images: Vec<SynthImage>,
    pub cluster: ClusterSpec,
}

/// A manifest with its archives loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: EmbeddingArchive,
    pub texts: EmbeddingArchive,
    pub synthetic: Option<SynthRuntime>,
}

pub const MANIFEST_NAME: &str = "dataset.json";

impl Dataset {
    pub fn new(manifest: DatasetManifest, images: EmbeddingArchive, texts: EmbeddingArchive) -> Result<Self> {
        let synthetic = match &manifest.synthetic {
            Some(s) => Some(SynthRuntime {
                world: gen_world(s.world.clone())?,
                images: s.images.clone(),
                cluster: s.clustered_crops,
            }),
            None => None,
        };
        Ok(Self { manifest, images, texts, synthetic })
    }

    /// Loads a manifest file (or a directory containing `dataset.json`) and
    /// its archives. Does not validate; see [`Dataset::diagnostics`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = PathBuf::from(path.as_ref());
        if path.is_dir() {
            path = path.join(MANIFEST_NAME);
        }
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let images = read_archive(base.join(&manifest.image_archive))?;
        let texts = read_archive(base.join(&manifest.text_archive))?;
        Self::new(manifest, images, texts)
    }

    /// Writes archives and `dataset.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        write_archive(&self.images, dir.join(&self.manifest.image_archive))?;
        write_archive(&self.texts, dir.join(&self.manifest.text_archive))?;
        let path = dir.join(MANIFEST_NAME);
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        validate_manifest(&self.manifest, &self.images, &self.texts)
    }

    pub fn validated(self) -> Result<Self> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(d.iter().map(ToString::to_string).collect()))
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.manifest.classes.iter().position(|c| c.label == label)
    }

    pub fn image_row(&self, row: usize) -> Result<&[f32]> {
        self.images.row(row).ok_or_else(|| Error::Data(format!("image archive has no row {row}")))
    }

    pub fn text_row(&self, row: usize) -> Result<&[f32]> {
        self.texts.row(row).ok_or_else(|| Error::Data(format!("text archive has no row {row}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (DatasetManifest, EmbeddingArchive, EmbeddingArchive) {
        let mut images = EmbeddingArchive::new(2, true);
        images.push("img0", &[1.0, 0.0]).unwrap();
        images.push("img0/p0", &[0.0, 1.0]).unwrap();
        let mut texts = EmbeddingArchive::new(2, true);
        texts.push("prompt-a", &[1.0, 0.0]).unwrap();
        texts.push("desc-a", &[0.0, 1.0]).unwrap();
        let m = DatasetManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            image_archive: "images".into(),
            text_archive: "texts".into(),
            classes: vec![ClassEntry {
                label: "a".into(),
                prompt: "a photo of a".into(),
                prompt_row: 0,
                extra_prompt_rows: vec![],
                description_rows: vec![DescriptionRow { row: 1, text: "d".into(), source: Source::Cupl }],
            }],
            images: vec![ImageEntry {
                id: "img0".into(),
                truth_label: "a".into(),
                full_row: 0,
                patch_rows: vec![PatchRow { bbox: BoundingBox::FULL, row: 1 }],
            }],
            synthetic: None,
        };
        (m, images, texts)
    }

    #[test]
    fn well_formed_has_no_diagnostics() {
        let (m, i, t) = fixture();
        assert!(validate_manifest(&m, &i, &t).is_empty());
    }

    #[test]
    fn dangling_row_reported_once() {
        let (mut m, i, t) = fixture();
        m.images[0].patch_rows[0].row = 5;
        let d = validate_manifest(&m, &i, &t);
        assert_eq!(d.len(), 1);
        assert!(matches!(d[0], Diagnostic::DanglingRow { row: 5, count: 2, .. }));
    }

    #[test]
    fn missing_label_reported_once() {
        let (mut m, i, t) = fixture();
        m.images[0].truth_label = "zebra".into();
        let d = validate_manifest(&m, &i, &t);
        assert_eq!(d, vec![Diagnostic::LabelMismatch { image: "img0".into(), label: "zebra".into() }]);
    }

    #[test]
    fn duplicate_ids_reported() {
        let (mut m, i, t) = fixture();
        m.images.push(m.images[0].clone());
        let d = validate_manifest(&m, &i, &t);
        assert_eq!(d.len(), 1);
        assert!(d[0].to_string().contains("duplicate image id"));
    }

    #[test]
    fn save_and_load_round_trip() {
        let (m, i, t) = fixture();
        let ds = Dataset::new(m, i, t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.images, ds.images);
        assert!(back.diagnostics().is_empty());
    }
}
