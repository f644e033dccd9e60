//! Synthetic datasets built from the oracle world.

use bifta_core::geometry::{sample_crop, CropWindow};
use bifta_core::rng::{derive_seed, CropRng};
use bifta_core::synth::{
    gen_descriptions, gen_image, gen_part_descriptions, gen_world, oracle_encode_box, WorldParams,
};
use bifta_core::BoundingBox;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::EmbeddingArchive;
use crate::error::Result;
use crate::manifest::{
    ClassEntry, ClusterSpec, Dataset, DatasetManifest, DescriptionRow, ImageEntry, PatchRow, SyntheticSection,
    MANIFEST_FORMAT_VERSION,
};

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub world: WorldParams,
    pub images_per_class: usize,
    /// Probability that an image cell holds a shared (class-neutral) part.
    pub shared_fraction: f64,
    /// Informative descriptions per class.
    pub m_true: usize,
    pub informative_dup_factor: usize,
    pub distractor_count: usize,
    pub description_noise: f64,
    /// Every class gets one description per shared part; classes selected
    /// by `redundant_class_stride` get `redundant_dup_factor` near-copies.
    pub shared_descriptions: bool,
    pub redundant_dup_factor: usize,
    /// Every n-th class (starting at 0) is redundant; 0 disables.
    pub redundant_class_stride: usize,
    pub cluster: ClusterSpec,
    /// Precomputed candidate crops per image.
    pub pool_size: usize,
    pub pool_alpha: f64,
    pub pool_beta: f64,
    pub seed: u64,
}

impl FixtureSpec {
    /// The pinned redundancy fixture: shared background parts, five-fold
    /// duplicated background descriptions on every other class, and ten
    /// clustered crops over the most background-heavy region. Crop noise
    /// scales with inverse area, so small crops carry less signal.
    pub fn redundancy() -> Self {
        let mut world = WorldParams::new(8, 4, 64, 0.2, 2024);
        world.shared_parts = 2;
        world.noise_area_exponent = 1.0;
        world.grid = 4;
        Self {
            world,
            images_per_class: 12,
            shared_fraction: 0.5,
            m_true: 4,
            informative_dup_factor: 1,
            distractor_count: 0,
            description_noise: 0.1,
            shared_descriptions: true,
            redundant_dup_factor: 5,
            redundant_class_stride: 2,
            cluster: ClusterSpec { count: 10, size: 0.5, jitter: 0.01 },
            pool_size: 0,
            pool_alpha: 0.5,
            pool_beta: 0.9,
            seed: 7,
        }
    }

    /// Three classes, orthogonal prototypes, no noise anywhere.
    pub fn separable() -> Self {
        Self {
            world: WorldParams::new(3, 2, 8, 0.0, 11),
            images_per_class: 4,
            shared_fraction: 0.0,
            m_true: 2,
            informative_dup_factor: 1,
            distractor_count: 0,
            description_noise: 0.0,
            shared_descriptions: false,
            redundant_dup_factor: 1,
            redundant_class_stride: 0,
            cluster: ClusterSpec::default(),
            pool_size: 12,
            pool_alpha: 0.5,
            pool_beta: 0.9,
            seed: 3,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "redundancy" => Some(Self::redundancy()),
            "separable" => Some(Self::separable()),
            _ => None,
        }
    }
}

/// Row name for a text: hex SHA-256 of its UTF-8 bytes.
pub fn text_row_name(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

const IMAGE_STREAM: u64 = 0x1;
const POOL_STREAM: u64 = 0x2;
const TEXT_STREAM: u64 = 0x3;

fn push_text(texts: &mut EmbeddingArchive, text: &str, emb: &[f32]) -> Result<usize> {
    let base = text_row_name(text);
    let mut name = base.clone();
    let mut n = 1;
    while texts.position(&name).is_some() {
        name = format!("{base}#{n}");
        n += 1;
    }
    texts.push(name, emb)
}

pub fn build_dataset(spec: &FixtureSpec) -> Result<Dataset> {
    let world = gen_world(spec.world.clone())?;
    let dim = world.params.dim;
    let mut texts = EmbeddingArchive::new(dim, true);
    let mut images = EmbeddingArchive::new(dim, true);
    let mut classes = Vec::new();
    let text_seed = derive_seed(spec.seed, TEXT_STREAM);
    for c in 0..world.params.classes {
        let label = format!("class_{c:02}");
        let prompt = format!("This is a photo of a {label}.");
        let prompt_row = push_text(&mut texts, &prompt, &world.label_embedding(c))?;
        let mut descs = gen_descriptions(
            &world,
            c,
            spec.m_true,
            spec.informative_dup_factor,
            spec.distractor_count,
            spec.description_noise,
            text_seed,
        )?;
        if spec.shared_descriptions {
            let redundant = spec.redundant_class_stride > 0 && c % spec.redundant_class_stride == 0;
            let copies = if redundant { spec.redundant_dup_factor } else { 1 };
            for s in 0..world.params.shared_parts {
                descs.extend(gen_part_descriptions(
                    &world,
                    c,
                    world.shared_part(s),
                    copies,
                    spec.description_noise,
                    derive_seed(text_seed, c as u64),
                )?);
            }
        }
        CropRng::derived(text_seed, 1000 + c as u64).shuffle(&mut descs);
        let mut description_rows = Vec::with_capacity(descs.len());
        for d in descs {
            let row = push_text(&mut texts, &d.text, &d.embedding)?;
            description_rows.push(DescriptionRow { row, text: d.text, source: d.source });
        }
        classes.push(ClassEntry { label, prompt, prompt_row, extra_prompt_rows: Vec::new(), description_rows });
    }

    let pool_window = CropWindow::new(spec.pool_alpha, spec.pool_beta)?;
    let mut entries = Vec::new();
    let mut synth_images = Vec::new();
    let mut idx = 0u64;
    for (c, class) in classes.iter().enumerate() {
        for _ in 0..spec.images_per_class {
            let img = gen_image(&world, c, spec.shared_fraction, derive_seed(spec.seed ^ IMAGE_STREAM, idx))?;
            let id = format!("img_{idx:05}");
            let full_row = images.push(id.clone(), &oracle_encode_box(&world, &img, &BoundingBox::FULL))?;
            let mut rng = CropRng::derived(derive_seed(spec.seed, POOL_STREAM), idx);
            let mut patch_rows = Vec::with_capacity(spec.pool_size);
            for p in 0..spec.pool_size {
                let b = sample_crop(&mut rng, &pool_window);
                let row = images.push(format!("{id}/crop_{p:04}"), &oracle_encode_box(&world, &img, &b))?;
                patch_rows.push(PatchRow { bbox: b, row });
            }
            entries.push(ImageEntry { id, truth_label: class.label.clone(), full_row, patch_rows });
            synth_images.push(img);
            idx += 1;
        }
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        image_archive: "images".into(),
        text_archive: "texts".into(),
        classes,
        images: entries,
        synthetic: Some(SyntheticSection {
            world: spec.world.clone(),
            images: synth_images,
            clustered_crops: spec.cluster,
        }),
    };
    Dataset::new(manifest, images, texts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        for spec in [FixtureSpec::separable(), FixtureSpec::redundancy()] {
            let ds = build_dataset(&spec).unwrap();
            assert!(ds.diagnostics().is_empty(), "{:?}", ds.diagnostics());
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_dataset(&FixtureSpec::separable()).unwrap();
        let b = build_dataset(&FixtureSpec::separable()).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.images, b.images);
        assert_eq!(a.texts, b.texts);
    }

    #[test]
    fn redundant_classes_carry_extra_copies() {
        let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
        let count = |c: usize| ds.manifest.classes[c].description_rows.len();
        // 4 informative + 2 shared parts x 5 copies vs x 1
        assert_eq!(count(0), 14);
        assert_eq!(count(1), 6);
    }

    #[test]
    fn text_names_are_sha256() {
        assert_eq!(text_row_name("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
