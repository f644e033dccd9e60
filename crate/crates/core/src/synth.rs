//! Synthetic part-prototype world with an analytic encoder.
//!
//! Each class owns `parts_per_class` orthonormal prototypes; `shared_parts`
//! further prototypes are common to all classes and carry no class signal.
//! An image is a `grid × grid` field of part indices, and encoding a box
//! returns the overlap-weighted mean of the covered prototypes plus Gaussian
//! noise, renormalized.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::geometry::BoundingBox;
use crate::rng::{mix64, CropRng};
use crate::text::{DescriptionCandidate, Source};
use crate::vector::normalized;
use crate::Result;

/// Parameters that fully determine a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub classes: usize,
    pub parts_per_class: usize,
    #[serde(default)]
    pub shared_parts: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    /// Noise std grows as `area^-noise_area_exponent` for a box of the given
    /// area; 0 keeps it constant.
    #[serde(default)]
    pub noise_area_exponent: f64,
    /// Part-field resolution of generated images.
    #[serde(default = "default_grid")]
    pub grid: usize,
    pub seed: u64,
}

fn default_grid() -> usize {
    4
}

impl WorldParams {
    pub fn new(classes: usize, parts_per_class: usize, dim: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            classes,
            parts_per_class,
            shared_parts: 0,
            dim,
            noise_sigma,
            noise_area_exponent: 0.0,
            grid: default_grid(),
            seed,
        }
    }

    pub fn total_parts(&self) -> usize {
        self.classes * self.parts_per_class + self.shared_parts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub params: WorldParams,
    /// Class parts first (`class * P + j`), then shared parts.
    pub prototypes: Vec<Vec<f64>>,
    /// Largest |cosine| between distinct prototypes after construction.
    pub max_abs_cosine: f64,
}

/// Draws Gaussian vectors and orthonormalizes them (two Gram-Schmidt passes).
pub fn gen_world(params: WorldParams) -> Result<SynthWorld> {
    let n = params.total_parts();
    if params.classes == 0 || params.parts_per_class == 0 {
        return Err(invalid!("world needs at least one class and one part per class"));
    }
    if params.dim < n {
        return Err(invalid!("dimension {} is smaller than the {} prototypes requested", params.dim, n));
    }
    if params.grid == 0 || params.noise_sigma.is_nan() || params.noise_sigma < 0.0 {
        return Err(invalid!("grid must be >= 1 and noise_sigma >= 0"));
    }
    let mut rng = CropRng::new(mix64(params.seed ^ 0x0077_6f72_6c64));
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(n);
    while protos.len() < n {
        let mut v: Vec<f64> = (0..params.dim).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for p in &protos {
                let d: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(p).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        protos.push(v);
    }
    let mut max_abs_cosine: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = protos[i].iter().zip(&protos[j]).map(|(a, b)| a * b).sum();
            max_abs_cosine = max_abs_cosine.max(d.abs());
        }
    }
    Ok(SynthWorld { params, prototypes: protos, max_abs_cosine })
}

impl SynthWorld {
    pub fn class_part(&self, class: usize, j: usize) -> usize {
        class * self.params.parts_per_class + j
    }

    pub fn shared_part(&self, s: usize) -> usize {
        self.params.classes * self.params.parts_per_class + s
    }

    pub fn is_shared(&self, part: usize) -> bool {
        part >= self.params.classes * self.params.parts_per_class
    }

    /// Unit prototype of a part, as `f32`.
    pub fn prototype(&self, part: usize) -> Vec<f32> {
        self.prototypes[part].iter().map(|&x| x as f32).collect()
    }

    /// Normalized mean of the class's own prototypes.
    pub fn label_embedding(&self, class: usize) -> Vec<f32> {
        let mut m = alloc::vec![0.0; self.params.dim];
        for j in 0..self.params.parts_per_class {
            for (a, b) in m.iter_mut().zip(&self.prototypes[self.class_part(class, j)]) {
                *a += b;
            }
        }
        normalized(&m).expect("orthonormal prototypes have a nonzero mean")
    }
}

/// A generated image: a part index per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthImage {
    pub class_id: usize,
    pub grid: usize,
    /// Row-major, `grid * grid` entries.
    pub part_field: Vec<usize>,
    pub seed: u64,
}

impl SynthImage {
    pub fn cell_box(&self, cell: usize) -> BoundingBox {
        let g = self.grid as f64;
        let (r, c) = (cell / self.grid, cell % self.grid);
        let edge = |i: usize| if i == self.grid { 1.0 } else { i as f64 / g };
        BoundingBox::new(edge(c), edge(r), edge(c + 1), edge(r + 1)).expect("grid cells are valid boxes")
    }
}

/// Draws an image of `class_id`. Each cell independently holds a shared part
/// with probability `shared_fraction` (if the world has any), otherwise a
/// uniformly chosen part of the class.
pub fn gen_image(world: &SynthWorld, class_id: usize, shared_fraction: f64, seed: u64) -> Result<SynthImage> {
    if class_id >= world.params.classes {
        return Err(invalid!("class {class_id} out of range"));
    }
    if !(0.0..=1.0).contains(&shared_fraction) {
        return Err(invalid!("shared_fraction must lie in [0, 1]"));
    }
    let g = world.params.grid;
    let mut rng = CropRng::new(mix64(seed ^ 0x0069_6d61_6765));
    let part_field = (0..g * g)
        .map(|_| {
            let u = rng.next_unit();
            if world.params.shared_parts > 0 && u < shared_fraction {
                world.shared_part(rng.below(world.params.shared_parts))
            } else {
                world.class_part(class_id, rng.below(world.params.parts_per_class))
            }
        })
        .collect();
    Ok(SynthImage { class_id, grid: g, part_field, seed })
}

fn box_seed(world: &SynthWorld, image: &SynthImage, b: &BoundingBox) -> u64 {
    b.to_array().iter().fold(mix64(world.params.seed ^ mix64(image.seed)), |h, x| mix64(h ^ x.to_bits()))
}

/// Analytic encoder for a crop of `image`.
pub fn oracle_encode_box(world: &SynthWorld, image: &SynthImage, b: &BoundingBox) -> Vec<f32> {
    let dim = world.params.dim;
    let mut acc = alloc::vec![0.0f64; dim];
    let mut total = 0.0;
    for (cell, &part) in image.part_field.iter().enumerate() {
        let a = image.cell_box(cell).intersection_area(b);
        if a > 0.0 {
            total += a;
            acc.iter_mut().zip(&world.prototypes[part]).for_each(|(x, p)| *x += a * p);
        }
    }
    acc.iter_mut().for_each(|x| *x /= total);
    let mut sigma = world.params.noise_sigma;
    if world.params.noise_area_exponent != 0.0 {
        sigma *= libm::pow(b.area(), -world.params.noise_area_exponent);
    }
    if sigma > 0.0 {
        let mut rng = CropRng::new(box_seed(world, image, b));
        acc.iter_mut().for_each(|x| *x += sigma * rng.normal());
    }
    normalized(&acc).unwrap_or_else(|| world.prototype(image.part_field[0]))
}

fn noisy_unit(rng: &mut CropRng, base: &[f64], sigma: f64) -> Vec<f64> {
    let v: Vec<f64> = base.iter().map(|x| x + sigma * rng.normal()).collect();
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    v.into_iter().map(|x| x / n).collect()
}

/// Byte-distinct rewrites of a text that tokenize identically.
fn variant(text: &str, r: usize) -> String {
    if r == 0 {
        return String::from(text);
    }
    let mut s = String::from(text);
    for _ in 0..r {
        s.push('.');
    }
    s
}

/// Near-duplicate perturbation: cosine to the base stays above 0.999.
const DUPLICATE_SIGMA: f64 = 1e-3;

fn emit_with_duplicates(
    out: &mut Vec<DescriptionCandidate>,
    rng: &mut CropRng,
    text: &str,
    base: &[f64],
    copies: usize,
    source: Source,
) {
    let dim = base.len() as f64;
    for r in 0..copies.max(1) {
        let emb = if r == 0 { base.to_vec() } else { noisy_unit(rng, base, DUPLICATE_SIGMA / libm::sqrt(dim)) };
        out.push(DescriptionCandidate {
            text: variant(text, r),
            source,
            embedding: emb.iter().map(|&x| x as f32).collect(),
        });
    }
}

/// Candidate descriptions for one class.
///
/// `m_true` informative descriptions are noisy copies of the class prototypes
/// (cycling over parts), each emitted `dup_factor` times as near-duplicates.
/// `distractor_count` random vectors orthogonal to the class's prototypes are
/// added, and the list is shuffled by `seed`.
pub fn gen_descriptions(
    world: &SynthWorld,
    class_id: usize,
    m_true: usize,
    dup_factor: usize,
    distractor_count: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<DescriptionCandidate>> {
    if m_true == 0 {
        return Err(invalid!("m_true must be at least 1"));
    }
    if class_id >= world.params.classes {
        return Err(invalid!("class {class_id} out of range"));
    }
    let p = world.params.parts_per_class;
    let sources = [Source::Cupl, Source::DesAttr, Source::DistAttr];
    let mut rng = CropRng::new(mix64(seed ^ mix64(class_id as u64) ^ 0x6465_7363));
    let mut out = Vec::new();
    for i in 0..m_true {
        let part = world.class_part(class_id, i % p);
        let base = noisy_unit(&mut rng, &world.prototypes[part], noise_sigma);
        let text = format!("class {class_id} shows part {part} with detail {i}");
        emit_with_duplicates(&mut out, &mut rng, &text, &base, dup_factor, sources[i % sources.len()]);
    }
    let own: Vec<&Vec<f64>> = (0..p).map(|j| &world.prototypes[world.class_part(class_id, j)]).collect();
    for j in 0..distractor_count {
        let mut v: Vec<f64> = (0..world.params.dim).map(|_| rng.normal()).collect();
        for q in &own {
            let d: f64 = v.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q.iter()).for_each(|(a, b)| *a -= d * b);
        }
        let emb = normalized(&v).ok_or_else(|| invalid!("degenerate distractor"))?;
        out.push(DescriptionCandidate {
            text: format!("unrelated remark {j} on class {class_id}"),
            source: Source::Other,
            embedding: emb,
        });
    }
    rng.shuffle(&mut out);
    Ok(out)
}

/// `copies` near-duplicate descriptions of a single part, attributed to a
/// class. Used to model redundant, uninformative text.
pub fn gen_part_descriptions(
    world: &SynthWorld,
    class_id: usize,
    part: usize,
    copies: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<DescriptionCandidate>> {
    if part >= world.prototypes.len() {
        return Err(invalid!("part {part} out of range"));
    }
    let mut rng = CropRng::new(mix64(seed ^ mix64(part as u64) ^ 0x7061_7274));
    let base = noisy_unit(&mut rng, &world.prototypes[part], noise_sigma);
    let mut out = Vec::new();
    let text = format!("class {class_id} is seen with common part {part}");
    emit_with_duplicates(&mut out, &mut rng, &text, &base, copies, Source::Other);
    Ok(out)
}
