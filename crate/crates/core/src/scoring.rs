//! Similarity, softmax weighting, weighted cross-alignment and baselines.
//!
//! All classifiers rank on untempered scores and divide by the temperature
//! afterwards, so rankings do not depend on `tau`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::vector::{cosine, is_unit, normalized};
use crate::{Error, Result};

/// Positive temperature dividing cosine similarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid!("temperature must be positive and finite, got {tau}"));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(0.01)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Temperature::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Softmax-normalized weights. Entries are positive and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Row-major `n × m` view-by-description similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("score matrix has non-finite entries"));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds `S[i][j] = clip_sim(views[i], descs[j], tau)`.
    pub fn from_embeddings<V: AsRef<[f32]>, D: AsRef<[f32]>>(
        views: &[V],
        descs: &[D],
        tau: Temperature,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(views.len() * descs.len());
        for v in views {
            for d in descs {
                values.push(clip_sim(v.as_ref(), d.as_ref(), tau)?);
            }
        }
        Self::new(views.len(), descs.len(), values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Ranked class entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub score: f64,
    pub prob: f64,
}

/// `cos(z_img, z_txt) / tau`. Off-unit inputs are renormalized (the cosine
/// does so implicitly) with a warning.
pub fn clip_sim(z_img: &[f32], z_txt: &[f32], tau: Temperature) -> Result<f64> {
    warn_if_not_unit(z_img);
    warn_if_not_unit(z_txt);
    Ok(cosine(z_img, z_txt)? / tau.0)
}

fn warn_if_not_unit(v: &[f32]) {
    if !is_unit(v, crate::text::UNIT_NORM_TOLERANCE) {
        log::warn!("embedding of norm {} is not unit length; renormalizing", crate::vector::norm(v));
    }
}

/// Max-shifted softmax.
pub fn softmax(values: &[f64]) -> Result<WeightVector> {
    if values.is_empty() {
        return Err(invalid!("softmax of an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("softmax input has non-finite entries"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    Ok(WeightVector(exps.into_iter().map(|e| e / total).collect()))
}

fn anchor_weights<E: AsRef<[f32]>>(anchor: &[f32], items: &[E]) -> Result<WeightVector> {
    if items.is_empty() {
        return Err(invalid!("weights need at least one embedding"));
    }
    let cos = items.iter().map(|e| cosine(anchor, e.as_ref())).collect::<Result<Vec<_>>>()?;
    softmax(&cos)
}

/// Patch weights: softmax of cosine to the full-image embedding.
pub fn view_weights<E: AsRef<[f32]>>(orig_emb: &[f32], patch_embs: &[E]) -> Result<WeightVector> {
    anchor_weights(orig_emb, patch_embs)
}

/// Description weights: softmax of cosine to the label prompt embedding.
pub fn desc_weights<E: AsRef<[f32]>>(label_emb: &[f32], desc_embs: &[E]) -> Result<WeightVector> {
    anchor_weights(label_emb, desc_embs)
}

/// Bilinear form `wᵀ S v`.
pub fn wca_score(s: &ScoreMatrix, w: &WeightVector, v: &WeightVector) -> Result<f64> {
    if w.len() != s.rows || v.len() != s.cols {
        return Err(Error::Shape(format!(
            "weights {}x{} do not match a {}x{} score matrix",
            w.len(),
            v.len(),
            s.rows,
            s.cols
        )));
    }
    Ok(w.0
        .iter()
        .enumerate()
        .map(|(i, wi)| wi * s.row(i).iter().zip(&v.0).map(|(sij, vj)| sij * vj).sum::<f64>())
        .sum())
}

/// Ranks raw (untempered) scores descending, ties by class order, and attaches
/// tempered scores plus their softmax.
fn rank(raw: &[f64], tau: Temperature) -> Result<Vec<ClassScore>> {
    let scores: Vec<f64> = raw.iter().map(|r| r / tau.0).collect();
    let probs = softmax(&scores)?.0;
    let mut out: Vec<ClassScore> =
        (0..raw.len()).map(|c| ClassScore { class: c, score: scores[c], prob: probs[c] }).collect();
    out.sort_by(|a, b| raw[b.class].total_cmp(&raw[a.class]));
    Ok(out)
}

/// Per-class evidence for [`classify_wca`].
#[derive(Debug, Clone)]
pub struct ClassEvidence<'a> {
    pub label_emb: &'a [f32],
    pub desc_embs: Vec<&'a [f32]>,
}

/// Weighted cross-alignment classifier.
///
/// View weights are computed once; description weights and the score matrix
/// per class. Returned scores equal `wca_score` on the tempered matrix.
pub fn classify_wca<E: AsRef<[f32]>>(
    patch_embs: &[E],
    orig_emb: &[f32],
    per_class: &[ClassEvidence<'_>],
    tau: Temperature,
) -> Result<Vec<ClassScore>> {
    if patch_embs.is_empty() {
        return Err(invalid!("classify_wca needs at least one patch"));
    }
    if per_class.is_empty() {
        return Err(invalid!("classify_wca needs at least one class"));
    }
    let w = view_weights(orig_emb, patch_embs)?;
    let unit_tau = Temperature(1.0);
    let mut raw = Vec::with_capacity(per_class.len());
    for (c, ev) in per_class.iter().enumerate() {
        if ev.desc_embs.is_empty() {
            return Err(Error::DegenerateClass { class: c, reason: "no descriptions".into() });
        }
        let v = desc_weights(ev.label_emb, &ev.desc_embs)?;
        let s = ScoreMatrix::from_embeddings(patch_embs, &ev.desc_embs, unit_tau)?;
        raw.push(wca_score(&s, &w, &v)?);
    }
    rank(&raw, tau)
}

/// Plain zero-shot classifier: argmax of `clip_sim` to each label embedding.
pub fn classify_clip<E: AsRef<[f32]>>(img_emb: &[f32], label_embs: &[E], tau: Temperature) -> Result<Vec<ClassScore>> {
    if label_embs.is_empty() {
        return Err(invalid!("classify_clip needs at least one label"));
    }
    let raw = label_embs.iter().map(|l| cosine(img_emb, l.as_ref())).collect::<Result<Vec<_>>>()?;
    rank(&raw, tau)
}

/// Mean of a class's prompt embeddings, renormalized.
pub fn ensemble_embedding<E: AsRef<[f32]>>(class: usize, prompts: &[E]) -> Result<Vec<f32>> {
    let first =
        prompts.first().ok_or_else(|| Error::DegenerateClass { class, reason: "no prompt embeddings".into() })?;
    let dim = first.as_ref().len();
    let mut mean = alloc::vec![0.0f64; dim];
    for p in prompts {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: p.len() });
        }
        let n = crate::vector::norm(p);
        if n == 0.0 {
            return Err(Error::DegenerateClass { class, reason: "zero prompt embedding".into() });
        }
        for (m, x) in mean.iter_mut().zip(p) {
            *m += *x as f64 / n;
        }
    }
    let scale = prompts.len() as f64;
    mean.iter_mut().for_each(|m| *m /= scale);
    normalized(&mean).ok_or_else(|| Error::DegenerateClass { class, reason: "prompt embeddings cancel out".into() })
}

/// Prompt-ensemble baseline.
pub fn classify_ensemble<E: AsRef<[f32]>>(
    img_emb: &[f32],
    per_class_prompts: &[Vec<E>],
    tau: Temperature,
) -> Result<Vec<ClassScore>> {
    let labels =
        per_class_prompts.iter().enumerate().map(|(c, p)| ensemble_embedding(c, p)).collect::<Result<Vec<_>>>()?;
    classify_clip(img_emb, &labels, tau)
}

/// Description-averaging baseline: class score is the mean `clip_sim` over
/// its descriptions.
pub fn classify_desc_avg<E: AsRef<[f32]>>(
    img_emb: &[f32],
    per_class_descs: &[Vec<E>],
    tau: Temperature,
) -> Result<Vec<ClassScore>> {
    if per_class_descs.is_empty() {
        return Err(invalid!("classify_desc_avg needs at least one class"));
    }
    let mut raw = Vec::with_capacity(per_class_descs.len());
    for (c, descs) in per_class_descs.iter().enumerate() {
        if descs.is_empty() {
            return Err(Error::DegenerateClass { class: c, reason: "no descriptions".into() });
        }
        let total = descs.iter().map(|d| cosine(img_emb, d.as_ref())).sum::<Result<f64>>()?;
        raw.push(total / descs.len() as f64);
    }
    rank(&raw, tau)
}

/// Embedding-space view filter: accept iff every pool cosine is `< threshold`.
pub fn clip_vr_accept<E: AsRef<[f32]>>(candidate_emb: &[f32], pool_embs: &[E], threshold: f64) -> Result<bool> {
    crate::text::cs_accept(candidate_emb, pool_embs, threshold)
}
