//! Description refinement: near-duplicate removal and label-relevance top-k.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::vector::{cosine, is_unit};
use crate::{Error, Result};

/// Origin of a description text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Cupl,
    DesAttr,
    DistAttr,
    Other,
}

/// Representation used to judge two descriptions redundant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    EmbeddingCosine,
    Tfidf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionCandidate {
    pub text: String,
    pub source: Source,
    pub embedding: Vec<f32>,
}

/// Label prompt and its (unit-norm) text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrompt {
    pub label: String,
    pub prompt_text: String,
    pub embedding: Vec<f32>,
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;

impl LabelPrompt {
    pub fn new(label: impl Into<String>, prompt_text: impl Into<String>, embedding: Vec<f32>) -> Result<Self> {
        if !is_unit(&embedding, UNIT_NORM_TOLERANCE) {
            return Err(invalid!("label prompt embedding is not unit norm"));
        }
        Ok(Self { label: label.into(), prompt_text: prompt_text.into(), embedding })
    }
}

/// One survivor of refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedMember {
    /// Position in the merged input.
    pub index: usize,
    /// 1-based rank by label cosine among the deduplicated candidates.
    pub rank: usize,
    pub label_cosine: f64,
}

/// Refined description pool for one label. Members keep input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionSet {
    pub label: String,
    pub members: Vec<RefinedMember>,
    /// Indices that survived deduplication, before top-k.
    pub deduplicated: Vec<usize>,
    pub dedup_threshold: f64,
    pub k: usize,
    pub dedup_mode: DedupMode,
}

impl DescriptionSet {
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|m| m.index)
    }
}

/// True iff every pool embedding has cosine `< s_th` with the candidate.
pub fn cs_accept<E: AsRef<[f32]>>(candidate: &[f32], pool: &[E], s_th: f64) -> Result<bool> {
    for p in pool {
        if cosine(p.as_ref(), candidate)? >= s_th {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Greedy forward pass: keeps `i` iff `similarity(j, i) < threshold` for
/// every previously kept `j`. Representation-agnostic.
pub fn greedy_dedup<F>(n: usize, threshold: f64, mut similarity: F) -> Result<Vec<usize>>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let mut kept: Vec<usize> = Vec::new();
    'outer: for i in 0..n {
        for &j in &kept {
            if similarity(j, i)? >= threshold {
                continue 'outer;
            }
        }
        kept.push(i);
    }
    Ok(kept)
}

/// Pairwise similarity under a dedup mode, precomputed for a candidate list.
pub struct Similarity {
    mode: DedupMode,
    tfidf: Option<TfidfVectors>,
}

impl Similarity {
    pub fn new(candidates: &[DescriptionCandidate], mode: DedupMode) -> Result<Self> {
        let tfidf = match mode {
            DedupMode::EmbeddingCosine => None,
            DedupMode::Tfidf => {
                if candidates.is_empty() {
                    None
                } else {
                    let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
                    Some(tfidf_vectors(&texts)?)
                }
            }
        };
        Ok(Self { mode, tfidf })
    }

    pub fn between(&self, candidates: &[DescriptionCandidate], a: usize, b: usize) -> Result<f64> {
        match (self.mode, &self.tfidf) {
            (DedupMode::Tfidf, Some(t)) => Ok(t.cosine(a, b)),
            _ => cosine(&candidates[a].embedding, &candidates[b].embedding),
        }
    }
}

/// Removes near-duplicates in input order; returns surviving indices.
pub fn dedup_descriptions(candidates: &[DescriptionCandidate], s_th: f64, mode: DedupMode) -> Result<Vec<usize>> {
    let sim = Similarity::new(candidates, mode)?;
    greedy_dedup(candidates.len(), s_th, |a, b| sim.between(candidates, a, b))
}

/// Indices of the `k` embeddings closest to `label`, returned in input
/// order. Ties go to the earlier candidate.
pub fn topk_by_label<E: AsRef<[f32]>>(pool: &[E], label: &[f32], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(invalid!("top-k requires k >= 1"));
    }
    if pool.len() <= k {
        return Ok((0..pool.len()).collect());
    }
    let order = rank_by_label(pool, label)?;
    let mut chosen: Vec<usize> = order.into_iter().take(k).map(|(i, _)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// `(index, cosine)` sorted by descending label cosine, ties by index.
pub fn rank_by_label<E: AsRef<[f32]>>(pool: &[E], label: &[f32]) -> Result<Vec<(usize, f64)>> {
    let mut scored =
        pool.iter().enumerate().map(|(i, e)| cosine(e.as_ref(), label).map(|c| (i, c))).collect::<Result<Vec<_>>>()?;
    // stable: equal cosines keep input order
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}

/// Deduplicate, then keep the top-k by label cosine.
pub fn refine_descriptions(
    merged: &[DescriptionCandidate],
    label: &LabelPrompt,
    s_th: f64,
    k: usize,
    mode: DedupMode,
) -> Result<DescriptionSet> {
    if merged.is_empty() {
        return Err(Error::EmptySet(format!("no candidate descriptions for label '{}'", label.label)));
    }
    if k == 0 {
        return Err(invalid!("top-k requires k >= 1"));
    }
    let deduplicated = dedup_descriptions(merged, s_th, mode)?;
    if deduplicated.is_empty() {
        return Err(Error::EmptySet(format!(
            "deduplication removed every description for '{}' (s_th = {s_th}, mode = {mode:?})",
            label.label
        )));
    }
    let survivors: Vec<&[f32]> = deduplicated.iter().map(|&i| merged[i].embedding.as_slice()).collect();
    let ranked = rank_by_label(&survivors, &label.embedding)?;
    let mut members: Vec<RefinedMember> = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &(local, c))| RefinedMember { index: deduplicated[local], rank: r + 1, label_cosine: c })
        .collect();
    members.sort_unstable_by_key(|m| m.index);
    Ok(DescriptionSet { label: label.label.clone(), members, deduplicated, dedup_threshold: s_th, k, dedup_mode: mode })
}

/// TF-IDF document vectors over a small corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVectors {
    pub vocabulary: Vec<String>,
    /// L2-normalized rows; all-zero for documents without tokens.
    pub vectors: Vec<Vec<f64>>,
    /// Documents that produced no tokens.
    pub empty_docs: Vec<usize>,
}

impl TfidfVectors {
    /// Dot product of two rows. Zero whenever either document is empty.
    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let d: f64 = self.vectors[a].iter().zip(&self.vectors[b]).map(|(x, y)| x * y).sum();
        d.clamp(-1.0, 1.0)
    }
}

/// Lowercase, then split on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

/// `tf = count / |d|`, `idf = ln((1 + D) / (1 + df)) + 1`, rows L2-normalized.
/// Vocabulary is ordered by first appearance.
pub fn tfidf_vectors<S: AsRef<str>>(texts: &[S]) -> Result<TfidfVectors> {
    if texts.is_empty() {
        return Err(invalid!("TF-IDF needs a non-empty corpus"));
    }
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut vocabulary: Vec<String> = Vec::new();
    let mut df: Vec<usize> = Vec::new();
    for doc in &docs {
        let mut seen: Vec<usize> = Vec::new();
        for tok in doc {
            let id = *index.entry(tok.as_str()).or_insert_with(|| {
                vocabulary.push(tok.clone());
                df.push(0);
                vocabulary.len() - 1
            });
            if !seen.contains(&id) {
                seen.push(id);
                df[id] += 1;
            }
        }
    }
    if vocabulary.is_empty() {
        return Err(invalid!("TF-IDF corpus contains no tokens"));
    }
    let n_docs = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| libm::log((1.0 + n_docs) / (1.0 + d as f64)) + 1.0).collect();
    let mut vectors = Vec::with_capacity(docs.len());
    let mut empty_docs = Vec::new();
    for (di, doc) in docs.iter().enumerate() {
        let mut v = alloc::vec![0.0f64; vocabulary.len()];
        if doc.is_empty() {
            empty_docs.push(di);
            vectors.push(v);
            continue;
        }
        for tok in doc {
            v[index[tok.as_str()]] += 1.0;
        }
        let len = doc.len() as f64;
        for (x, w) in v.iter_mut().zip(&idf) {
            *x = *x / len * w;
        }
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        v.iter_mut().for_each(|x| *x /= n);
        vectors.push(v);
    }
    Ok(TfidfVectors { vocabulary, vectors, empty_docs })
}

/// Def.-style check: every pair of `indices` has similarity below `s_th`.
pub fn is_deduplicated(
    candidates: &[DescriptionCandidate],
    indices: &[usize],
    s_th: f64,
    mode: DedupMode,
) -> Result<bool> {
    let sim = Similarity::new(candidates, mode)?;
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            if sim.between(candidates, i, j)? >= s_th {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
