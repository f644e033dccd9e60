//! Standalone description refinement over JSON pools.
//!
//! Input is one pool object or an array of them:
//!
//! ```json
//! {"label": "fox", "prompt": "This is a photo of a fox.",
//!  "descriptions": [{"text": "orange fur", "source": "cupl"}]}
//! ```
//!
//! Embeddings come from a text archive, looked up by the SHA-256 row name of
//! the text or by the text itself. Without an archive only TF-IDF refinement
//! is available, and label relevance is the TF-IDF cosine with the prompt.

use bifta_core::text::{refine_descriptions, tfidf_vectors};
use bifta_core::vector::normalized;
use bifta_core::{DedupMode, DescriptionCandidate, LabelPrompt, Source};
use serde::{Deserialize, Serialize};

use crate::archive::EmbeddingArchive;
use crate::error::{Error, Result};
use crate::fixture::text_row_name;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub text: String,
    #[serde(default = "default_source")]
    pub source: Source,
}

fn default_source() -> Source {
    Source::Other
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionPool {
    pub label: String,
    pub prompt: String,
    pub descriptions: Vec<PoolEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedEntry {
    pub text: String,
    pub source: Source,
    pub survived_dedup: bool,
    pub kept: bool,
    /// 1-based rank by label relevance among deduplicated entries.
    pub rank: Option<usize>,
    pub label_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPool {
    pub label: String,
    pub prompt: String,
    pub dedup_mode: DedupMode,
    pub s_th: f64,
    pub k: usize,
    pub descriptions: Vec<RefinedEntry>,
}

/// Accepts a single pool object or an array of pools.
pub fn parse_pools(json: &[u8]) -> Result<Vec<DescriptionPool>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<DescriptionPool>),
        One(DescriptionPool),
    }
    match serde_json::from_slice(json) {
        Ok(OneOrMany::Many(v)) => Ok(v),
        Ok(OneOrMany::One(p)) => Ok(vec![p]),
        Err(e) => Err(Error::Data(format!("description pool JSON: {e}"))),
    }
}

fn lookup<'a>(archive: &'a EmbeddingArchive, text: &str) -> Result<&'a [f32]> {
    archive
        .position(&text_row_name(text))
        .or_else(|| archive.position(text))
        .and_then(|i| archive.row(i))
        .ok_or_else(|| Error::Data(format!("no embedding for text '{text}'")))
}

/// Embeddings for the prompt and every description, in that order.
fn embeddings(pool: &DescriptionPool, archive: Option<&EmbeddingArchive>) -> Result<Vec<Vec<f32>>> {
    let texts = std::iter::once(&pool.prompt).chain(pool.descriptions.iter().map(|d| &d.text));
    match archive {
        Some(a) => texts.map(|t| lookup(a, t).map(<[f32]>::to_vec)).collect(),
        None => {
            let texts: Vec<&str> = texts.map(String::as_str).collect();
            let tf = tfidf_vectors(&texts)?;
            tf.vectors
                .iter()
                .zip(&texts)
                .map(|(v, t)| normalized(v).ok_or_else(|| Error::Data(format!("text '{t}' has no tokens"))))
                .collect()
        }
    }
}

pub fn refine_pool(
    pool: &DescriptionPool,
    archive: Option<&EmbeddingArchive>,
    s_th: f64,
    k: usize,
    mode: DedupMode,
) -> Result<RefinedPool> {
    if archive.is_none() && mode == DedupMode::EmbeddingCosine {
        return Err(Error::Config("embedding-cosine refinement needs a text archive".into()));
    }
    let mut embs = embeddings(pool, archive)?.into_iter();
    let label = LabelPrompt::new(&pool.label, &pool.prompt, embs.next().expect("prompt embedding"))?;
    let candidates: Vec<DescriptionCandidate> = pool
        .descriptions
        .iter()
        .zip(embs)
        .map(|(d, embedding)| DescriptionCandidate { text: d.text.clone(), source: d.source, embedding })
        .collect();
    let set = refine_descriptions(&candidates, &label, s_th, k, mode)?;
    let mut out: Vec<RefinedEntry> = pool
        .descriptions
        .iter()
        .map(|d| RefinedEntry {
            text: d.text.clone(),
            source: d.source,
            survived_dedup: false,
            kept: false,
            rank: None,
            label_cosine: None,
        })
        .collect();
    for &i in &set.deduplicated {
        out[i].survived_dedup = true;
    }
    let survivors: Vec<&[f32]> = set.deduplicated.iter().map(|&i| candidates[i].embedding.as_slice()).collect();
    for (r, (local, c)) in bifta_core::text::rank_by_label(&survivors, &label.embedding)?.into_iter().enumerate() {
        let e = &mut out[set.deduplicated[local]];
        e.rank = Some(r + 1);
        e.label_cosine = Some(c);
    }
    for m in &set.members {
        out[m.index].kept = true;
    }
    Ok(RefinedPool {
        label: pool.label.clone(),
        prompt: pool.prompt.clone(),
        dedup_mode: mode,
        s_th,
        k,
        descriptions: out,
    })
}
