//! Experiment runner: views, description refinement, scoring, accuracy.
//!
//! Every stochastic step draws from a stream derived from `(seed, index)`:
//! image `i` under seed `s` uses `CropRng::derived(s, i)` for its crops, and
//! class `c` uses a separate derived stream to shuffle its description pool
//! before refinement. Results therefore do not depend on evaluation order.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use bifta_core::geometry::{admit_until_full, grid_boxes, iou, sample_crop, Admitted};
use bifta_core::rng::{derive_seed, CropRng};
use bifta_core::scoring::{
    classify_clip, classify_desc_avg, classify_ensemble, classify_wca, clip_vr_accept, ClassEvidence,
};
use bifta_core::synth::{oracle_encode_box, SynthImage};
use bifta_core::text::refine_descriptions;
use bifta_core::{BoundingBox, ClassScore, CropWindow, DedupMode, DescriptionCandidate, LabelPrompt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DrStrategy, ExperimentConfig, Mode, ViewSource, VrStrategy};
use crate::error::{Error, Result};
use crate::manifest::{Dataset, PatchRow, SynthRuntime};

pub const REPORT_FORMAT_VERSION: u32 = 1;
const DESCRIPTION_STREAM: u64 = 0x6465_7363_7269_7074;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub images: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FallbackStats {
    pub queues: usize,
    pub queues_with_fallback: usize,
    pub total_fallback: usize,
    pub mean_attempts: f64,
}

/// Wall-clock totals summed over all images and seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub descriptions_ms: f64,
    pub views_ms: f64,
    pub scoring_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub images: usize,
    pub classes: usize,
    pub seeds: Vec<u64>,
    pub per_seed_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub per_class_accuracy: Vec<ClassAccuracy>,
    pub fallback: FallbackStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: String,
    pub wca: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub label: String,
    pub prob: f64,
}

/// One JSON-lines record per image and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub seed: u64,
    pub image: String,
    pub truth: String,
    pub predicted: String,
    pub correct: bool,
    pub ranked: Vec<RankedLabel>,
    pub top10: Vec<TopEntry>,
    pub fallback_count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub timing: bool,
    pub predictions: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub predictions: Vec<Prediction>,
}

/// Description material for one class under one seed.
#[derive(Debug, Clone)]
pub struct ClassSet {
    pub label_emb: Vec<f32>,
    pub prompts: Vec<Vec<f32>>,
    pub descs: Vec<Vec<f32>>,
}

/// Views for one image under one seed.
#[derive(Debug, Clone)]
pub struct ImageViews {
    pub boxes: Vec<BoundingBox>,
    pub embs: Vec<Vec<f32>>,
    pub full: Vec<f32>,
    pub fallback_count: usize,
    pub attempts_used: usize,
}

fn dedup_mode(s: DrStrategy) -> Option<DedupMode> {
    match s {
        DrStrategy::EmbedCosine => Some(DedupMode::EmbeddingCosine),
        DrStrategy::Tfidf => Some(DedupMode::Tfidf),
        DrStrategy::None => None,
    }
}

/// Builds the (shuffled, optionally refined) description set of every class.
pub fn prepare_classes(config: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<Vec<ClassSet>> {
    let refine = if config.mode.refines_descriptions() { dedup_mode(config.dr_strategy) } else { None };
    let needs_descs = !matches!(config.mode, Mode::Clip | Mode::ClipE);
    let desc_seed = derive_seed(seed, DESCRIPTION_STREAM);
    ds.manifest
        .classes
        .par_iter()
        .enumerate()
        .map(|(c, class)| {
            let label_emb = ds.text_row(class.prompt_row)?.to_vec();
            let mut prompts = vec![label_emb.clone()];
            for &r in &class.extra_prompt_rows {
                prompts.push(ds.text_row(r)?.to_vec());
            }
            let mut pool = class
                .description_rows
                .iter()
                .filter(|d| config.sources.is_empty() || config.sources.contains(&d.source))
                .map(|d| {
                    Ok(DescriptionCandidate {
                        text: d.text.clone(),
                        source: d.source,
                        embedding: ds.text_row(d.row)?.to_vec(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if needs_descs && pool.is_empty() {
                return Err(Error::Data(format!("class '{}' has no descriptions after source filtering", class.label)));
            }
            CropRng::derived(desc_seed, c as u64).shuffle(&mut pool);
            let descs = match refine {
                Some(mode) if needs_descs => {
                    let prompt = LabelPrompt::new(&class.label, &class.prompt, label_emb.clone())?;
                    let set = refine_descriptions(&pool, &prompt, config.s_th, config.k, mode)?;
                    set.indices().map(|i| pool[i].embedding.clone()).collect()
                }
                _ => pool.into_iter().map(|d| d.embedding).collect(),
            };
            Ok(ClassSet { label_emb, prompts, descs })
        })
        .collect()
}

/// Candidate crops for one image, in draw order.
enum Candidates<'a> {
    Oracle { rng: Box<CropRng>, window: CropWindow, head: VecDeque<BoundingBox> },
    Pool { rows: &'a [PatchRow], order: Vec<usize>, pos: usize },
}

impl Candidates<'_> {
    fn next(&mut self) -> Option<(BoundingBox, Option<usize>)> {
        match self {
            Candidates::Oracle { rng, window, head } => {
                Some((head.pop_front().unwrap_or_else(|| sample_crop(rng, window)), None))
            }
            Candidates::Pool { rows, order, pos } => {
                let r = rows[*order.get(*pos)?];
                *pos += 1;
                Some((r.bbox, Some(r.row)))
            }
        }
    }
}

/// Clustered crops over the `size × size` window with the most shared-part
/// area, each offset by at most `jitter` per axis.
pub fn cluster_boxes(rt: &SynthRuntime, img: &SynthImage, rng: &mut CropRng) -> Vec<BoundingBox> {
    let spec = rt.cluster;
    if spec.count == 0 || !(spec.size > 0.0 && spec.size <= 1.0) {
        return Vec::new();
    }
    let steps = img.grid * 4;
    let span = 1.0 - spec.size;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=steps {
        for j in 0..=steps {
            let (x0, y0) = (span * j as f64 / steps as f64, span * i as f64 / steps as f64);
            let Ok(b) = BoundingBox::new(x0, y0, (x0 + spec.size).min(1.0), (y0 + spec.size).min(1.0)) else {
                continue;
            };
            let shared: f64 = img
                .part_field
                .iter()
                .enumerate()
                .filter(|(_, &p)| rt.world.is_shared(p))
                .map(|(cell, _)| img.cell_box(cell).intersection_area(&b))
                .sum();
            if shared > best.0 {
                best = (shared, x0, y0);
            }
        }
    }
    (0..spec.count)
        .map(|_| {
            let x0 = (best.1 + rng.uniform(-spec.jitter, spec.jitter)).clamp(0.0, span);
            let y0 = (best.2 + rng.uniform(-spec.jitter, spec.jitter)).clamp(0.0, span);
            BoundingBox::new(x0, y0, (x0 + spec.size).min(1.0), (y0 + spec.size).min(1.0))
                .expect("cluster box stays inside the frame")
        })
        .collect()
}

fn use_oracle<'a>(config: &ExperimentConfig, ds: &'a Dataset) -> Result<Option<&'a SynthRuntime>> {
    match (config.view_source, &ds.synthetic) {
        (ViewSource::Pool, _) | (ViewSource::Auto, None) => Ok(None),
        (_, Some(rt)) => Ok(Some(rt)),
        (ViewSource::Oracle, None) => Err(Error::Config("view_source = oracle needs a synthetic dataset".into())),
    }
}

/// Full-image embedding plus the view set dictated by the config.
pub fn build_views(config: &ExperimentConfig, ds: &Dataset, seed: u64, image: usize) -> Result<ImageViews> {
    let entry = &ds.manifest.images[image];
    let oracle = use_oracle(config, ds)?;
    let oracle_img = oracle.map(|rt| (rt, &rt.images[image]));
    let encode = |b: &BoundingBox, row: Option<usize>| -> Result<Vec<f32>> {
        match (oracle_img, row) {
            (Some((rt, img)), _) => Ok(oracle_encode_box(&rt.world, img, b)),
            (None, Some(r)) => Ok(ds.image_row(r)?.to_vec()),
            (None, None) => {
                Err(Error::Data(format!("no embedding for box {:?} of image '{}'", b.to_array(), entry.id)))
            }
        }
    };
    let full = match oracle_img {
        Some(_) => encode(&BoundingBox::FULL, None)?,
        None => ds.image_row(entry.full_row)?.to_vec(),
    };
    let mut views = ImageViews { boxes: Vec::new(), embs: Vec::new(), full, fallback_count: 0, attempts_used: 0 };
    if !config.mode.uses_views() {
        return Ok(views);
    }

    if let VrStrategy::Grid(g) = config.vr_strategy {
        for b in grid_boxes(g)? {
            let row = match oracle_img {
                Some(_) => None,
                None => Some(
                    entry
                        .patch_rows
                        .iter()
                        .find(|p| p.bbox == b)
                        .ok_or_else(|| {
                            Error::Data(format!("image '{}' has no precomputed grid cell {:?}", entry.id, b.to_array()))
                        })?
                        .row,
                ),
            };
            views.embs.push(encode(&b, row)?);
            views.boxes.push(b);
        }
        views.attempts_used = views.boxes.len();
    } else {
        let mut rng = CropRng::derived(seed, image as u64);
        let mut cands = match oracle_img {
            Some((rt, img)) => {
                let head = cluster_boxes(rt, img, &mut rng).into();
                Candidates::Oracle { rng: Box::new(rng), window: config.window()?, head }
            }
            None => {
                let mut order: Vec<usize> = (0..entry.patch_rows.len()).collect();
                rng.shuffle(&mut order);
                Candidates::Pool { rows: &entry.patch_rows, order, pos: 0 }
            }
        };
        let (cap, eta) = (config.capacity, config.eta);
        let admitted: Admitted<(BoundingBox, Vec<f32>)> = match (config.mode.refines_views(), config.vr_strategy) {
            (true, VrStrategy::EmbedCosine) => {
                let mut failure = None;
                let thr = config.vr_cos_threshold;
                let a = admit_until_full(
                    cap,
                    config.attempts(),
                    || {
                        let (b, row) = cands.next()?;
                        match encode(&b, row) {
                            Ok(e) => Some((b, e)),
                            Err(e) => {
                                failure = Some(e);
                                None
                            }
                        }
                    },
                    |c, items| {
                        let pool: Vec<&[f32]> = items.iter().map(|(_, e)| e.as_slice()).collect();
                        clip_vr_accept(&c.1, &pool, thr).unwrap_or(false)
                    },
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                a?
            }
            (refine, _) => {
                let attempts = if refine { config.attempts() } else { cap };
                let a = admit_until_full(
                    cap,
                    attempts,
                    || cands.next(),
                    |c, items| !refine || items.iter().all(|(b, _)| iou(b, &c.0) < eta),
                )?;
                let unique = a.items.len() - a.fallback_count;
                let mut embs = Vec::with_capacity(a.items.len());
                for (b, row) in &a.items[..unique] {
                    embs.push((*b, encode(b, *row)?));
                }
                for i in 0..a.fallback_count {
                    embs.push(embs[i % unique].clone());
                }
                Admitted { items: embs, fallback_count: a.fallback_count, attempts_used: a.attempts_used }
            }
        };
        views.fallback_count = admitted.fallback_count;
        views.attempts_used = admitted.attempts_used;
        for (b, e) in admitted.items {
            views.boxes.push(b);
            views.embs.push(e);
        }
    }
    if config.include_full_view {
        views.boxes.push(BoundingBox::FULL);
        views.embs.push(views.full.clone());
    }
    Ok(views)
}

/// Ranks every class for one image.
pub fn score_image(config: &ExperimentConfig, classes: &[ClassSet], views: &ImageViews) -> Result<Vec<ClassScore>> {
    let tau = config.temperature()?;
    let ranked = match config.mode {
        Mode::Clip => {
            let labels: Vec<&[f32]> = classes.iter().map(|c| c.label_emb.as_slice()).collect();
            classify_clip(&views.full, &labels, tau)?
        }
        Mode::ClipE => {
            let prompts: Vec<Vec<&[f32]>> =
                classes.iter().map(|c| c.prompts.iter().map(Vec::as_slice).collect()).collect();
            classify_ensemble(&views.full, &prompts, tau)?
        }
        Mode::DescAvg => {
            let descs: Vec<Vec<&[f32]>> = classes.iter().map(|c| c.descs.iter().map(Vec::as_slice).collect()).collect();
            classify_desc_avg(&views.full, &descs, tau)?
        }
        Mode::Bifta | Mode::Wca | Mode::BiftaNoVr | Mode::BiftaNoDr => {
            let evidence: Vec<ClassEvidence<'_>> = classes
                .iter()
                .map(|c| ClassEvidence {
                    label_emb: &c.label_emb,
                    desc_embs: c.descs.iter().map(Vec::as_slice).collect(),
                })
                .collect();
            classify_wca(&views.embs, &views.full, &evidence, tau)?
        }
    };
    Ok(ranked)
}

struct ImageOutcome {
    ranked: Vec<ClassScore>,
    fallback: usize,
    attempts: usize,
    views_time: Duration,
    scoring_time: Duration,
}

/// Runs every seed over every image and aggregates top-1 accuracy.
pub fn run_experiment(config: &ExperimentConfig, ds: &Dataset, options: RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let n_images = ds.manifest.images.len();
    let n_classes = ds.manifest.classes.len();
    if n_images == 0 || n_classes == 0 {
        return Err(Error::Data("dataset needs at least one image and one class".into()));
    }
    let truths = ds
        .manifest
        .images
        .iter()
        .map(|img| {
            ds.class_index(&img.truth_label)
                .ok_or_else(|| Error::Data(format!("image '{}' has unknown label '{}'", img.id, img.truth_label)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_seed = Vec::with_capacity(config.seeds.len());
    let mut class_hits = vec![0usize; n_classes];
    let mut class_total = vec![0usize; n_classes];
    let mut fallback = FallbackStats::default();
    let mut attempts_total = 0usize;
    let mut timing = Timing::default();
    let mut predictions = Vec::new();

    for &seed in &config.seeds {
        let t0 = Instant::now();
        let classes = prepare_classes(config, ds, seed)?;
        timing.descriptions_ms += t0.elapsed().as_secs_f64() * 1e3;

        let outcomes = (0..n_images)
            .into_par_iter()
            .map(|i| {
                let t = Instant::now();
                let views = build_views(config, ds, seed, i)?;
                let views_time = t.elapsed();
                let t = Instant::now();
                let ranked = score_image(config, &classes, &views)?;
                Ok(ImageOutcome {
                    ranked,
                    fallback: views.fallback_count,
                    attempts: views.attempts_used,
                    views_time,
                    scoring_time: t.elapsed(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut hits = 0usize;
        for (i, o) in outcomes.iter().enumerate() {
            let truth = truths[i];
            let correct = o.ranked[0].class == truth;
            hits += correct as usize;
            class_total[truth] += 1;
            class_hits[truth] += correct as usize;
            if config.mode.uses_views() {
                fallback.queues += 1;
                fallback.queues_with_fallback += (o.fallback > 0) as usize;
                fallback.total_fallback += o.fallback;
                attempts_total += o.attempts;
            }
            timing.views_ms += o.views_time.as_secs_f64() * 1e3;
            timing.scoring_ms += o.scoring_time.as_secs_f64() * 1e3;
            if options.predictions {
                predictions.push(prediction(ds, seed, i, truth, o));
            }
        }
        per_seed.push(hits as f64 / n_images as f64);
    }

    if fallback.queues > 0 {
        fallback.mean_attempts = attempts_total as f64 / fallback.queues as f64;
    }
    let (mean, std) = mean_std(&per_seed);
    let per_class_accuracy = ds
        .manifest
        .classes
        .iter()
        .enumerate()
        .map(|(c, class)| ClassAccuracy {
            label: class.label.clone(),
            images: class_total[c] / config.seeds.len(),
            accuracy: if class_total[c] == 0 { 0.0 } else { class_hits[c] as f64 / class_total[c] as f64 },
        })
        .collect();
    let report = Report {
        format_version: REPORT_FORMAT_VERSION,
        config: config.clone(),
        images: n_images,
        classes: n_classes,
        seeds: config.seeds.clone(),
        per_seed_accuracy: per_seed,
        mean,
        std,
        per_class_accuracy,
        fallback,
        timing: options.timing.then_some(timing),
    };
    Ok(RunOutput { report, predictions })
}

fn prediction(ds: &Dataset, seed: u64, image: usize, truth: usize, o: &ImageOutcome) -> Prediction {
    let label = |c: usize| ds.manifest.classes[c].label.clone();
    let ranked: Vec<RankedLabel> =
        o.ranked.iter().map(|s| RankedLabel { label: label(s.class), wca: s.score, prob: s.prob }).collect();
    Prediction {
        seed,
        image: ds.manifest.images[image].id.clone(),
        truth: label(truth),
        predicted: label(o.ranked[0].class),
        correct: o.ranked[0].class == truth,
        top10: ranked.iter().take(10).map(|r| TopEntry { label: r.label.clone(), prob: r.prob }).collect(),
        ranked,
        fallback_count: o.fallback,
    }
}

/// Mean and population standard deviation; exactly `(x, 0)` when all values
/// equal `x`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{build_dataset, FixtureSpec};

    #[test]
    fn mean_std_identical_values() {
        assert_eq!(mean_std(&[0.1, 0.1, 0.1]), (0.1, 0.0));
        let (m, s) = mean_std(&[0.0, 1.0]);
        assert_eq!((m, s), (0.5, 0.5));
    }

    #[test]
    fn separable_world_is_solved_by_every_mode() {
        let ds = build_dataset(&FixtureSpec::separable()).unwrap();
        for mode in [Mode::Bifta, Mode::Wca, Mode::BiftaNoVr, Mode::BiftaNoDr, Mode::Clip, Mode::ClipE, Mode::DescAvg] {
            let cfg = ExperimentConfig { mode, capacity: 8, ..Default::default() };
            let out = run_experiment(&cfg, &ds, RunOptions::default()).unwrap();
            assert_eq!(out.report.mean, 1.0, "{mode:?}");
        }
    }

    #[test]
    fn pool_views_come_from_archive_rows() {
        let ds = build_dataset(&FixtureSpec::separable()).unwrap();
        let cfg = ExperimentConfig { capacity: 8, view_source: ViewSource::Pool, ..Default::default() };
        let v = build_views(&cfg, &ds, 0, 2).unwrap();
        let pool = &ds.manifest.images[2].patch_rows;
        for (b, e) in v.boxes.iter().zip(&v.embs) {
            let row = pool.iter().find(|p| p.bbox == *b).unwrap().row;
            assert_eq!(ds.images.row(row).unwrap(), e.as_slice());
        }
        let out = run_experiment(&cfg, &ds, RunOptions::default()).unwrap();
        assert_eq!(out.report.mean, 1.0);
    }

    #[test]
    fn pool_exhaustion_falls_back() {
        let ds = build_dataset(&FixtureSpec::separable()).unwrap();
        // 12 candidates cannot fill 30 slots
        let cfg = ExperimentConfig { capacity: 30, view_source: ViewSource::Pool, ..Default::default() };
        let v = build_views(&cfg, &ds, 0, 0).unwrap();
        assert_eq!(v.embs.len(), 30);
        assert!(v.fallback_count >= 18);
    }

    #[test]
    fn cluster_heads_the_oracle_stream() {
        let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
        let cfg = ExperimentConfig { mode: Mode::Wca, ..Default::default() };
        let v = build_views(&cfg, &ds, 0, 0).unwrap();
        assert_eq!(v.boxes.len(), 60);
        for a in &v.boxes[..10] {
            for b in &v.boxes[..10] {
                assert!(iou(a, b) >= 0.8);
            }
        }
        let cfg = ExperimentConfig { mode: Mode::Bifta, ..Default::default() };
        let v = build_views(&cfg, &ds, 0, 0).unwrap();
        let near_head = v.boxes.iter().filter(|b| iou(b, &v.boxes[0]) >= 0.8).count();
        assert_eq!(near_head, 1);
    }

    #[test]
    fn include_full_view_appends_frame() {
        let ds = build_dataset(&FixtureSpec::separable()).unwrap();
        let cfg = ExperimentConfig { capacity: 4, include_full_view: true, ..Default::default() };
        let v = build_views(&cfg, &ds, 0, 0).unwrap();
        assert_eq!(v.boxes.len(), 5);
        assert_eq!(v.boxes[4], BoundingBox::FULL);
    }

    #[test]
    fn embed_cosine_views_are_deduplicated() {
        let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
        let cfg =
            ExperimentConfig { vr_strategy: VrStrategy::EmbedCosine, vr_cos_threshold: 0.9, ..Default::default() };
        let v = build_views(&cfg, &ds, 1, 3).unwrap();
        let unique = v.embs.len() - v.fallback_count;
        for i in 0..unique {
            for j in 0..i {
                assert!(bifta_core::vector::cosine(&v.embs[i], &v.embs[j]).unwrap() < 0.9);
            }
        }
    }

    #[test]
    fn grid_views_need_matching_pool_cells() {
        let ds = build_dataset(&FixtureSpec::separable()).unwrap();
        let cfg =
            ExperimentConfig { vr_strategy: VrStrategy::Grid(2), view_source: ViewSource::Pool, ..Default::default() };
        assert!(matches!(build_views(&cfg, &ds, 0, 0), Err(Error::Data(_))));
        let cfg = ExperimentConfig { vr_strategy: VrStrategy::Grid(2), ..Default::default() };
        assert_eq!(build_views(&cfg, &ds, 0, 0).unwrap().embs.len(), 4);
    }
}
