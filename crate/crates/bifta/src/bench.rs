//! Two-phase view-refinement benchmark: crop generation plus oracle
//! encoding, then IoU filtering alone. Runs single-threaded.

use std::time::Instant;

use bifta_core::geometry::{iou, sample_crop};
use bifta_core::rng::{derive_seed, CropRng};
use bifta_core::synth::oracle_encode_box;
use bifta_core::BoundingBox;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::manifest::SynthRuntime;

pub const BENCH_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CANDIDATES: usize = 100;
pub const MIN_REPETITIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub median_ms: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub total_ms: f64,
}

impl PhaseStats {
    fn from_samples(ms: &[f64]) -> Self {
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        let (mean_ms, std_ms) = crate::experiment::mean_std(ms);
        Self { median_ms, mean_ms, std_ms, total_ms: ms.iter().sum() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format_version: u32,
    pub repetitions: usize,
    pub candidates: usize,
    pub capacity: usize,
    pub eta: f64,
    pub generate_encode: PhaseStats,
    pub iou_filter: PhaseStats,
    /// Filter time over total time of both phases.
    pub filter_share: f64,
    /// IoU evaluations per repetition.
    pub comparisons: Vec<usize>,
    pub mean_admitted: f64,
}

/// Tests every candidate against the current queue (capped at `capacity`),
/// stopping at the first overlap. Returns admitted count and IoU evaluations.
pub fn filter_candidates(boxes: &[BoundingBox], capacity: usize, eta: f64) -> (usize, usize) {
    let mut queue: Vec<BoundingBox> = Vec::with_capacity(capacity);
    let mut comparisons = 0;
    for b in boxes {
        let mut ok = true;
        for q in &queue {
            comparisons += 1;
            if iou(q, b) >= eta {
                ok = false;
                break;
            }
        }
        if ok && queue.len() < capacity {
            queue.push(*b);
        }
    }
    (queue.len(), comparisons)
}

pub fn bench(
    config: &ExperimentConfig,
    rt: &SynthRuntime,
    repetitions: usize,
    candidates: usize,
    seed: u64,
) -> Result<BenchReport> {
    config.validate()?;
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Config(format!("bench needs at least {MIN_REPETITIONS} repetitions, got {repetitions}")));
    }
    if candidates == 0 {
        return Err(Error::Config("bench needs at least one candidate".into()));
    }
    if rt.images.is_empty() {
        return Err(Error::Data("bench needs at least one synthetic image".into()));
    }
    let window = config.window()?;
    let mut gen_ms = Vec::with_capacity(repetitions);
    let mut filt_ms = Vec::with_capacity(repetitions);
    let mut comparisons = Vec::with_capacity(repetitions);
    let mut admitted = 0usize;
    let stream = derive_seed(seed, 0x0062_656e_6368);
    for r in 0..repetitions {
        let img = &rt.images[r % rt.images.len()];
        let mut rng = CropRng::derived(stream, r as u64);

        let t = Instant::now();
        let mut boxes = Vec::with_capacity(candidates);
        let mut checksum = 0.0f32;
        for _ in 0..candidates {
            let b = sample_crop(&mut rng, &window);
            checksum += oracle_encode_box(&rt.world, img, &b)[0];
            boxes.push(b);
        }
        gen_ms.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(checksum);

        let t = Instant::now();
        let (kept, cmp) = std::hint::black_box(filter_candidates(&boxes, config.capacity, config.eta));
        filt_ms.push(t.elapsed().as_secs_f64() * 1e3);
        admitted += kept;
        comparisons.push(cmp);
    }
    let generate_encode = PhaseStats::from_samples(&gen_ms);
    let iou_filter = PhaseStats::from_samples(&filt_ms);
    let total = generate_encode.total_ms + iou_filter.total_ms;
    Ok(BenchReport {
        format_version: BENCH_FORMAT_VERSION,
        repetitions,
        candidates,
        capacity: config.capacity,
        eta: config.eta,
        filter_share: if total > 0.0 { iou_filter.total_ms / total } else { 0.0 },
        generate_encode,
        iou_filter,
        comparisons,
        mean_admitted: admitted as f64 / repetitions as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_counts_by_hand() {
        let a = BoundingBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let b = BoundingBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        // a; b vs a (1); a vs a (1, rejected); b vs a, b (2, rejected at b)
        assert_eq!(filter_candidates(&[a, b, a, b], 4, 0.8), (2, 4));
        // capacity 1: second box tested but not admitted
        assert_eq!(filter_candidates(&[a, b], 1, 0.8), (1, 1));
    }

    #[test]
    fn median_of_even_count() {
        let s = PhaseStats::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.total_ms, 10.0);
    }
}
