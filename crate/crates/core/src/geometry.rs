//! Crop proposals and view refinement.
//!
//! Boxes live in normalized image coordinates. A [`ViewQueue`] is filled by
//! drawing candidates and admitting only those whose IoU with every admitted
//! box stays below the threshold `eta`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::rng::CropRng;
use crate::{Error, Result};

/// Axis-aligned crop rectangle in fractions of image width and height.
///
/// Serializes as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BoundingBox {
    /// Validates `0 ≤ x0 < x1 ≤ 1` and `0 ≤ y0 < y1 ≤ 1`.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 1.0;
        if !ok(x0, x1) || !ok(y0, y1) {
            return Err(invalid!("degenerate or out-of-range box [{x0}, {y0}, {x1}, {y1}]"));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub const FULL: BoundingBox = BoundingBox { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> f64 {
        self.y0
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Intersection area; zero for boxes that only share an edge.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;
    fn try_from(a: [f64; 4]) -> Result<Self> {
        BoundingBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Jaccard index of two boxes. Symmetric; exactly 1 for equal boxes and
/// exactly 0 for boxes with disjoint interiors.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Range of crop side lengths, as fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    alpha: f64,
    beta: f64,
}

impl CropWindow {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= beta && beta <= 1.0) {
            return Err(invalid!("crop window requires 0 < alpha <= beta <= 1, got alpha={alpha}, beta={beta}"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Draws one random crop.
///
/// Draw order is fixed at four uniforms: width, height, x0, y0. Width and
/// height are independent in `[alpha, beta]`; the corner is uniform over the
/// positions that keep the box inside the frame.
pub fn sample_crop(rng: &mut CropRng, window: &CropWindow) -> BoundingBox {
    let w = rng.uniform(window.alpha, window.beta);
    let h = rng.uniform(window.alpha, window.beta);
    let x0 = (1.0 - w) * rng.next_unit();
    let y0 = (1.0 - h) * rng.next_unit();
    BoundingBox { x0, y0, x1: (x0 + w).min(1.0), y1: (y0 + h).min(1.0) }
}

/// True iff `candidate` has IoU below `eta` with every box in `boxes`.
pub fn iou_accept(candidate: &BoundingBox, boxes: &[BoundingBox], eta: f64) -> bool {
    boxes.iter().all(|b| iou(b, candidate) < eta)
}

/// Fixed-capacity set of admitted views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewQueue {
    pub capacity: usize,
    #[serde(rename = "eta")]
    pub threshold_eta: f64,
    pub boxes: Vec<BoundingBox>,
    pub fallback_count: usize,
    pub attempts_used: usize,
}

impl ViewQueue {
    pub fn new(capacity: usize, threshold_eta: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("view queue capacity must be at least 1".into()));
        }
        check_eta(threshold_eta)?;
        Ok(Self { capacity, threshold_eta, boxes: Vec::new(), fallback_count: 0, attempts_used: 0 })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.boxes.len() >= self.capacity
    }

    /// Boxes admitted by the IoU test, i.e. excluding fallback copies.
    pub fn admitted(&self) -> &[BoundingBox] {
        &self.boxes[..self.boxes.len() - self.fallback_count]
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Config(format!("IoU threshold must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

/// The view-refinement filter: accept iff IoU with every queued box is `< eta`.
pub fn vr_accept(candidate: &BoundingBox, queue: &ViewQueue) -> bool {
    iou_accept(candidate, &queue.boxes, queue.threshold_eta)
}

/// Result of [`admit_until_full`].
#[derive(Debug, Clone, PartialEq)]
pub struct Admitted<T> {
    pub items: Vec<T>,
    pub fallback_count: usize,
    pub attempts_used: usize,
}

/// Generic queue filling loop shared by every view strategy.
///
/// Pulls candidates from `next` until `capacity` items are admitted, the
/// attempt budget is spent, or the source runs dry. A shortfall is topped up
/// by cycling the admitted items in admission order.
pub fn admit_until_full<T, N, A>(
    capacity: usize,
    max_attempts: usize,
    mut next: N,
    mut accept: A,
) -> Result<Admitted<T>>
where
    T: Clone,
    N: FnMut() -> Option<T>,
    A: FnMut(&T, &[T]) -> bool,
{
    if capacity == 0 {
        return Err(Error::Config("capacity must be at least 1".into()));
    }
    if max_attempts < capacity {
        return Err(Error::Config(format!("max_attempts ({max_attempts}) must be at least capacity ({capacity})")));
    }
    let mut items: Vec<T> = Vec::with_capacity(capacity);
    let mut attempts = 0;
    while items.len() < capacity && attempts < max_attempts {
        let Some(candidate) = next() else { break };
        attempts += 1;
        if accept(&candidate, &items) {
            items.push(candidate);
        }
    }
    if items.is_empty() {
        return Err(invalid!("candidate source produced no admissible views"));
    }
    let admitted = items.len();
    let mut fallback_count = 0;
    while items.len() < capacity {
        let copy = items[fallback_count % admitted].clone();
        items.push(copy);
        fallback_count += 1;
    }
    Ok(Admitted { items, fallback_count, attempts_used: attempts })
}

/// Fills a view queue from random crops under the IoU filter.
pub fn fill_view_queue(
    rng: &mut CropRng,
    window: &CropWindow,
    eta: f64,
    capacity: usize,
    max_attempts: usize,
) -> Result<ViewQueue> {
    let mut queue = ViewQueue::new(capacity, eta)?;
    let filled = admit_until_full(
        capacity,
        max_attempts,
        || Some(sample_crop(rng, window)),
        |c, boxes| iou_accept(c, boxes, eta),
    )?;
    queue.boxes = filled.items;
    queue.fallback_count = filled.fallback_count;
    queue.attempts_used = filled.attempts_used;
    Ok(queue)
}

/// Default attempt budget for a queue of the given capacity.
pub const fn default_max_attempts(capacity: usize) -> usize {
    capacity * 10
}

/// `g × g` tiling of the frame, row-major.
pub fn grid_boxes(g: usize) -> Result<Vec<BoundingBox>> {
    if g == 0 {
        return Err(invalid!("grid resolution must be at least 1"));
    }
    let edge = |i: usize| if i == g { 1.0 } else { i as f64 / g as f64 };
    let mut out = Vec::with_capacity(g * g);
    for r in 0..g {
        for c in 0..g {
            out.push(BoundingBox { x0: edge(c), y0: edge(r), x1: edge(c + 1), y1: edge(r + 1) });
        }
    }
    Ok(out)
}
