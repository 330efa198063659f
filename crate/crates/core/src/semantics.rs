//! Per-pixel class probabilities, Bayesian fusion and instance tracking.
//!
//! Class distributions are fused multiplicatively: the posterior is the
//! elementwise product of prior and observation, renormalized. Instance ids
//! from a panoptic segmenter are not temporally consistent, so raw per-frame
//! ids are matched against the previous two frames by mask IOU and mapped to
//! persistent track ids.

use crate::geometry::Pixel;
use std::collections::BTreeMap;
use thiserror::Error;

/// IOU threshold against the previous frame.
pub const IOU_TAU_PREV: f64 = 0.65;
/// IOU threshold against the frame before the previous one.
pub const IOU_TAU_PREV2: f64 = 0.4;
/// Probability floor applied when ingesting probability maps.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticsError {
    #[error("pixel ({u:.1}, {v:.1}) outside {w}x{h} image")]
    OutOfBounds { u: f64, v: f64, w: u32, h: u32 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("map dimension mismatch")]
    DimensionMismatch,
}

/// Discrete distribution over semantic classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    p: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self, SemanticsError> {
        if p.is_empty() {
            return Err(SemanticsError::InvalidDistribution("empty".into()));
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| !(0.0..=1.0 + 1e-9).contains(&v)) || (sum - 1.0).abs() > 1e-6 {
            return Err(SemanticsError::InvalidDistribution(format!(
                "entries must be in [0,1] and sum to 1 (sum = {sum})"
            )));
        }
        Ok(Self { p })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self {
            p: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    /// One-hot at `class` softened to confidence `alpha`, remainder uniform.
    pub fn one_hot_soft(class: usize, num_classes: usize, alpha: f64) -> Self {
        let rest = if num_classes > 1 {
            (1.0 - alpha) / (num_classes - 1) as f64
        } else {
            0.0
        };
        let mut p = vec![rest; num_classes];
        p[class] = if num_classes > 1 { alpha } else { 1.0 };
        Self { p }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Bayesian update: elementwise product renormalized. When the supports
    /// are disjoint (product sums below 1e-300) the prior is kept and the
    /// update flagged as degenerate.
    pub fn bayes_update(&self, obs: &ClassDistribution) -> (ClassDistribution, bool) {
        debug_assert_eq!(self.p.len(), obs.p.len());
        let mut prod: Vec<f64> = self
            .p
            .iter()
            .zip(obs.p.iter())
            .map(|(a, b)| a * b)
            .collect();
        let z: f64 = prod.iter().sum();
        if z < 1e-300 {
            return (self.clone(), true);
        }
        for v in &mut prod {
            *v /= z;
        }
        (ClassDistribution { p: prod }, false)
    }

    /// Winning class; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.p.iter().enumerate() {
            if v > self.p[best] {
                best = i;
            }
        }
        best
    }
}

/// Dense per-pixel class distribution, row-major with class fastest.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    width: u32,
    height: u32,
    num_classes: usize,
    data: Vec<f64>,
}

impl ProbabilityMap {
    /// Build from raw data, clamping each entry to the probability floor and
    /// renormalizing per pixel. A single hard zero in an observation would
    /// otherwise permanently kill a class under the multiplicative fusion.
    pub fn from_raw(
        width: u32,
        height: u32,
        num_classes: usize,
        mut data: Vec<f64>,
    ) -> Result<Self, SemanticsError> {
        if data.len() != (width as usize) * (height as usize) * num_classes {
            return Err(SemanticsError::DimensionMismatch);
        }
        for px in data.chunks_mut(num_classes) {
            let mut sum = 0.0;
            for v in px.iter_mut() {
                *v = v.max(PROB_FLOOR);
                sum += *v;
            }
            for v in px.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Self {
            width,
            height,
            num_classes,
            data,
        })
    }

    /// Synthesize a probability map from an argmax label image: one-hot at
    /// the label with confidence `alpha`, remainder spread uniformly.
    pub fn from_labels(labels: &[u16], width: u32, height: u32, num_classes: usize, alpha: f64) -> Result<Self, SemanticsError> {
        if labels.len() != (width as usize) * (height as usize) {
            return Err(SemanticsError::DimensionMismatch);
        }
        let mut data = vec![0.0; labels.len() * num_classes];
        for (i, &label) in labels.iter().enumerate() {
            let d = ClassDistribution::one_hot_soft(label as usize, num_classes, alpha);
            data[i * num_classes..(i + 1) * num_classes].copy_from_slice(d.probabilities());
        }
        Self::from_raw(width, height, num_classes, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_distribution(&self, px: &Pixel) -> Result<ClassDistribution, SemanticsError> {
        let (u, v) = self.pixel_index(px)?;
        let base = (v * self.width as usize + u) * self.num_classes;
        Ok(ClassDistribution {
            p: self.data[base..base + self.num_classes].to_vec(),
        })
    }

    fn pixel_index(&self, px: &Pixel) -> Result<(usize, usize), SemanticsError> {
        if px.u < 0.0 || px.v < 0.0 || px.u >= self.width as f64 || px.v >= self.height as f64 {
            return Err(SemanticsError::OutOfBounds {
                u: px.u,
                v: px.v,
                w: self.width,
                h: self.height,
            });
        }
        Ok((px.u as usize, px.v as usize))
    }
}

/// Fuse one segmentation observation at `px` into `dist`.
pub fn observe_point(
    dist: &ClassDistribution,
    pmap: &ProbabilityMap,
    px: &Pixel,
) -> Result<(ClassDistribution, bool), SemanticsError> {
    let obs = pmap.pixel_distribution(px)?;
    Ok(dist.bayes_update(&obs))
}

/// Per-pixel instance id image. Id 0 is reserved for "no instance".
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMap {
    width: u32,
    height: u32,
    data: Vec<u32>,
}

impl InstanceMap {
    pub fn new(width: u32, height: u32, data: Vec<u32>) -> Result<Self, SemanticsError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(SemanticsError::DimensionMismatch);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn id_at(&self, px: &Pixel) -> Result<u32, SemanticsError> {
        if px.u < 0.0 || px.v < 0.0 || px.u >= self.width as f64 || px.v >= self.height as f64 {
            return Err(SemanticsError::OutOfBounds {
                u: px.u,
                v: px.v,
                w: self.width,
                h: self.height,
            });
        }
        Ok(self.data[px.v as usize * self.width as usize + px.u as usize])
    }

    /// Pixel areas of every nonzero instance id.
    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut areas = BTreeMap::new();
        for &id in &self.data {
            if id != 0 {
                *areas.entry(id).or_insert(0) += 1;
            }
        }
        areas
    }

    /// Rewrite ids through the given mapping; ids without an entry become 0.
    pub fn relabel(&self, mapping: &BTreeMap<u32, u32>) -> InstanceMap {
        let data = self
            .data
            .iter()
            .map(|id| {
                if *id == 0 {
                    0
                } else {
                    mapping.get(id).copied().unwrap_or(0)
                }
            })
            .collect();
        InstanceMap {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Intersection-over-union of two pixel masks given as sorted index sets.
pub fn mask_iou(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Pairwise intersection counts between two instance maps, keyed by
/// `(id_in_a, id_in_b)`. Id 0 is skipped.
fn intersections(a: &InstanceMap, b: &InstanceMap) -> BTreeMap<(u32, u32), usize> {
    let mut inter = BTreeMap::new();
    for (&ia, &ib) in a.data.iter().zip(b.data.iter()) {
        if ia != 0 && ib != 0 {
            *inter.entry((ia, ib)).or_insert(0) += 1;
        }
    }
    inter
}

/// One remembered frame: raw instance map plus the raw-to-persistent id
/// mapping and per-raw-id class that were decided for it.
#[derive(Debug, Clone)]
struct TrackedFrame {
    map: InstanceMap,
    raw_to_persistent: BTreeMap<u32, u32>,
    raw_class: BTreeMap<u32, usize>,
}

/// Two-frame IOU tracker state. Persistent ids are never reused.
#[derive(Debug, Clone, Default)]
pub struct InstanceTracker {
    prev: Option<TrackedFrame>,
    prev2: Option<TrackedFrame>,
    next_id: u32,
}

impl InstanceTracker {
    pub fn new() -> Self {
        Self {
            prev: None,
            prev2: None,
            next_id: 1,
        }
    }

    /// Match the raw instances of `imap` against the previous two frames and
    /// return the raw-to-persistent id mapping for this frame.
    ///
    /// Matching is greedy by descending IOU, restricted to instances of the
    /// same class, one persistent id per raw id and vice versa. A raw
    /// instance first tries the previous frame at threshold 0.65, then the
    /// frame before at 0.4, and otherwise mints a fresh persistent id.
    pub fn track(
        &mut self,
        imap: &InstanceMap,
        raw_class: &BTreeMap<u32, usize>,
    ) -> BTreeMap<u32, u32> {
        let areas = imap.areas();
        let mut assignment: BTreeMap<u32, u32> = BTreeMap::new();
        let mut used_persistent: std::collections::BTreeSet<u32> = Default::default();

        for (frame, tau) in [(&self.prev, IOU_TAU_PREV), (&self.prev2, IOU_TAU_PREV2)] {
            let Some(frame) = frame else { continue };
            let prev_areas = frame.map.areas();
            let inter = intersections(imap, &frame.map);
            // Candidate matches above threshold, sorted by descending IOU
            // with a deterministic tie-break.
            let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
            for (&(cur, prev_raw), &n) in &inter {
                if assignment.contains_key(&cur) {
                    continue;
                }
                if raw_class.get(&cur) != frame.raw_class.get(&prev_raw) {
                    continue;
                }
                let Some(&persistent) = frame.raw_to_persistent.get(&prev_raw) else {
                    continue;
                };
                let union = areas[&cur] + prev_areas[&prev_raw] - n;
                let iou = n as f64 / union as f64;
                if iou >= tau {
                    candidates.push((iou, cur, persistent));
                }
            }
            candidates.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            for (_, cur, persistent) in candidates {
                if assignment.contains_key(&cur) || used_persistent.contains(&persistent) {
                    continue;
                }
                assignment.insert(cur, persistent);
                used_persistent.insert(persistent);
            }
        }

        // Unmatched raw instances get fresh ids, in ascending raw-id order.
        for &raw in areas.keys() {
            if !assignment.contains_key(&raw) {
                assignment.insert(raw, self.next_id);
                self.next_id += 1;
            }
        }

        self.prev2 = self.prev.take();
        self.prev = Some(TrackedFrame {
            map: imap.clone(),
            raw_to_persistent: assignment.clone(),
            raw_class: raw_class.clone(),
        });
        assignment
    }
}
