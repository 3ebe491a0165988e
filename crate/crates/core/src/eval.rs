//! Cascade inference, non-maximum suppression and mAP over tIoU thresholds.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::losses::softmax;
use crate::network::{Mode, Network, Variant};
use crate::synth::{featurize_interval, Proposal, SyntheticSequence};

/// tIoU thresholds reported by default, and averaged into the `avg` column.
pub const DEFAULT_TIOUS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.5;

/// Temporal IoU of two `[start, end)` intervals.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub seq_id: u32,
    pub class: usize,
    pub score: f64,
    pub start: f64,
    pub end: f64,
    /// Boundary variances in units², when the network predicts them.
    pub start_var: Option<f64>,
    pub end_var: Option<f64>,
}

impl Detection {
    pub fn interval(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub seq_id: u32,
    pub class: usize,
    pub start: f64,
    pub end: f64,
}

pub fn ground_truths(dataset: &Dataset) -> Vec<GroundTruth> {
    dataset
        .sequences
        .iter()
        .flat_map(|s| {
            s.annotations.iter().map(move |a| GroundTruth {
                seq_id: s.id,
                class: a.class,
                start: a.start as f64,
                end: a.end as f64,
            })
        })
        .collect()
}

/// Indices sorted by descending score; ties keep input order.
fn by_score(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    idx
}

/// Greedy per-(sequence, class) suppression: a detection is dropped when its
/// tIoU with an already kept, higher-scoring one reaches `threshold`.
/// Survivors keep their input order.
pub fn nms(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut keep = vec![false; dets.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in by_score(dets) {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&j| {
            let k = &dets[j];
            k.seq_id == d.seq_id && k.class == d.class && tiou(k.interval(), d.interval()) >= threshold
        });
        if !suppressed {
            keep[i] = true;
            kept.push(i);
        }
    }
    dets.iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| *d).collect()
}

/// All-point interpolated average precision for one class.
///
/// Detections are swept by descending score; each is matched to the
/// highest-tIoU unmatched ground truth of its sequence when that tIoU reaches
/// `threshold`. Precision is replaced by its running maximum from the right
/// before integrating over recall.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for (rank, i) in by_score(dets).into_iter().enumerate() {
        let d = &dets[i];
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| !matched[*g] && gt.seq_id == d.seq_id)
            .map(|(g, gt)| (g, tiou(d.interval(), (gt.start, gt.end))))
            .fold(None::<(usize, f64)>, |acc, cur| match acc {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((g, overlap)) = best {
            if overlap >= threshold {
                matched[g] = true;
                tp += 1;
            }
        }
        recall.push(tp as f64 / gts.len() as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    pub map: Vec<f64>,
    /// Mean of `map` across thresholds.
    pub average: f64,
}

/// mAP at each threshold: AP averaged over the classes that have ground truth.
pub fn map_at_tious(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> MapReport {
    let mut classes: Vec<usize> = gts.iter().map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let map: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            if classes.is_empty() {
                return 0.0;
            }
            let total: f64 = classes
                .iter()
                .map(|&c| {
                    let d: Vec<Detection> = dets.iter().filter(|d| d.class == c).copied().collect();
                    let g: Vec<GroundTruth> = gts.iter().filter(|g| g.class == c).copied().collect();
                    average_precision(&d, &g, t)
                })
                .sum();
            total / classes.len() as f64
        })
        .collect();
    let average = if map.is_empty() {
        0.0
    } else {
        map.iter().sum::<f64>() / map.len() as f64
    };
    MapReport {
        thresholds: thresholds.to_vec(),
        map,
        average,
    }
}

/// Integer window used to pool a real-valued interval: rounded, clipped, and
/// widened to at least `k` units.
fn pooling_window(seq: &SyntheticSequence, (s, e): (f64, f64), k: usize) -> (usize, usize) {
    let len = seq.len;
    let mut a = (s.round().max(0.0) as usize).min(len);
    let mut b = (e.round().max(0.0) as usize).min(len);
    if b < a + k {
        let mid = (a + b) / 2;
        a = mid.saturating_sub(k / 2).min(len - k);
        b = a + k;
    }
    (a, b)
}

/// Refines every proposal by feeding its regressed interval back through the
/// same network `steps` times, then emits one detection per proposal for its
/// top-scoring action class.
pub fn cascade_infer(net: &Network, seq: &SyntheticSequence, proposals: &[Proposal], steps: usize) -> Result<Vec<Detection>> {
    let steps = steps.max(1);
    let k = net.config.k;
    let bound = seq.len as f64;
    proposals
        .iter()
        .map(|p| {
            let mut iv = (p.start as f64, p.end as f64);
            let mut out = None;
            for step in 0..steps {
                let (a, b) = if step == 0 {
                    (p.start, p.end)
                } else {
                    pooling_window(seq, iv, k)
                };
                let feature = featurize_interval(seq, a, b, k)?;
                let (det, _) = net.forward(&feature, Mode::Test)?;
                let class = (1..det.class_scores.len())
                    .max_by(|&x, &y| det.class_scores[x].total_cmp(&det.class_scores[y]).then(y.cmp(&x)))
                    .expect("at least one action class");
                let bd = det.boundaries[class];
                let len = iv.1 - iv.0;
                let refined = (
                    (iv.0 + bd.start.mu * len).clamp(0.0, bound),
                    (iv.1 + bd.end.mu * len).clamp(0.0, bound),
                );
                if refined.1 > refined.0 {
                    iv = refined;
                }
                let predicts_var = net.config.variant == Variant::VanO;
                out = Some(Detection {
                    seq_id: seq.id,
                    class,
                    score: softmax(&det.class_scores)[class],
                    start: iv.0,
                    end: iv.1,
                    start_var: predicts_var.then_some(bd.start.sigma2 * len * len),
                    end_var: predicts_var.then_some(bd.end.sigma2 * len * len),
                });
            }
            Ok(out.expect("steps >= 1"))
        })
        .collect()
}

/// Cascade inference over every sequence of a split, followed by NMS.
pub fn detect(net: &Network, data: &Dataset, steps: usize, nms_threshold: f64) -> Result<Vec<Detection>> {
    let per_seq: Vec<Vec<Detection>> = data
        .sequences
        .par_iter()
        .map(|seq| {
            let props: Vec<Proposal> = data.proposals.iter().filter(|p| p.seq_id == seq.id).copied().collect();
            cascade_infer(net, seq, &props, steps).map(|d| nms(&d, nms_threshold))
        })
        .collect::<Result<_>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}

pub fn evaluate(net: &Network, data: &Dataset, steps: usize, nms_threshold: f64, thresholds: &[f64]) -> Result<MapReport> {
    let dets = detect(net, data, steps, nms_threshold)?;
    Ok(map_at_tious(&dets, &ground_truths(data), thresholds))
}
