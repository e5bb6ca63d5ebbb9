//! Region-proposal mechanics: anchor grids, anchor labeling against ground
//! truth, RPN minibatch sampling, greedy NMS and the decode/clip/NMS
//! proposal pipeline.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{clip, decode, iou, BoundingBox, BoxDelta};
use crate::Error;

/// Anchor layout over a feature map: one anchor per (cell, scale, ratio).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGridSpec {
    stride: f64,
    scales: Vec<f64>,
    ratios: Vec<f64>,
}

impl AnchorGridSpec {
    /// `ratios` are height / width.
    pub fn new(stride: f64, scales: Vec<f64>, ratios: Vec<f64>) -> Result<Self, Error> {
        if !(stride >= 1.0 && stride.is_finite()) {
            return Err(Error::InvalidConfig("anchor stride must be >= 1".into()));
        }
        if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(
                "anchor scales must be nonempty and positive".into(),
            ));
        }
        if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig(
                "anchor ratios must be nonempty and positive".into(),
            ));
        }
        Ok(AnchorGridSpec {
            stride,
            scales,
            ratios,
        })
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Anchors per feature-map cell.
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

impl Default for AnchorGridSpec {
    fn default() -> Self {
        AnchorGridSpec {
            stride: 16.0,
            scales: vec![64.0, 128.0, 256.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

/// A box with a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BoundingBox, score: f64) -> Result<Self, Error> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(ScoredBox { bbox, score })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// Training label of one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    /// Matched to the ground truth at this index.
    Positive(usize),
    Negative,
    Ignore,
}

impl AnchorLabel {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorLabel::Positive(_))
    }
}

/// Anchors for a `feat_w x feat_h` grid, ordered row by row, then by
/// scale, then by ratio.
pub fn generate_anchors(feat_w: usize, feat_h: usize, spec: &AnchorGridSpec) -> Vec<BoundingBox> {
    let mut out = Vec::with_capacity(feat_w * feat_h * spec.per_cell());
    // shapes are shared by every cell
    let shapes: Vec<(f64, f64)> = spec
        .scales
        .iter()
        .flat_map(|&s| {
            spec.ratios.iter().map(move |&r| {
                let root = libm::sqrt(r);
                (s / root, s * root)
            })
        })
        .collect();
    for j in 0..feat_h {
        for i in 0..feat_w {
            let cx = (i as f64 + 0.5) * spec.stride;
            let cy = (j as f64 + 0.5) * spec.stride;
            for &(w, h) in &shapes {
                out.push(
                    BoundingBox::from_center(cx, cy, w, h)
                        .expect("positive anchor sizes give valid boxes"),
                );
            }
        }
    }
    out
}

/// Labels anchors for RPN training.
///
/// An anchor is positive when its best IoU reaches `pos_iou`, or when it is
/// the best anchor of some ground truth (lowest anchor index on ties, and
/// only if that IoU is nonzero). Positives carry the index of their own
/// best ground truth, lowest index on ties. Anchors below `neg_iou` are
/// negative and the rest ignored. With no ground truth every anchor is
/// negative.
pub fn label_anchors(
    anchors: &[BoundingBox],
    ground_truths: &[BoundingBox],
    pos_iou: f64,
    neg_iou: f64,
) -> Result<Vec<AnchorLabel>, Error> {
    if !(0.0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1.0) {
        return Err(Error::InvalidConfig(
            "label thresholds must satisfy 0 <= neg <= pos <= 1".into(),
        ));
    }
    if ground_truths.is_empty() {
        return Ok(vec![AnchorLabel::Negative; anchors.len()]);
    }

    let mut best_gt = vec![(0usize, f64::NEG_INFINITY); anchors.len()];
    let mut best_anchor = vec![(usize::MAX, 0.0f64); ground_truths.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        for (g, gt) in ground_truths.iter().enumerate() {
            let v = iou(anchor, gt);
            if v > best_gt[a].1 {
                best_gt[a] = (g, v);
            }
            if v > best_anchor[g].1 {
                best_anchor[g] = (a, v);
            }
        }
    }

    let mut labels: Vec<AnchorLabel> = best_gt
        .iter()
        .map(|&(g, v)| {
            if v >= pos_iou {
                AnchorLabel::Positive(g)
            } else if v < neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    for &(a, v) in &best_anchor {
        if a != usize::MAX && v > 0.0 {
            labels[a] = AnchorLabel::Positive(best_gt[a].0);
        }
    }
    Ok(labels)
}

/// Draws an RPN minibatch: up to `pos_fraction * batch_size` positives,
/// topped up with negatives. Indices come back sorted ascending.
pub fn sample_rpn_batch(
    labels: &[AnchorLabel],
    batch_size: usize,
    pos_fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, Error> {
    if batch_size == 0 || !(pos_fraction > 0.0 && pos_fraction < 1.0) {
        return Err(Error::InvalidConfig(
            "batch_size must be >= 1 and pos_fraction in (0, 1)".into(),
        ));
    }
    let positives: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].is_positive())
        .collect();
    let negatives: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == AnchorLabel::Negative)
        .collect();
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::NoTrainableAnchors);
    }

    let pos_quota = libm::floor(pos_fraction * batch_size as f64) as usize;
    let n_pos = pos_quota.min(positives.len());
    let n_neg = (batch_size - n_pos).min(negatives.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = choose(&positives, n_pos, &mut rng);
    picked.extend(choose(&negatives, n_neg, &mut rng));
    picked.sort_unstable();
    Ok(picked)
}

fn choose(pool: &[usize], amount: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Input indices ordered by descending score, earlier index first on ties.
pub(crate) fn score_order(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression.
///
/// Returns the kept input indices in descending score order. A box is
/// discarded when its IoU with an already kept box exceeds `iou_thresh`.
pub fn nms(boxes: &[ScoredBox], iou_thresh: f64) -> Vec<usize> {
    let order = score_order(boxes.iter().map(|b| b.score));
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i].bbox, &boxes[j].bbox) > iou_thresh {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Tunables of [`propose`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub pre_nms_top_k: usize,
    pub post_nms_top_k: usize,
    pub nms_thresh: f64,
    pub min_size: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            pre_nms_top_k: 2000,
            post_nms_top_k: 300,
            nms_thresh: 0.7,
            min_size: 4.0,
        }
    }
}

/// Upper bound applied to predicted log-size deltas before decoding.
pub const PROPOSAL_LOG_SCALE_CLIP: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Turns per-anchor objectness and deltas into clipped, suppressed region
/// proposals.
pub fn propose(
    anchors: &[BoundingBox],
    objectness: &[f64],
    deltas: &[BoxDelta],
    image_w: f64,
    image_h: f64,
    config: &ProposalConfig,
) -> Result<Vec<ScoredBox>, Error> {
    if objectness.len() != anchors.len() {
        return Err(Error::LengthMismatch {
            what: "objectness",
            expected: anchors.len(),
            found: objectness.len(),
        });
    }
    if deltas.len() != anchors.len() {
        return Err(Error::LengthMismatch {
            what: "deltas",
            expected: anchors.len(),
            found: deltas.len(),
        });
    }

    let mut candidates = Vec::with_capacity(anchors.len());
    for ((anchor, &score), delta) in anchors.iter().zip(objectness).zip(deltas) {
        let d = BoxDelta {
            dw: delta.dw.min(PROPOSAL_LOG_SCALE_CLIP),
            dh: delta.dh.min(PROPOSAL_LOG_SCALE_CLIP),
            ..*delta
        };
        let Ok(decoded) = decode(anchor, &d) else {
            continue;
        };
        let Some(clipped) = clip(&decoded, image_w, image_h) else {
            continue;
        };
        if clipped.width() < config.min_size || clipped.height() < config.min_size {
            continue;
        }
        candidates.push(ScoredBox::new(clipped, score)?);
    }

    let order = score_order(candidates.iter().map(|c| c.score));
    let top: Vec<ScoredBox> = order
        .into_iter()
        .take(config.pre_nms_top_k)
        .map(|i| candidates[i])
        .collect();
    let keep = nms(&top, config.nms_thresh);
    Ok(keep
        .into_iter()
        .take(config.post_nms_top_k)
        .map(|i| top[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    fn sb(a: f64, b: f64, c: f64, d: f64, s: f64) -> ScoredBox {
        ScoredBox::new(bx(a, b, c, d), s).unwrap()
    }

    #[test]
    fn anchor_count_and_single_cell() {
        let spec = AnchorGridSpec::default();
        assert_eq!(generate_anchors(4, 4, &spec).len(), 144);

        let one = AnchorGridSpec::new(16.0, vec![16.0], vec![1.0]).unwrap();
        let a = generate_anchors(1, 1, &one);
        assert_eq!(a, vec![bx(0.0, 0.0, 16.0, 16.0)]);
        assert_eq!(a[0].center(), (8.0, 8.0));
    }

    #[test]
    fn anchor_ratio_two_preserves_area() {
        let spec = AnchorGridSpec::new(8.0, vec![32.0], vec![2.0]).unwrap();
        let a = generate_anchors(1, 1, &spec)[0];
        let root2 = core::f64::consts::SQRT_2;
        assert!((a.width() - 32.0 / root2).abs() < 1e-12);
        assert!((a.height() - 32.0 * root2).abs() < 1e-12);
        assert!((a.area() - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn anchor_ordering_is_row_major_then_scale_then_ratio() {
        let spec = AnchorGridSpec::new(10.0, vec![4.0, 8.0], vec![1.0, 4.0]).unwrap();
        let a = generate_anchors(3, 2, &spec);
        // cell (i=2, j=1), scale 8, ratio 4
        let k = ((1 * 3 + 2) * 2 + 1) * 2 + 1;
        assert_eq!(a[k].center(), (25.0, 15.0));
        assert!((a[k].width() - 4.0).abs() < 1e-12);
        assert!((a[k].height() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn grid_spec_validation() {
        assert!(AnchorGridSpec::new(0.5, vec![1.0], vec![1.0]).is_err());
        assert!(AnchorGridSpec::new(16.0, vec![], vec![1.0]).is_err());
        assert!(AnchorGridSpec::new(16.0, vec![1.0], vec![-1.0]).is_err());
    }

    #[test]
    fn labels_identical_and_disjoint() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let anchors = [gt, bx(50.0, 50.0, 60.0, 60.0)];
        let l = label_anchors(&anchors, &[gt], 0.7, 0.3).unwrap();
        assert_eq!(l, vec![AnchorLabel::Positive(0), AnchorLabel::Negative]);
    }

    #[test]
    fn forced_assignment_below_threshold() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        // shift right by 4.2857: intersection 57.143, union 142.857 -> IoU 0.4
        let shift = 60.0 / 14.0;
        let anchors = [
            bx(shift, 0.0, 10.0 + shift, 10.0),
            bx(8.0, 0.0, 18.0, 10.0),
            bx(30.0, 30.0, 40.0, 40.0),
        ];
        // exhaustive scan confirms anchor 0 is the best and below 0.7
        let ious: Vec<f64> = anchors.iter().map(|a| iou(a, &gt)).collect();
        assert!((ious[0] - 0.4).abs() < 1e-12);
        assert!(ious[0] > ious[1] && ious[0] > ious[2]);
        let l = label_anchors(&anchors, &[gt], 0.7, 0.3).unwrap();
        assert_eq!(l[0], AnchorLabel::Positive(0));
        assert_eq!(l[1], AnchorLabel::Negative);
        assert_eq!(l[2], AnchorLabel::Negative);
    }

    #[test]
    fn labels_ignore_band_and_empty_gt() {
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        let anchors = [gt, bx(5.0, 0.0, 15.0, 10.0)]; // second: IoU 1/3
        let l = label_anchors(&anchors, &[gt], 0.7, 0.3).unwrap();
        assert_eq!(l[1], AnchorLabel::Ignore);
        let l = label_anchors(&anchors, &[], 0.7, 0.3).unwrap();
        assert!(l.iter().all(|x| *x == AnchorLabel::Negative));
        assert!(label_anchors(&anchors, &[gt], 0.3, 0.7).is_err());
    }

    #[test]
    fn label_ties_pick_lowest_gt() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let l = label_anchors(&[a], &[a, a], 0.7, 0.3).unwrap();
        assert_eq!(l[0], AnchorLabel::Positive(0));
    }

    fn labels(pos: usize, neg: usize) -> Vec<AnchorLabel> {
        let mut v = vec![AnchorLabel::Positive(0); pos];
        v.extend(vec![AnchorLabel::Negative; neg]);
        v.push(AnchorLabel::Ignore);
        v
    }

    fn split_counts(l: &[AnchorLabel], idx: &[usize]) -> (usize, usize) {
        let p = idx.iter().filter(|&&i| l[i].is_positive()).count();
        let n = idx.iter().filter(|&&i| l[i] == AnchorLabel::Negative).count();
        (p, n)
    }

    #[test]
    fn sampler_fill_rules() {
        let l = labels(300, 1000);
        let s = sample_rpn_batch(&l, 256, 0.5, 7).unwrap();
        assert_eq!(split_counts(&l, &s), (128, 128));

        let l = labels(10, 1000);
        let s = sample_rpn_batch(&l, 256, 0.5, 7).unwrap();
        assert_eq!(split_counts(&l, &s), (10, 246));

        let l = labels(3, 5);
        let s = sample_rpn_batch(&l, 256, 0.5, 7).unwrap();
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn sampler_deterministic_and_errors() {
        let l = labels(300, 1000);
        assert_eq!(
            sample_rpn_batch(&l, 256, 0.5, 42).unwrap(),
            sample_rpn_batch(&l, 256, 0.5, 42).unwrap()
        );
        assert_ne!(
            sample_rpn_batch(&l, 256, 0.5, 42).unwrap(),
            sample_rpn_batch(&l, 256, 0.5, 43).unwrap()
        );
        assert_eq!(
            sample_rpn_batch(&[AnchorLabel::Ignore], 4, 0.5, 0),
            Err(Error::NoTrainableAnchors)
        );
        assert!(sample_rpn_batch(&l, 0, 0.5, 0).is_err());
        assert!(sample_rpn_batch(&l, 4, 1.0, 0).is_err());
    }

    #[test]
    fn nms_examples() {
        assert_eq!(nms(&[sb(0.0, 0.0, 1.0, 1.0, 0.3)], 0.5), vec![0]);
        let a = sb(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = sb(1.0, 1.0, 11.0, 11.0, 0.8);
        assert!((iou(&a.bbox, &b.bbox) - 81.0 / 119.0).abs() < 1e-12);
        assert_eq!(nms(&[a, b], 0.5), vec![0]);
        let far = sb(50.0, 50.0, 60.0, 60.0, 0.95);
        assert_eq!(nms(&[a, far], 0.5), vec![1, 0]);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn nms_ties_prefer_earlier_index() {
        let a = sb(0.0, 0.0, 10.0, 10.0, 0.5);
        assert_eq!(nms(&[a, a, a], 0.5), vec![0]);
    }

    #[test]
    fn propose_identity_clip_and_suppression() {
        let anchors = [
            bx(0.0, 0.0, 10.0, 10.0),
            bx(20.0, 0.0, 30.0, 10.0),
            bx(40.0, 0.0, 50.0, 10.0),
        ];
        let zeros = [BoxDelta::ZERO; 3];
        let cfg = ProposalConfig {
            post_nms_top_k: 2,
            ..ProposalConfig::default()
        };
        let out = propose(&anchors, &[0.9, 0.8, 0.7], &zeros, 100.0, 100.0, &cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].bbox, anchors[0]);
        assert_eq!(out[1].bbox, anchors[1]);

        let edge = [bx(90.0, 90.0, 110.0, 105.0)];
        let out = propose(&edge, &[0.5], &zeros[..1], 100.0, 100.0, &cfg).unwrap();
        assert_eq!(out[0].bbox, bx(90.0, 90.0, 100.0, 100.0));

        let same = [anchors[0], anchors[0]];
        let out = propose(&same, &[0.9, 0.8], &zeros[..2], 100.0, 100.0, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score(), 0.9);

        assert!(matches!(
            propose(&anchors, &[0.9], &zeros, 100.0, 100.0, &cfg),
            Err(Error::LengthMismatch { .. })
        ));
    }

    /// Direct transcription of the greedy rule: scan candidates from the
    /// best and keep each one that clears every earlier keeper.
    fn nms_oracle(boxes: &[ScoredBox], t: f64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..boxes.len()).collect();
        // selection sort keeps the tie rule explicit
        for a in 0..idx.len() {
            let mut best = a;
            for b in a + 1..idx.len() {
                let (sb, s_best) = (boxes[idx[b]].score(), boxes[idx[best]].score());
                if sb > s_best || (sb == s_best && idx[b] < idx[best]) {
                    best = b;
                }
            }
            idx.swap(a, best);
        }
        let mut kept: Vec<usize> = Vec::new();
        for &i in &idx {
            if kept.iter().all(|&k| iou(&boxes[k].bbox, &boxes[i].bbox) <= t) {
                kept.push(i);
            }
        }
        kept
    }

    fn arb_scored() -> impl Strategy<Value = ScoredBox> {
        (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64, 0u8..=10)
            .prop_map(|(x, y, w, h, s)| sb(x, y, x + w, y + h, s as f64 / 10.0))
    }

    proptest! {
        #[test]
        fn nms_matches_oracle(
            boxes in proptest::collection::vec(arb_scored(), 0..=10),
            t in 0.05..0.95f64,
        ) {
            let got = nms(&boxes, t);
            prop_assert_eq!(&got, &nms_oracle(&boxes, t));
            for w in got.windows(2) {
                prop_assert!(boxes[w[0]].score() >= boxes[w[1]].score());
            }
            for (a, &i) in got.iter().enumerate() {
                for &j in &got[a + 1..] {
                    prop_assert!(iou(&boxes[i].bbox, &boxes[j].bbox) <= t);
                }
            }
            let kept: Vec<ScoredBox> = got.iter().map(|&i| boxes[i]).collect();
            let again = nms(&kept, t);
            prop_assert_eq!(again, (0..kept.len()).collect::<Vec<_>>());
        }

        #[test]
        fn anchor_closed_forms(
            w in 1usize..6, h in 1usize..6, stride in 1.0..32.0f64,
            scales in proptest::collection::vec(1.0..200.0f64, 1..4),
            ratios in proptest::collection::vec(0.2..5.0f64, 1..4),
        ) {
            let spec = AnchorGridSpec::new(stride, scales.clone(), ratios.clone()).unwrap();
            let a = generate_anchors(w, h, &spec);
            prop_assert_eq!(a.len(), w * h * scales.len() * ratios.len());
            for (k, b) in a.iter().enumerate() {
                let r = k % ratios.len();
                let s = (k / ratios.len()) % scales.len();
                let cell = k / (ratios.len() * scales.len());
                let (i, j) = (cell % w, cell / w);
                let (cx, cy) = b.center();
                prop_assert!((cx - (i as f64 + 0.5) * stride).abs() < 1e-9);
                prop_assert!((cy - (j as f64 + 0.5) * stride).abs() < 1e-9);
                let sq = scales[s] * scales[s];
                prop_assert!((b.area() - sq).abs() <= 1e-9 * sq);
                prop_assert!((b.height() / b.width() - ratios[r]).abs() <= 1e-9 * ratios[r]);
            }
        }

        #[test]
        fn every_gt_gets_a_positive(
            gts in proptest::collection::vec((0.0..60.0f64, 0.0..60.0f64, 4.0..40.0f64, 2.0..40.0f64), 1..5),
        ) {
            let spec = AnchorGridSpec::new(8.0, vec![16.0, 32.0], vec![0.5, 1.0, 2.0]).unwrap();
            let anchors = generate_anchors(10, 10, &spec);
            let gts: Vec<BoundingBox> = gts.iter().map(|&(x, y, w, h)| bx(x, y, x + w, y + h)).collect();
            let labels = label_anchors(&anchors, &gts, 0.7, 0.3).unwrap();
            for gt in &gts {
                let best = anchors.iter().map(|a| iou(a, gt)).fold(0.0, f64::max);
                prop_assert!(best > 0.0);
                let covered = anchors.iter().zip(&labels)
                    .any(|(a, l)| l.is_positive() && iou(a, gt) == best);
                prop_assert!(covered);
            }
        }

        #[test]
        fn proposals_stay_inside(
            n in 1usize..40,
            seed in 0u64..1000,
            top in 1usize..20,
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = AnchorGridSpec::new(16.0, vec![24.0, 48.0], vec![0.5, 1.0, 2.0]).unwrap();
            let anchors: Vec<BoundingBox> = generate_anchors(6, 6, &spec).into_iter().take(n).collect();
            let scores: Vec<f64> = anchors.iter().map(|_| rng.random::<f64>()).collect();
            let deltas: Vec<BoxDelta> = anchors.iter().map(|_| BoxDelta::new(
                rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let cfg = ProposalConfig { post_nms_top_k: top, ..ProposalConfig::default() };
            let out = propose(&anchors, &scores, &deltas, 96.0, 96.0, &cfg).unwrap();
            prop_assert!(out.len() <= top);
            for p in &out {
                prop_assert!(p.bbox.is_inside(96.0, 96.0));
            }
        }
    }
}
