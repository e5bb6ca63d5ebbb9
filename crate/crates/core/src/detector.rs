//! The two-stage detector: a shared backbone feeding a region proposal head
//! (objectness + anchor regression) and a region classifier with
//! class-specific box regression, trained jointly with the multi-task loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ObjectAnnotation;
use crate::geometry::{clip, decode, encode, iou, BoundingBox, BoxDelta};
use crate::nn::{
    backward, conv2d, conv2d_backward, forward, fully_connected, fully_connected_backward,
    init_params, maxpool_backward, multi_task_loss, relu, relu_backward, roi_pool, sgd_step,
    smooth_l1, softmax, softmax_cross_entropy, Activations, Architecture, Init, NetworkSpec,
    Padding, ParamStore, Tensor, TrainConfig,
};
use crate::proposals::{
    generate_anchors, label_anchors, nms, propose, sample_rpn_batch, AnchorGridSpec, AnchorLabel,
    ProposalConfig, ScoredBox, PROPOSAL_LOG_SCALE_CLIP,
};
use crate::synth::RgbImage;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub arch: Architecture,
    pub width_scale: f64,
    /// `[channels, height, width]` of every input image.
    pub input_shape: [usize; 3],
    /// Foreground class names; class index `i` is `classes[i]`.
    pub classes: Vec<String>,
    /// Anchor stride must equal the backbone's total stride.
    pub anchors: AnchorGridSpec,
    pub rpn_channels: usize,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub rpn_pos_fraction: f64,
    pub train_proposals: ProposalConfig,
    pub test_proposals: ProposalConfig,
    /// Side of the pooled region grid.
    pub roi_size: usize,
    pub hidden: usize,
    pub fg_iou: f64,
    /// Regions with best IoU in `[bg_iou_lo, fg_iou)` are background.
    pub bg_iou_lo: f64,
    pub fg_fraction: f64,
    /// Regression targets are divided by these before the loss.
    pub box_std: [f64; 4],
    pub lambda: f64,
    pub init: Init,
    /// Input values are `(pixel / 255 - 0.5) * pixel_scale`.
    pub pixel_scale: f64,
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub max_detections: usize,
}

impl DetectorConfig {
    /// Settings for 96x96 scenes on a quarter-width ZF backbone.
    pub fn desk(classes: Vec<String>) -> Self {
        DetectorConfig {
            arch: Architecture::Zf,
            width_scale: 0.25,
            input_shape: [3, 96, 96],
            classes,
            anchors: AnchorGridSpec::new(8.0, vec![16.0, 24.0, 36.0, 52.0], vec![1.0 / 3.0, 0.5, 1.0])
                .expect("valid anchor grid"),
            rpn_channels: 64,
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            rpn_pos_fraction: 0.5,
            train_proposals: ProposalConfig {
                pre_nms_top_k: 2000,
                post_nms_top_k: 300,
                nms_thresh: 0.7,
                min_size: 4.0,
            },
            test_proposals: ProposalConfig {
                pre_nms_top_k: 1000,
                post_nms_top_k: 150,
                nms_thresh: 0.7,
                min_size: 4.0,
            },
            roi_size: 3,
            hidden: 128,
            fg_iou: 0.5,
            bg_iou_lo: 0.0,
            fg_fraction: 0.25,
            box_std: [0.1, 0.1, 0.2, 0.2],
            lambda: 1.0,
            init: Init::He,
            pixel_scale: 4.0,
            score_thresh: 0.05,
            nms_thresh: 0.3,
            max_detections: 100,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.classes.is_empty() {
            return bad("detector needs at least one class");
        }
        if self.rpn_channels == 0 || self.hidden == 0 || self.roi_size == 0 {
            return bad("head sizes must be >= 1");
        }
        if !(0.0 <= self.rpn_neg_iou && self.rpn_neg_iou <= self.rpn_pos_iou && self.rpn_pos_iou <= 1.0) {
            return bad("rpn IoU thresholds must satisfy 0 <= neg <= pos <= 1");
        }
        if !(0.0 <= self.bg_iou_lo && self.bg_iou_lo <= self.fg_iou && self.fg_iou <= 1.0) {
            return bad("region IoU thresholds must satisfy 0 <= bg_lo <= fg <= 1");
        }
        for f in [self.rpn_pos_fraction, self.fg_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad("sampling fractions must be in [0, 1]");
            }
        }
        if self.box_std.iter().any(|&s| !(s > 0.0)) {
            return bad("box_std entries must be > 0");
        }
        if !(self.pixel_scale > 0.0 && self.pixel_scale.is_finite()) {
            return bad("pixel_scale must be > 0");
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return bad("score_thresh must be in [0, 1]");
        }
        Ok(())
    }
}

/// A ground-truth box with its foreground class index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub class: usize,
    pub bbox: BoundingBox,
}

/// One detector output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub score: f64,
    pub bbox: BoundingBox,
}

/// Loss terms of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub head_cls: f64,
    pub head_reg: f64,
    pub total: f64,
}

/// Sampled anchors with their objectness labels and normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnBatch {
    pub indices: Vec<usize>,
    pub positive: Vec<bool>,
    pub targets: Vec<[f64; 4]>,
}

/// Sampled regions: label 0 is background, `c + 1` is class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiBatch {
    pub boxes: Vec<BoundingBox>,
    pub labels: Vec<usize>,
    pub targets: Vec<[f64; 4]>,
}

/// `[3, H, W]` tensor with values `(pixel / 255 - 0.5) * scale`.
pub fn image_tensor(image: &RgbImage, scale: f64) -> Tensor {
    let (w, h) = (image.width as usize, image.height as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in image.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = (px[c] as f64 / 255.0 - 0.5) * scale;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches pixel count")
}

/// Mirrors a `[C, H, W]` tensor and its boxes left to right.
pub fn flip_horizontal(image: &Tensor, boxes: &[LabeledBox]) -> Result<(Tensor, Vec<LabeledBox>), Error> {
    let (c, h, w) = image.dims3("flip input")?;
    let src = image.data();
    let mut data = vec![0.0; src.len()];
    for row in 0..c * h {
        for x in 0..w {
            data[row * w + x] = src[row * w + w - 1 - x];
        }
    }
    let wf = w as f64;
    let flipped = boxes
        .iter()
        .map(|b| {
            Ok(LabeledBox {
                class: b.class,
                bbox: BoundingBox::new(wf - b.bbox.xmax(), b.bbox.ymin(), wf - b.bbox.xmin(), b.bbox.ymax())?,
            })
        })
        .collect::<Result<_, Error>>()?;
    Ok((Tensor::new(image.shape().to_vec(), data)?, flipped))
}

/// Which training image (and whether mirrored) each iteration uses: epochs
/// over `n_images` (doubled with mirrored copies when `flip`), each epoch
/// freshly shuffled.
pub fn training_schedule(n_images: usize, iterations: usize, flip: bool, seed: u64) -> Vec<(usize, bool)> {
    let mut pool: Vec<(usize, bool)> = (0..n_images).map(|i| (i, false)).collect();
    if flip {
        pool.extend((0..n_images).map(|i| (i, true)));
    }
    let mut out = Vec::with_capacity(iterations);
    if pool.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < iterations {
        pool.shuffle(&mut rng);
        out.extend(pool.iter().take(iterations - out.len()));
    }
    out
}

fn mix(seed: u64, iteration: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Shared {
    acts: Activations,
    rpn_pre: Tensor,
    rpn_hidden: Tensor,
    rpn_cls: Tensor,
    rpn_reg: Tensor,
}

const RPN_CONV: &str = "rpn_conv";
const RPN_CLS: &str = "rpn_cls";
const RPN_REG: &str = "rpn_reg";
const FC6: &str = "fc6";
const CLS_SCORE: &str = "cls_score";
const BBOX_PRED: &str = "bbox_pred";

fn w(name: &str) -> String {
    format!("{name}.weight")
}

fn b(name: &str) -> String {
    format!("{name}.bias")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    config: DetectorConfig,
    backbone: NetworkSpec,
    anchors: Vec<BoundingBox>,
    params: ParamStore,
}

impl Detector {
    /// Fresh detector; all parameters derive from `seed`.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let layers = crate::nn::backbone_layers(config.arch, config.width_scale, config.input_shape)?;
        let backbone = NetworkSpec::new(config.arch.as_str(), config.input_shape, layers)?;
        let stride = backbone.total_stride() as f64;
        if stride != config.anchors.stride() {
            return Err(Error::InvalidConfig(format!(
                "anchor stride {} differs from the backbone stride {stride}",
                config.anchors.stride()
            )));
        }
        let [c, fh, fw] = backbone.output_shape()[..] else {
            return Err(Error::Shape("backbone must end in a [C, H, W] map".into()));
        };
        let anchors = generate_anchors(fw, fh, &config.anchors);

        let mut params = init_params(&backbone, config.init, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1));
        let a = config.anchors.per_cell();
        let r = config.rpn_channels;
        let k1 = config.num_classes() + 1;
        let feat = c * config.roi_size * config.roi_size;
        let he = |fan_in: usize| match config.init {
            Init::Gaussian { std } => std,
            Init::He => libm::sqrt(2.0 / fan_in as f64),
        };
        let heads: [(&str, Vec<usize>, f64); 6] = [
            (RPN_CONV, vec![r, c, 3, 3], he(c * 9)),
            (RPN_CLS, vec![2 * a, r, 1, 1], 0.01),
            (RPN_REG, vec![4 * a, r, 1, 1], 0.01),
            (FC6, vec![config.hidden, feat], he(feat)),
            (CLS_SCORE, vec![k1, config.hidden], 0.01),
            (BBOX_PRED, vec![4 * k1, config.hidden], 0.001),
        ];
        for (name, shape, std) in heads {
            params.insert(w(name), Tensor::randn(&shape, std, &mut rng));
            params.insert(b(name), Tensor::zeros(&shape[..1]));
        }
        Ok(Detector {
            config,
            backbone,
            anchors,
            params,
        })
    }

    /// Detector with stored parameters; every tensor must be present with
    /// the shape `config` implies.
    pub fn from_params(config: DetectorConfig, params: ParamStore) -> Result<Self, Error> {
        let mut det = Detector::new(config, 0)?;
        for (name, t) in det.params.iter() {
            let loaded = params.get(name).ok_or_else(|| Error::MissingParam(name.into()))?;
            loaded.expect_shape(t.shape(), name)?;
        }
        if params.len() != det.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                det.params.len(),
                params.len()
            )));
        }
        let mut ordered = ParamStore::new();
        for (name, _) in det.params.iter() {
            ordered.insert(name, params.get(name).expect("checked above").clone());
        }
        det.params = ordered;
        Ok(det)
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn backbone(&self) -> &NetworkSpec {
        &self.backbone
    }

    pub fn anchors(&self) -> &[BoundingBox] {
        &self.anchors
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Network input for `image`, which must match the configured size.
    pub fn prepare(&self, image: &RgbImage) -> Result<Tensor, Error> {
        let [_, h, w] = self.config.input_shape;
        if (image.width as usize, image.height as usize) != (w, h) {
            return Err(Error::Shape(format!(
                "image is {}x{}, detector expects {w}x{h}",
                image.width, image.height
            )));
        }
        Ok(image_tensor(image, self.config.pixel_scale))
    }

    /// Ground truth of an annotation in class-index form.
    pub fn labeled_boxes(&self, objects: &[ObjectAnnotation]) -> Result<Vec<LabeledBox>, Error> {
        objects
            .iter()
            .map(|o| {
                let class = self.config.class_index(&o.label).ok_or_else(|| {
                    Error::InvalidAnnotation(format!("label '{}' is not a detector class", o.label))
                })?;
                Ok(LabeledBox { class, bbox: o.bbox })
            })
            .collect()
    }

    fn image_size(&self) -> (f64, f64) {
        let [_, h, w] = self.config.input_shape;
        (w as f64, h as f64)
    }

    fn feature_dims(&self) -> (usize, usize, usize) {
        let s = self.backbone.output_shape();
        (s[0], s[1], s[2])
    }

    fn param(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("detector parameters are complete")
    }

    fn shared_forward(&self, image: &Tensor) -> Result<Shared, Error> {
        let acts = forward(&self.backbone, &self.params, image)?;
        let feat = acts.output();
        let rpn_pre = conv2d(feat, self.param(&w(RPN_CONV)), Some(self.param(&b(RPN_CONV))), 1, Padding::uniform(1))?;
        let rpn_hidden = relu(&rpn_pre);
        let rpn_cls = conv2d(&rpn_hidden, self.param(&w(RPN_CLS)), Some(self.param(&b(RPN_CLS))), 1, Padding::uniform(0))?;
        let rpn_reg = conv2d(&rpn_hidden, self.param(&w(RPN_REG)), Some(self.param(&b(RPN_REG))), 1, Padding::uniform(0))?;
        Ok(Shared {
            acts,
            rpn_pre,
            rpn_hidden,
            rpn_cls,
            rpn_reg,
        })
    }

    /// `(channel offset, cell)` of anchor `i` in the RPN output maps.
    fn anchor_slot(&self, i: usize) -> (usize, usize) {
        let a = self.config.anchors.per_cell();
        (i % a, i / a)
    }

    fn proposals(&self, s: &Shared, cfg: &ProposalConfig) -> Result<Vec<ScoredBox>, Error> {
        let (_, fh, fw) = self.feature_dims();
        let sp = fh * fw;
        let cls = s.rpn_cls.data();
        let reg = s.rpn_reg.data();
        let std = self.config.box_std;
        let mut objectness = Vec::with_capacity(self.anchors.len());
        let mut deltas = Vec::with_capacity(self.anchors.len());
        for i in 0..self.anchors.len() {
            let (a, cell) = self.anchor_slot(i);
            let p = softmax(&[cls[2 * a * sp + cell], cls[(2 * a + 1) * sp + cell]]);
            objectness.push(p[1]);
            let d: [f64; 4] = core::array::from_fn(|k| reg[(4 * a + k) * sp + cell] * std[k]);
            deltas.push(BoxDelta::from_array(d));
        }
        let (iw, ih) = self.image_size();
        propose(&self.anchors, &objectness, &deltas, iw, ih, cfg)
    }

    /// Labels and samples anchors against `gts`. Independent of the
    /// parameters.
    pub fn rpn_batch(&self, gts: &[LabeledBox], batch: usize, seed: u64) -> Result<RpnBatch, Error> {
        let boxes: Vec<BoundingBox> = gts.iter().map(|g| g.bbox).collect();
        let labels = label_anchors(&self.anchors, &boxes, self.config.rpn_pos_iou, self.config.rpn_neg_iou)?;
        let indices = sample_rpn_batch(&labels, batch, self.config.rpn_pos_fraction, seed)?;
        let std = self.config.box_std;
        let mut positive = Vec::with_capacity(indices.len());
        let mut targets = Vec::with_capacity(indices.len());
        for &i in &indices {
            match labels[i] {
                AnchorLabel::Positive(g) => {
                    positive.push(true);
                    let d = encode(&self.anchors[i], &boxes[g]).to_array();
                    targets.push(core::array::from_fn(|k| d[k] / std[k]));
                }
                _ => {
                    positive.push(false);
                    targets.push([0.0; 4]);
                }
            }
        }
        Ok(RpnBatch {
            indices,
            positive,
            targets,
        })
    }

    /// Region minibatch from proposals plus the ground-truth boxes.
    pub fn roi_batch(&self, proposals: &[BoundingBox], gts: &[LabeledBox], batch: usize, seed: u64) -> RoiBatch {
        let mut candidates: Vec<BoundingBox> = proposals.to_vec();
        candidates.extend(gts.iter().map(|g| g.bbox));
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for (i, c) in candidates.iter().enumerate() {
            let best = gts
                .iter()
                .enumerate()
                .map(|(j, g)| (j, iou(c, &g.bbox)))
                .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            match best {
                Some((j, v)) if v >= self.config.fg_iou => fg.push((i, j)),
                Some((_, v)) if v >= self.config.bg_iou_lo => bg.push(i),
                None if self.config.bg_iou_lo == 0.0 => bg.push(i),
                _ => {}
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fg.shuffle(&mut rng);
        bg.shuffle(&mut rng);
        let n_fg = fg.len().min(libm::round(batch as f64 * self.config.fg_fraction) as usize);
        let n_bg = bg.len().min(batch - n_fg);
        let std = self.config.box_std;
        let mut out = RoiBatch {
            boxes: Vec::with_capacity(n_fg + n_bg),
            labels: Vec::with_capacity(n_fg + n_bg),
            targets: Vec::with_capacity(n_fg + n_bg),
        };
        for &(i, j) in &fg[..n_fg] {
            let d = encode(&candidates[i], &gts[j].bbox).to_array();
            out.boxes.push(candidates[i]);
            out.labels.push(gts[j].class + 1);
            out.targets.push(core::array::from_fn(|k| d[k] / std[k]));
        }
        for &i in &bg[..n_bg] {
            out.boxes.push(candidates[i]);
            out.labels.push(0);
            out.targets.push([0.0; 4]);
        }
        out
    }

    fn head_forward(&self, feat: &Tensor, rois: &[BoundingBox]) -> Result<HeadOut, Error> {
        let scale = 1.0 / self.config.anchors.stride();
        let pooled = roi_pool(feat, rois, scale, self.config.roi_size)?;
        let n = rois.len();
        let flat = pooled.output.clone().reshape(&[n, pooled.output.len() / n.max(1)])?;
        let pre = fully_connected(&flat, self.param(&w(FC6)), self.param(&b(FC6)))?;
        let hidden = relu(&pre);
        let cls = fully_connected(&hidden, self.param(&w(CLS_SCORE)), self.param(&b(CLS_SCORE)))?;
        let reg = fully_connected(&hidden, self.param(&w(BBOX_PRED)), self.param(&b(BBOX_PRED)))?;
        Ok(HeadOut {
            argmax: pooled.argmax,
            flat,
            pre,
            hidden,
            cls,
            reg,
        })
    }

    /// Losses and parameter gradients for fixed anchor and region batches.
    pub fn loss_and_grads_with(&self, image: &Tensor, rpn: &RpnBatch, rois: &RoiBatch) -> Result<(Losses, ParamStore), Error> {
        let s = self.shared_forward(image)?;
        self.backprop(&s, rpn, rois)
    }

    /// Signature of every piecewise-linear choice (relu signs, pool
    /// switches) made on `image` with regions `rois`. The loss is smooth
    /// in the parameters wherever this stays constant.
    pub fn kink_pattern(&self, image: &Tensor, rois: &RoiBatch) -> Result<Vec<u64>, Error> {
        let s = self.shared_forward(image)?;
        let mut sig = s.acts.pattern(&self.backbone);
        sig.extend(s.rpn_pre.data().iter().map(|&v| (v > 0.0) as u64));
        if !rois.boxes.is_empty() {
            let h = self.head_forward(s.acts.output(), &rois.boxes)?;
            sig.extend(h.argmax.iter().map(|&a| a as u64));
            sig.extend(h.pre.data().iter().map(|&v| (v > 0.0) as u64));
        }
        Ok(sig)
    }

    /// Samples anchors and regions for `gts`, then returns losses and
    /// gradients. Region proposals are treated as constants.
    pub fn loss_and_grads(&self, image: &Tensor, gts: &[LabeledBox], train: &TrainConfig, seed: u64) -> Result<(Losses, ParamStore), Error> {
        let s = self.shared_forward(image)?;
        let rpn = self.rpn_batch(gts, train.rpn_batch_size, seed)?;
        let props: Vec<BoundingBox> = self
            .proposals(&s, &self.config.train_proposals)?
            .into_iter()
            .map(|p| p.bbox)
            .collect();
        let rois = self.roi_batch(&props, gts, train.batch_size, mix(seed, 2));
        self.backprop(&s, &rpn, &rois)
    }

    fn backprop(&self, s: &Shared, rpn: &RpnBatch, rois: &RoiBatch) -> Result<(Losses, ParamStore), Error> {
        let (c, fh, fw) = self.feature_dims();
        let sp = fh * fw;
        let lambda = self.config.lambda;
        let mut losses = Losses::default();

        // proposal head
        let cls = s.rpn_cls.data();
        let reg = s.rpn_reg.data();
        let mut d_cls = Tensor::zeros(s.rpn_cls.shape());
        let mut d_reg = Tensor::zeros(s.rpn_reg.shape());
        let n_rpn = rpn.indices.len().max(1) as f64;
        for (k, &i) in rpn.indices.iter().enumerate() {
            let (a, cell) = self.anchor_slot(i);
            let (c0, c1) = (2 * a * sp + cell, (2 * a + 1) * sp + cell);
            let (l, g) = softmax_cross_entropy(&[cls[c0], cls[c1]], rpn.positive[k] as usize)?;
            losses.rpn_cls += l / n_rpn;
            d_cls.data_mut()[c0] += g[0] / n_rpn;
            d_cls.data_mut()[c1] += g[1] / n_rpn;
            if rpn.positive[k] {
                let slots: [usize; 4] = core::array::from_fn(|j| (4 * a + j) * sp + cell);
                let pred = slots.map(|j| reg[j]);
                let (l, g) = smooth_l1(&pred, &rpn.targets[k])?;
                losses.rpn_reg += l / n_rpn;
                for (j, gv) in slots.iter().zip(g) {
                    d_reg.data_mut()[*j] += lambda * gv / n_rpn;
                }
            }
        }

        let mut grads = ParamStore::new();
        let feat = s.acts.output();
        let (dh_cls, dw, db) = conv2d_backward(&s.rpn_hidden, self.param(&w(RPN_CLS)), 1, Padding::uniform(0), &d_cls)?;
        grads.insert(w(RPN_CLS), dw);
        grads.insert(b(RPN_CLS), db);
        let (mut dh, dw, db) = conv2d_backward(&s.rpn_hidden, self.param(&w(RPN_REG)), 1, Padding::uniform(0), &d_reg)?;
        grads.insert(w(RPN_REG), dw);
        grads.insert(b(RPN_REG), db);
        dh.add_assign(&dh_cls)?;
        let d_pre = relu_backward(&s.rpn_pre, &dh)?;
        let (mut d_feat, dw, db) = conv2d_backward(feat, self.param(&w(RPN_CONV)), 1, Padding::uniform(1), &d_pre)?;
        grads.insert(w(RPN_CONV), dw);
        grads.insert(b(RPN_CONV), db);

        // region head
        let k1 = self.config.num_classes() + 1;
        let n = rois.boxes.len();
        if n > 0 {
            let h = self.head_forward(feat, &rois.boxes)?;
            let mut d_cls = vec![0.0; n * k1];
            let mut d_reg = vec![0.0; n * 4 * k1];
            let nf = n as f64;
            for i in 0..n {
                let label = rois.labels[i];
                let (l, g) = softmax_cross_entropy(&h.cls.data()[i * k1..(i + 1) * k1], label)?;
                losses.head_cls += l / nf;
                for (d, gv) in d_cls[i * k1..(i + 1) * k1].iter_mut().zip(g) {
                    *d = gv / nf;
                }
                if label > 0 {
                    let off = i * 4 * k1 + 4 * label;
                    let (l, g) = smooth_l1(&h.reg.data()[off..off + 4], &rois.targets[i])?;
                    losses.head_reg += l / nf;
                    for (d, gv) in d_reg[off..off + 4].iter_mut().zip(g) {
                        *d = lambda * gv / nf;
                    }
                }
            }
            let d_cls = Tensor::new(vec![n, k1], d_cls)?;
            let d_reg = Tensor::new(vec![n, 4 * k1], d_reg)?;
            let (mut d_hidden, dw, db) = fully_connected_backward(&h.hidden, self.param(&w(CLS_SCORE)), &d_cls)?;
            grads.insert(w(CLS_SCORE), dw);
            grads.insert(b(CLS_SCORE), db);
            let (dh2, dw, db) = fully_connected_backward(&h.hidden, self.param(&w(BBOX_PRED)), &d_reg)?;
            grads.insert(w(BBOX_PRED), dw);
            grads.insert(b(BBOX_PRED), db);
            d_hidden.add_assign(&dh2)?;
            let d_pre = relu_backward(&h.pre, &d_hidden)?;
            let (d_flat, dw, db) = fully_connected_backward(&h.flat, self.param(&w(FC6)), &d_pre)?;
            grads.insert(w(FC6), dw);
            grads.insert(b(FC6), db);
            let d_feat_head = maxpool_backward(&[c, fh, fw], &h.argmax, &d_flat)?;
            d_feat.add_assign(&d_feat_head)?;
        }

        let bb = backward(&self.backbone, &self.params, &s.acts, &d_feat)?;
        let rpn_total = multi_task_loss(losses.rpn_cls, losses.rpn_reg, self.config.lambda)?;
        let head_total = multi_task_loss(losses.head_cls, losses.head_reg, self.config.lambda)?;
        losses.total = rpn_total + head_total;

        // heads that saw no samples get zero gradients
        let mut ordered = ParamStore::new();
        for (name, p) in self.params.iter() {
            let g = bb
                .params
                .get(name)
                .or_else(|| grads.get(name))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()));
            ordered.insert(name, g);
        }
        Ok((losses, ordered))
    }

    /// One momentum SGD step on a single image. The anchor and region
    /// samples derive from `train.seed` and `iteration`.
    pub fn train_step(
        &mut self,
        image: &Tensor,
        gts: &[LabeledBox],
        train: &TrainConfig,
        velocity: &mut ParamStore,
        iteration: u64,
    ) -> Result<Losses, Error> {
        let (losses, grads) = self.loss_and_grads(image, gts, train, mix(train.seed, iteration))?;
        sgd_step(&mut self.params, &grads, train, velocity)?;
        Ok(losses)
    }

    /// Scored, class-wise suppressed detections, best first.
    pub fn detect(&self, image: &Tensor) -> Result<Vec<Detection>, Error> {
        let s = self.shared_forward(image)?;
        let props = self.proposals(&s, &self.config.test_proposals)?;
        if props.is_empty() {
            return Ok(Vec::new());
        }
        let rois: Vec<BoundingBox> = props.iter().map(|p| p.bbox).collect();
        let h = self.head_forward(s.acts.output(), &rois)?;
        let k = self.config.num_classes();
        let k1 = k + 1;
        let (iw, ih) = self.image_size();
        let std = self.config.box_std;
        let probs: Vec<Vec<f64>> = h.cls.data().chunks(k1).map(softmax).collect();
        let mut out = Vec::new();
        for class in 0..k {
            let mut cands = Vec::new();
            for (i, roi) in rois.iter().enumerate() {
                let score = probs[i][class + 1];
                if score < self.config.score_thresh {
                    continue;
                }
                let off = i * 4 * k1 + 4 * (class + 1);
                let r = &h.reg.data()[off..off + 4];
                let d = BoxDelta::new(
                    r[0] * std[0],
                    r[1] * std[1],
                    (r[2] * std[2]).min(PROPOSAL_LOG_SCALE_CLIP),
                    (r[3] * std[3]).min(PROPOSAL_LOG_SCALE_CLIP),
                );
                let Some(bbox) = decode(roi, &d).ok().and_then(|bx| clip(&bx, iw, ih)) else {
                    continue;
                };
                cands.push(ScoredBox::new(bbox, score.clamp(0.0, 1.0))?);
            }
            for i in nms(&cands, self.config.nms_thresh) {
                out.push(Detection {
                    class,
                    score: cands[i].score(),
                    bbox: cands[i].bbox,
                });
            }
        }
        // stable sort: equal scores keep class order
        out.sort_by(|a, b| b.score.total_cmp(&a.score));
        out.truncate(self.config.max_detections);
        Ok(out)
    }
}

struct HeadOut {
    argmax: Vec<usize>,
    flat: Tensor,
    pre: Tensor,
    hidden: Tensor,
    cls: Tensor,
    reg: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn classes() -> Vec<String> {
        vec!["a".to_string(), "b".to_string()]
    }

    #[test]
    fn desk_shapes() {
        let d = Detector::new(DetectorConfig::desk(classes()), 0).unwrap();
        assert_eq!(d.backbone().output_shape(), &[64, 12, 12]);
        assert_eq!(d.anchors().len(), 12 * 12 * 12);
        assert_eq!(d.params().get("cls_score.weight").unwrap().shape(), &[3, 128]);
        assert_eq!(d.params().get("bbox_pred.weight").unwrap().shape(), &[12, 128]);
    }

    #[test]
    fn stride_mismatch_rejected() {
        let mut cfg = DetectorConfig::desk(classes());
        cfg.anchors = AnchorGridSpec::new(16.0, vec![32.0], vec![1.0]).unwrap();
        assert!(matches!(Detector::new(cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn from_params_round_trip() {
        let d = Detector::new(DetectorConfig::desk(classes()), 3).unwrap();
        let e = Detector::from_params(d.config().clone(), d.params().clone()).unwrap();
        assert_eq!(d, e);
        let mut missing = d.params().clone();
        missing = {
            let mut p = ParamStore::new();
            for (n, t) in missing.iter().skip(1) {
                p.insert(n, t.clone());
            }
            p
        };
        assert!(Detector::from_params(d.config().clone(), missing).is_err());
    }

    #[test]
    fn schedule_is_epochwise() {
        let s = training_schedule(5, 12, true, 1);
        assert_eq!(s.len(), 12);
        let mut first: Vec<_> = s[..10].to_vec();
        first.sort();
        let want: Vec<_> = (0..5).flat_map(|i| [(i, false), (i, true)]).collect();
        let mut want = want;
        want.sort();
        assert_eq!(first, want);
        assert_eq!(s, training_schedule(5, 12, true, 1));
    }

    #[test]
    fn flip_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::randn(&[3, 4, 6], 1.0, &mut rng);
        let bx = [LabeledBox {
            class: 0,
            bbox: BoundingBox::new(1.0, 0.0, 2.5, 3.0).unwrap(),
        }];
        let (f, fb) = flip_horizontal(&t, &bx).unwrap();
        assert_eq!(fb[0].bbox, BoundingBox::new(3.5, 0.0, 5.0, 3.0).unwrap());
        let (g, gb) = flip_horizontal(&f, &fb).unwrap();
        assert_eq!(g, t);
        assert_eq!(gb[0].bbox, bx[0].bbox);
    }

    #[test]
    fn roi_batch_respects_fractions() {
        let d = Detector::new(DetectorConfig::desk(classes()), 0).unwrap();
        let gt = [LabeledBox {
            class: 1,
            bbox: BoundingBox::new(10.0, 10.0, 50.0, 40.0).unwrap(),
        }];
        let props: Vec<BoundingBox> = (0..60)
            .map(|i| {
                let o = i as f64;
                BoundingBox::new(o * 0.5, o * 0.5, 40.0 + o * 0.5, 30.0 + o * 0.5).unwrap()
            })
            .collect();
        let r = d.roi_batch(&props, &gt, 16, 0);
        let fg = r.labels.iter().filter(|&&l| l > 0).count();
        assert_eq!(fg, 4);
        assert_eq!(r.boxes.len(), 16);
        assert!(r.labels.iter().all(|&l| l == 0 || l == 2));
    }

    #[test]
    fn detections_are_valid() {
        let d = Detector::new(DetectorConfig::desk(classes()), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::randn(&[3, 96, 96], 0.2, &mut rng);
        let dets = d.detect(&img).unwrap();
        assert!(dets.len() <= 100);
        for w in dets.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for x in &dets {
            assert!(x.bbox.is_inside(96.0, 96.0));
            assert!(x.score >= 0.05 && x.class < 2);
        }
    }
}
