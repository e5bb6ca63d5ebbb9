//! Sequential layer stacks: declaration, shape checking, the three backbone
//! families, receptive-field bookkeeping, and whole-network
//! forward/backward passes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv2d, conv2d_backward, fully_connected, fully_connected_backward, maxpool,
    maxpool_backward, relu, relu_backward, softmax, softmax_backward, window_output, Padding,
};
use super::tensor::{ParamStore, Tensor};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: Padding,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    /// Flattens its input and applies an affine map.
    FullyConnected {
        out_features: usize,
    },
    /// Softmax over the flattened input.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, pad: Padding) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            },
        }
    }

    pub fn relu(name: &str) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Relu,
        }
    }

    pub fn maxpool(name: &str, size: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::MaxPool { size, stride },
        }
    }

    pub fn fully_connected(name: &str, out_features: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::FullyConnected { out_features },
        }
    }

    pub fn softmax(name: &str) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Softmax,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. }
        )
    }
}

/// A shape-checked sequential stack over a declared `[C, H, W]` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkSpec {
    pub fn new(name: &str, input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self, Error> {
        let shapes = infer_shapes(&input_shape, &layers)?;
        Ok(NetworkSpec {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer, in order.
    pub fn output_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape[..], |s| &s[..])
    }

    /// Input shape of layer `i`.
    fn shape_into(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    /// Product of all conv and pool strides.
    pub fn total_stride(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => stride,
                _ => 1,
            })
            .product()
    }

    /// Input channel count for layer `i` plus the weight tensor shape.
    fn weight_shape(&self, i: usize) -> Option<Vec<usize>> {
        let input = self.shape_into(i);
        match self.layers[i].kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, input[0], kernel, kernel]),
            LayerKind::FullyConnected { out_features } => {
                Some(vec![out_features, input.iter().product()])
            }
            _ => None,
        }
    }
}

fn infer_shapes(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>, Error> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input.to_vec();
    for (index, layer) in layers.iter().enumerate() {
        let fail = |message: String| Error::AtLayer {
            index,
            layer: layer.name.clone(),
            message,
        };
        let next = match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let [_, h, w] = cur[..] else {
                    return Err(fail(format!("conv needs a [C, H, W] input, got {cur:?}")));
                };
                if out_channels == 0 {
                    return Err(fail("conv with zero output channels".into()));
                }
                match (
                    window_output(h, kernel, stride, pad.total()),
                    window_output(w, kernel, stride, pad.total()),
                ) {
                    (Some(ho), Some(wo)) => vec![out_channels, ho, wo],
                    _ => {
                        return Err(fail(format!(
                            "input {h}x{w} too small or not tiled by {kernel}x{kernel}/{stride} conv"
                        )))
                    }
                }
            }
            LayerKind::MaxPool { size, stride } => {
                let [c, h, w] = cur[..] else {
                    return Err(fail(format!("pool needs a [C, H, W] input, got {cur:?}")));
                };
                match (
                    window_output(h, size, stride, 0),
                    window_output(w, size, stride, 0),
                ) {
                    (Some(ho), Some(wo)) => vec![c, ho, wo],
                    _ => {
                        return Err(fail(format!(
                            "input {h}x{w} too small or not tiled by {size}x{size}/{stride} pool"
                        )))
                    }
                }
            }
            LayerKind::FullyConnected { out_features } => {
                if out_features == 0 {
                    return Err(fail("fully connected layer with zero outputs".into()));
                }
                vec![out_features]
            }
            LayerKind::Relu | LayerKind::Softmax => cur.clone(),
        };
        shapes.push(next.clone());
        cur = next;
    }
    Ok(shapes)
}

/// Receptive-field size (pixels) after each layer of the stack.
///
/// Uses `rf += (k - 1) * jump; jump *= stride`; elementwise layers leave
/// both unchanged.
pub fn receptive_field_of(layers: &[LayerSpec]) -> Result<Vec<usize>, Error> {
    let mut rf = 1usize;
    let mut jump = 1usize;
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers {
        match layer.kind {
            LayerKind::Conv { kernel, stride, .. } => {
                rf += (kernel - 1) * jump;
                jump *= stride;
            }
            LayerKind::MaxPool { size, stride } => {
                rf += (size - 1) * jump;
                jump *= stride;
            }
            LayerKind::Relu | LayerKind::Softmax => {}
            LayerKind::FullyConnected { .. } => return Err(Error::ReceptiveFieldUndefined),
        }
        out.push(rf);
    }
    Ok(out)
}

pub fn receptive_field(spec: &NetworkSpec) -> Result<Vec<usize>, Error> {
    receptive_field_of(spec.layers())
}

/// Weight initialization for conv and fully connected layers. Biases
/// always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Fixed standard deviation.
    Gaussian { std: f64 },
    /// `std = sqrt(2 / fan_in)`.
    He,
}

impl Default for Init {
    fn default() -> Self {
        Init::Gaussian { std: 0.01 }
    }
}

impl Init {
    fn std(&self, fan_in: usize) -> f64 {
        match *self {
            Init::Gaussian { std } => std,
            Init::He => libm::sqrt(2.0 / fan_in.max(1) as f64),
        }
    }
}

/// Fresh parameters for every weighted layer of `spec`.
pub fn init_params(spec: &NetworkSpec, init: Init, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    for (i, layer) in spec.layers().iter().enumerate() {
        if let Some(shape) = spec.weight_shape(i) {
            let fan_in: usize = shape[1..].iter().product();
            params.insert(
                layer.weight_name(),
                Tensor::randn(&shape, init.std(fan_in), &mut rng),
            );
            params.insert(layer.bias_name(), Tensor::zeros(&shape[..1]));
        }
    }
    params
}

/// Backbone families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Zf,
    CnnM,
    Vgg16,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Zf => "zf",
            Architecture::CnnM => "cnn-m",
            Architecture::Vgg16 => "vgg16",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "zf" => Ok(Architecture::Zf),
            "cnn-m" | "cnnm" | "cnn_m" => Ok(Architecture::CnnM),
            "vgg16" | "vgg-16" | "vgg_16" => Ok(Architecture::Vgg16),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture '{other}' (expected zf, cnn-m or vgg16)"
            ))),
        }
    }
}

/// Padding that gives `ceil(n / stride)` outputs, extra on the far side.
fn same_padding(n: usize, kernel: usize, stride: usize) -> Padding {
    let out = n.div_ceil(stride);
    let total = ((out.max(1) - 1) * stride + kernel).saturating_sub(n);
    Padding::asymmetric(total / 2, total - total / 2)
}

struct StackBuilder {
    layers: Vec<LayerSpec>,
    h: usize,
    w: usize,
    scale: f64,
}

impl StackBuilder {
    fn channels(&self, full: usize) -> usize {
        (libm::floor(full as f64 * self.scale) as usize).max(1)
    }

    fn conv(&mut self, name: &str, full_channels: usize, kernel: usize, stride: usize) {
        // padding is sized from the running shape; a bad fit surfaces in
        // NetworkSpec::new with the layer name
        let pad = same_padding(self.h.min(self.w), kernel, stride);
        let out = self.channels(full_channels);
        self.layers
            .push(LayerSpec::conv(name, out, kernel, stride, pad));
        if let Some(h) = window_output(self.h, kernel, stride, pad.total()) {
            self.h = h;
        }
        if let Some(w) = window_output(self.w, kernel, stride, pad.total()) {
            self.w = w;
        }
        let relu_name = name.replacen("conv", "relu", 1);
        self.layers.push(LayerSpec::relu(&relu_name));
    }

    fn pool(&mut self, name: &str) {
        self.layers.push(LayerSpec::maxpool(name, 2, 2));
        self.h /= 2;
        self.w /= 2;
    }
}

/// Layer stack for one of the backbone families, with channel counts
/// multiplied by `width_scale` (floored, at least 1).
///
/// * ZF: 7x7/2 first conv, 5x5/1 second conv, three 3x3 convs (layer 4
///   with 1024 filters at full width), 2x2/2 pooling after the first two
///   convs.
/// * CNN-M: ZF with a stride-2 second conv and 512 filters in layer 4.
/// * VGG-16: the thirteen 3x3/1 convs of VGG-16 in five blocks, 2x2/2
///   pooling between blocks; the fully connected classifier layers are
///   replaced by the detection heads.
pub fn backbone_layers(
    arch: Architecture,
    width_scale: f64,
    input_shape: [usize; 3],
) -> Result<Vec<LayerSpec>, Error> {
    if !(width_scale > 0.0 && width_scale <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "width_scale must be in (0, 1], got {width_scale}"
        )));
    }
    let [_, h, w] = input_shape;
    let mut b = StackBuilder {
        layers: Vec::new(),
        h,
        w,
        scale: width_scale,
    };
    match arch {
        Architecture::Zf | Architecture::CnnM => {
            let (conv2_stride, conv4_filters) = match arch {
                Architecture::Zf => (1, 1024),
                _ => (2, 512),
            };
            b.conv("conv1", 96, 7, 2);
            b.pool("pool1");
            b.conv("conv2", 256, 5, conv2_stride);
            b.pool("pool2");
            b.conv("conv3", 384, 3, 1);
            b.conv("conv4", conv4_filters, 3, 1);
            b.conv("conv5", 256, 3, 1);
        }
        Architecture::Vgg16 => {
            let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
            for (bi, &(filters, depth)) in blocks.iter().enumerate() {
                for li in 0..depth {
                    b.conv(&format!("conv{}_{}", bi + 1, li + 1), filters, 3, 1);
                }
                if bi + 1 < blocks.len() {
                    b.pool(&format!("pool{}", bi + 1));
                }
            }
        }
    }
    Ok(b.layers)
}

/// A network declaration together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

/// Builds and initializes a backbone. Deterministic in `seed`.
pub fn build_backbone(
    arch: Architecture,
    width_scale: f64,
    input_shape: [usize; 3],
    init: Init,
    seed: u64,
) -> Result<Network, Error> {
    let layers = backbone_layers(arch, width_scale, input_shape)?;
    let spec = NetworkSpec::new(arch.as_str(), input_shape, layers)?;
    let params = init_params(&spec, init, seed);
    Ok(Network { spec, params })
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    pub values: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("input is always present")
    }

    /// Activations of every `Relu` layer, paired with max-pool switch
    /// positions. Two passes with equal patterns follow the same linear
    /// piece of the network.
    pub fn pattern(&self, spec: &NetworkSpec) -> Vec<u64> {
        let mut sig = Vec::new();
        for (i, layer) in spec.layers().iter().enumerate() {
            match layer.kind {
                LayerKind::Relu => {
                    sig.extend(self.values[i].data().iter().map(|&v| (v > 0.0) as u64));
                }
                LayerKind::MaxPool { .. } => {
                    if let Some(a) = &self.argmax[i] {
                        sig.extend(a.iter().map(|&v| v as u64));
                    }
                }
                _ => {}
            }
        }
        sig
    }
}

/// Parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ParamStore,
    pub input: Tensor,
}

fn at_layer(index: usize, spec: &NetworkSpec) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::AtLayer { .. } => e,
        other => Error::AtLayer {
            index,
            layer: spec.layers()[index].name.clone(),
            message: other.to_string(),
        },
    }
}

pub fn forward(spec: &NetworkSpec, params: &ParamStore, input: &Tensor) -> Result<Activations, Error> {
    input.expect_shape(spec.input_shape(), "network input")?;
    let mut values = Vec::with_capacity(spec.layers().len() + 1);
    let mut argmax = Vec::with_capacity(spec.layers().len());
    values.push(input.clone());
    for (i, layer) in spec.layers().iter().enumerate() {
        let x = &values[i];
        let err = at_layer(i, spec);
        let (y, am) = match layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let w = params.require(&layer.weight_name()).map_err(&err)?;
                let b = params.require(&layer.bias_name()).map_err(&err)?;
                (conv2d(x, w, Some(b), stride, pad).map_err(&err)?, None)
            }
            LayerKind::Relu => (relu(x), None),
            LayerKind::MaxPool { size, stride } => {
                let p = maxpool(x, size, stride).map_err(&err)?;
                (p.output, Some(p.argmax))
            }
            LayerKind::FullyConnected { .. } => {
                let w = params.require(&layer.weight_name()).map_err(&err)?;
                let b = params.require(&layer.bias_name()).map_err(&err)?;
                let flat = x.clone().reshape(&[x.len()]).map_err(&err)?;
                (fully_connected(&flat, w, b).map_err(&err)?, None)
            }
            LayerKind::Softmax => {
                let p = softmax(x.data());
                (Tensor::new(x.shape().to_vec(), p).map_err(&err)?, None)
            }
        };
        values.push(y);
        argmax.push(am);
    }
    Ok(Activations { values, argmax })
}

/// Backpropagates `loss_grad` (gradient with respect to the network output).
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamStore,
    acts: &Activations,
    loss_grad: &Tensor,
) -> Result<Gradients, Error> {
    if acts.values.len() != spec.layers().len() + 1 {
        return Err(Error::Shape(
            "activations do not belong to this network".into(),
        ));
    }
    loss_grad.expect_shape(spec.output_shape(), "loss gradient")?;
    let mut grads = ParamStore::new();
    let mut g = loss_grad.clone();
    for (i, layer) in spec.layers().iter().enumerate().rev() {
        let x = &acts.values[i];
        let err = at_layer(i, spec);
        g = match layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let w = params.require(&layer.weight_name()).map_err(&err)?;
                let (dx, dw, db) = conv2d_backward(x, w, stride, pad, &g).map_err(&err)?;
                grads.insert(layer.bias_name(), db);
                grads.insert(layer.weight_name(), dw);
                dx
            }
            LayerKind::Relu => relu_backward(x, &g).map_err(&err)?,
            LayerKind::MaxPool { .. } => {
                let am = acts.argmax[i].as_ref().expect("pool layers record argmax");
                maxpool_backward(x.shape(), am, &g).map_err(&err)?
            }
            LayerKind::FullyConnected { .. } => {
                let w = params.require(&layer.weight_name()).map_err(&err)?;
                let flat = x.clone().reshape(&[x.len()]).map_err(&err)?;
                let (dx, dw, db) = fully_connected_backward(&flat, w, &g).map_err(&err)?;
                grads.insert(layer.bias_name(), db);
                grads.insert(layer.weight_name(), dw);
                dx.reshape(x.shape()).map_err(&err)?
            }
            LayerKind::Softmax => {
                let y = &acts.values[i + 1];
                let d = softmax_backward(y.data(), g.data());
                Tensor::new(x.shape().to_vec(), d).map_err(&err)?
            }
        };
    }
    // gradients were collected back to front
    let mut ordered = ParamStore::new();
    for (name, _) in params.iter() {
        if let Some(t) = grads.get(name) {
            ordered.insert(name, t.clone());
        }
    }
    Ok(Gradients {
        params: ordered,
        input: g,
    })
}

impl Network {
    pub fn forward(&self, input: &Tensor) -> Result<Activations, Error> {
        forward(&self.spec, &self.params, input)
    }

    pub fn backward(&self, acts: &Activations, loss_grad: &Tensor) -> Result<Gradients, Error> {
        backward(&self.spec, &self.params, acts, loss_grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convs(spec: &NetworkSpec) -> Vec<(usize, usize, usize)> {
        spec.layers()
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => Some((out_channels, kernel, stride)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn zf_first_kernel_is_seven() {
        for scale in [0.05, 0.25, 1.0] {
            let net = build_backbone(Architecture::Zf, scale, [3, 96, 96], Init::He, 1).unwrap();
            let c = convs(&net.spec);
            assert_eq!((c[0].1, c[0].2), (7, 2));
            assert_eq!(c[1].2, 1);
        }
    }

    #[test]
    fn cnn_m_deltas() {
        let net = build_backbone(Architecture::CnnM, 1.0, [3, 96, 96], Init::default(), 1).unwrap();
        let c = convs(&net.spec);
        assert_eq!(c[3].0, 512);
        assert_eq!(c[1].2, 2);
        let zf = backbone_layers(Architecture::Zf, 1.0, [3, 96, 96]).unwrap();
        let zf = NetworkSpec::new("zf", [3, 96, 96], zf).unwrap();
        assert_eq!(convs(&zf)[3].0, 1024);
        assert_eq!(zf.total_stride(), 8);
        assert_eq!(net.spec.total_stride(), 16);
    }

    #[test]
    fn vgg_is_all_three_by_three() {
        let layers = backbone_layers(Architecture::Vgg16, 0.125, [3, 64, 64]).unwrap();
        let spec = NetworkSpec::new("vgg16", [3, 64, 64], layers).unwrap();
        let c = convs(&spec);
        assert_eq!(c.len(), 13);
        assert!(c.iter().all(|&(_, k, s)| k == 3 && s == 1));
        for l in spec.layers() {
            if let LayerKind::MaxPool { size, stride } = l.kind {
                assert_eq!((size, stride), (2, 2));
            }
        }
        assert_eq!(spec.output_shape(), &[64, 4, 4]);
    }

    #[test]
    fn width_scale_floors_with_minimum_one() {
        let layers = backbone_layers(Architecture::Zf, 0.25, [3, 96, 96]).unwrap();
        let spec = NetworkSpec::new("zf", [3, 96, 96], layers).unwrap();
        let ch: Vec<usize> = convs(&spec).iter().map(|c| c.0).collect();
        assert_eq!(ch, vec![24, 64, 96, 256, 64]);
        assert_eq!(spec.output_shape(), &[64, 12, 12]);
        let tiny = backbone_layers(Architecture::Zf, 0.001, [3, 32, 32]).unwrap();
        assert!(convs(&NetworkSpec::new("zf", [3, 32, 32], tiny).unwrap())
            .iter()
            .all(|c| c.0 == 1));
        assert!(backbone_layers(Architecture::Zf, 0.0, [3, 32, 32]).is_err());
        assert!(backbone_layers(Architecture::Zf, 1.5, [3, 32, 32]).is_err());
    }

    #[test]
    fn too_small_input_names_layer() {
        let err = build_backbone(Architecture::Vgg16, 0.1, [3, 8, 8], Init::He, 0).unwrap_err();
        match err {
            Error::AtLayer { layer, .. } => assert_eq!(layer, "pool4"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_backbone(Architecture::Zf, 0.1, [3, 2, 2], Init::He, 0).is_err());
    }

    #[test]
    fn receptive_field_cases() {
        let triple = [
            LayerSpec::conv("a", 1, 3, 1, Padding::uniform(1)),
            LayerSpec::relu("r"),
            LayerSpec::conv("b", 1, 3, 1, Padding::uniform(1)),
            LayerSpec::conv("c", 1, 3, 1, Padding::uniform(1)),
        ];
        assert_eq!(receptive_field_of(&triple).unwrap(), vec![3, 3, 5, 7]);
        let single = [LayerSpec::conv("a", 1, 7, 1, Padding::uniform(3))];
        assert_eq!(receptive_field_of(&single).unwrap(), vec![7]);
        let one = [LayerSpec::conv("a", 1, 1, 1, Padding::default())];
        assert_eq!(receptive_field_of(&one).unwrap(), vec![1]);
        let mixed = [
            LayerSpec::conv("a", 1, 3, 1, Padding::uniform(1)),
            LayerSpec::maxpool("p", 2, 2),
            LayerSpec::conv("b", 1, 3, 1, Padding::uniform(1)),
        ];
        assert_eq!(receptive_field_of(&mixed).unwrap(), vec![3, 4, 8]);
        let fc = [LayerSpec::fully_connected("f", 2)];
        assert_eq!(receptive_field_of(&fc), Err(Error::ReceptiveFieldUndefined));
    }

    #[test]
    fn init_is_seeded() {
        let a = build_backbone(Architecture::Zf, 0.1, [3, 32, 32], Init::default(), 9).unwrap();
        let b = build_backbone(Architecture::Zf, 0.1, [3, 32, 32], Init::default(), 9).unwrap();
        let c = build_backbone(Architecture::Zf, 0.1, [3, 32, 32], Init::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        assert!(a
            .params
            .iter()
            .filter(|(n, _)| n.ends_with(".bias"))
            .all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_input_gives_zero_activations() {
        let net = build_backbone(Architecture::Zf, 0.1, [3, 32, 32], Init::He, 3).unwrap();
        let acts = net.forward(&Tensor::zeros(&[3, 32, 32])).unwrap();
        for v in &acts.values[2..] {
            assert!(v.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic_and_checks_input() {
        let net = build_backbone(Architecture::CnnM, 0.1, [3, 32, 32], Init::He, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[3, 32, 32], 1.0, &mut rng);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert!(net.forward(&Tensor::zeros(&[3, 16, 16])).is_err());
    }

    #[test]
    fn one_layer_linear_gradient_closed_form() {
        // y = W x + b, L = sum(r * y): dL/dW = r x^T, dL/db = r, dL/dx = W^T r
        let spec = NetworkSpec::new("lin", [2, 1, 1], vec![LayerSpec::fully_connected("fc", 2)]).unwrap();
        let mut params = ParamStore::new();
        params.insert("fc.weight", Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        params.insert("fc.bias", Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        let x = Tensor::new(vec![2, 1, 1], vec![5., -1.]).unwrap();
        let acts = forward(&spec, &params, &x).unwrap();
        assert_eq!(acts.output().data(), &[3.5, 10.5]);
        let r = Tensor::new(vec![2], vec![2., -3.]).unwrap();
        let g = backward(&spec, &params, &acts, &r).unwrap();
        assert_eq!(g.params.get("fc.weight").unwrap().data(), &[10., -2., -15., 3.]);
        assert_eq!(g.params.get("fc.bias").unwrap().data(), &[2., -3.]);
        assert_eq!(g.input.data(), &[-7., -8.]);
    }

    #[test]
    fn softmax_layer_outputs_distribution() {
        let spec = NetworkSpec::new(
            "cls",
            [1, 2, 2],
            vec![LayerSpec::fully_connected("fc", 3), LayerSpec::softmax("prob")],
        )
        .unwrap();
        let params = init_params(&spec, Init::Gaussian { std: 1.0 }, 4);
        let acts = forward(&spec, &params, &Tensor::filled(&[1, 2, 2], 0.7)).unwrap();
        let s: f64 = acts.output().data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!("ZF".parse::<Architecture>().unwrap(), Architecture::Zf);
        assert_eq!("cnn-m".parse::<Architecture>().unwrap(), Architecture::CnnM);
        assert_eq!("vgg-16".parse::<Architecture>().unwrap(), Architecture::Vgg16);
        assert!("alexnet".parse::<Architecture>().is_err());
    }

    mod smoke {
        use super::*;
        use crate::nn::{sgd_step, softmax_cross_entropy, TrainConfig};
        use proptest::prelude::*;
        use rand::Rng;

        fn separable(seed: u64, n: usize) -> Vec<([f64; 2], usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|i| {
                    let label = i % 2;
                    let along: f64 = rng.random_range(1.0..3.0);
                    let across: f64 = rng.random_range(-3.0..3.0);
                    let s = if label == 1 { along } else { -along };
                    ([s + across, s - across], label)
                })
                .collect()
        }

        fn mean_loss(net: &Network, data: &[([f64; 2], usize)]) -> (f64, ParamStore) {
            let mut total = 0.0;
            let mut grads = ParamStore::new();
            let n = data.len() as f64;
            for (x, y) in data {
                let input = Tensor::new(vec![2, 1, 1], x.to_vec()).unwrap();
                let acts = net.forward(&input).unwrap();
                let (l, g) = softmax_cross_entropy(acts.output().data(), *y).unwrap();
                total += l / n;
                let g = Tensor::new(vec![2], g.iter().map(|v| v / n).collect()).unwrap();
                let gr = net.backward(&acts, &g).unwrap();
                grads.accumulate(&gr.params).unwrap();
            }
            (total, grads)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(6))]
            #[test]
            fn separable_problem_is_learned(seed in 0u64..1000) {
                let spec = NetworkSpec::new(
                    "toy",
                    [2, 1, 1],
                    vec![
                        LayerSpec::fully_connected("fc1", 16),
                        LayerSpec::relu("relu1"),
                        LayerSpec::fully_connected("fc2", 2),
                    ],
                )
                .unwrap();
                let params = init_params(&spec, Init::He, seed);
                let mut net = Network { spec, params };
                let data = separable(seed, 40);
                let cfg = TrainConfig { learning_rate: 0.001, ..TrainConfig::default() };
                let mut velocity = ParamStore::new();
                let mut loss = f64::INFINITY;
                for _ in 0..500 {
                    let (l, g) = mean_loss(&net, &data);
                    loss = l;
                    if loss < 0.1 {
                        break;
                    }
                    sgd_step(&mut net.params, &g, &cfg, &mut velocity).unwrap();
                }
                prop_assert!(loss < 0.1, "cross-entropy {loss}");
            }
        }
    }
}
