//! A small double-precision tensor and backprop engine: the layer set of
//! the ZF, CNN-M and VGG-16 feature extractors, the detection losses, and
//! momentum SGD.

mod layers;
mod network;
mod sgd;
mod tensor;

pub use layers::{
    conv2d, conv2d_backward, fully_connected, fully_connected_backward, masked_box_regression,
    maxpool, maxpool_backward, multi_task_loss, relu, relu_backward, roi_pool, smooth_l1,
    smooth_l1_tensor,
    softmax, softmax_backward, softmax_cross_entropy, window_output, Padding, Pooled,
};
pub use network::{
    backbone_layers, backward, build_backbone, forward, init_params, receptive_field,
    receptive_field_of, Activations, Architecture, Gradients, Init, LayerKind, LayerSpec, Network,
    NetworkSpec,
};
pub use sgd::{sgd_step, TrainConfig};
pub use tensor::{ParamStore, Tensor};
