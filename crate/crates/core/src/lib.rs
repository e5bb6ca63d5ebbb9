//! Core kernels of a two-stage (region proposal + region classifier)
//! object detector, written against `alloc` only so they run anywhere.
//!
//! * [`geometry`] boxes, IoU and box-delta coding
//! * [`proposals`] anchors, anchor labeling, minibatch sampling, NMS
//! * [`nn`] tensors, layers, backbones, backprop and SGD
//! * [`detector`] the proposal and classifier heads trained end to end
//! * [`gradcheck`] finite-difference gradient checking
//! * [`eval`] TP/FP matching, precision/recall, AP and mAP
//! * [`dataset`] annotation records, splits and class filtering
//! * [`synth`] procedurally rendered fish-like scenes with exact boxes
//!
//! File formats and the command-line front end live in the `fishdet` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

use alloc::string::String;
use alloc::vec::Vec;

pub mod dataset;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod nn;
pub mod proposals;
pub mod synth;

pub use geometry::{BoundingBox, BoxDelta};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box: {0}")]
    InvalidBox(&'static str),
    #[error("box delta overflows the numeric range")]
    DeltaOverflow,
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no trainable anchors")]
    NoTrainableAnchors,
    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layer {index} ({layer}): {message}")]
    AtLayer {
        index: usize,
        layer: String,
        message: String,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("receptive field undefined past flatten")]
    ReceptiveFieldUndefined,
    #[error("unknown AP method '{0}'")]
    UnknownMethod(String),
    #[error("no classes evaluated")]
    NoClasses,
    #[error("detections reference unknown image ids: {}", .0.join(", "))]
    UnknownImages(Vec<String>),
    #[error("duplicate checkpoint iteration {0}")]
    DuplicateIteration(u64),
    #[error("checkpoint iterations must be strictly increasing")]
    UnorderedIterations,
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
}
