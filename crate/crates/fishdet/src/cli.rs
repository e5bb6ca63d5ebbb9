//! Command-line surface. Every subcommand's arguments serialize, and the
//! serialized form (the config echo) replays the run via `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "fishdet", version, about = "Two-stage fish detector toolkit", args_conflicts_with_subcommands = true)]
pub struct Cli {
    /// Replay a config echo (JSON) written by an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

/// A complete, replayable run description.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Score detection CSVs against VOC annotations.
    Evaluate(EvaluateArgs),
    /// Train the detector on a dataset directory, snapshotting and
    /// evaluating along the way.
    TrainToy(TrainArgs),
    /// Time per-image detection with a checkpoint.
    Bench(BenchArgs),
    /// Write train/val/test manifests for a dataset directory.
    Split(SplitArgs),
    /// Render a synthetic dataset directory.
    Synth(SynthArgs),
    /// Print an anchor grid as CSV.
    Anchors(AnchorsArgs),
    /// Run non-maximum suppression over a CSV of scored boxes.
    Nms(NmsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evaluate(_) => "evaluate",
            Command::TrainToy(_) => "train-toy",
            Command::Bench(_) => "bench",
            Command::Split(_) => "split",
            Command::Synth(_) => "synth",
            Command::Anchors(_) => "anchors",
            Command::Nms(_) => "nms",
        }
    }

    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("arguments serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Detection CSV files; each becomes one AP column.
    #[arg(long, num_args = 1.., required = true)]
    pub detections: Vec<PathBuf>,
    /// Column names, one per detection file (default: file stems).
    #[arg(long, num_args = 1..)]
    pub names: Vec<String>,
    /// Dataset root or a directory of VOC XML files.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Restrict ground truth to a split manifest of the dataset root.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Require IoU strictly above the threshold.
    #[arg(long)]
    pub strict: bool,
    /// all_points or eleven_point.
    #[arg(long, default_value = "all_points")]
    pub method: String,
    /// Evaluate only these species.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Evaluate only species with at least this many ground-truth objects.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Write `<out>.txt` and `<out>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset root with Annotations/, PNGImages/ and split manifests.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Run directory for checkpoints, reports and curves.
    #[arg(long)]
    pub out: PathBuf,
    /// zf, cnn-m or vgg16.
    #[arg(long, default_value = "zf")]
    pub arch: String,
    #[arg(long, default_value_t = 0.25)]
    pub width_scale: f64,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub snapshot_interval: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Region minibatch per image.
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Anchor minibatch per image.
    #[arg(long, default_value_t = 256)]
    pub rpn_batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on original images only (no mirrored copies).
    #[arg(long)]
    pub no_flip: bool,
    /// Split evaluated at every snapshot.
    #[arg(long, default_value = "test")]
    pub eval_split: String,
    /// all_points or eleven_point.
    #[arg(long, default_value = "all_points")]
    pub method: String,
    /// JSON detector configuration replacing the built-in defaults.
    #[arg(long)]
    pub detector_config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of PNG images, or a dataset root.
    #[arg(long)]
    pub images: PathBuf,
    /// Time at most this many images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Also write the statistics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n_images: usize,
    #[arg(long, default_value_t = 96)]
    pub width: u32,
    #[arg(long, default_value_t = 96)]
    pub height: u32,
    #[arg(long, default_value_t = 1)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 3)]
    pub max_objects: usize,
    /// Shortest and longest object length, pixels.
    #[arg(long, default_value_t = 28.0)]
    pub min_size: f64,
    #[arg(long, default_value_t = 48.0)]
    pub max_size: f64,
    /// Largest IoU allowed between two objects (0 keeps them apart).
    #[arg(long, default_value_t = 0.0)]
    pub max_overlap: f64,
    /// Background noise standard deviation, 0-255 scale.
    #[arg(long, default_value_t = 10.0)]
    pub noise: f64,
    /// Background rocks per image.
    #[arg(long, default_value_t = 2)]
    pub clutter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write train/val/test manifests with the default fractions.
    #[arg(long)]
    pub split: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnchorsArgs {
    #[arg(long)]
    pub feat_w: usize,
    #[arg(long)]
    pub feat_h: usize,
    #[arg(long, default_value_t = 16.0)]
    pub stride: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [64.0, 128.0, 256.0])]
    pub scales: Vec<f64>,
    /// Height / width ratios.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NmsArgs {
    /// CSV with header `xmin,ymin,xmax,ymax,score`.
    #[arg(long)]
    pub boxes: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
}
