//! Per-image detection latency.

use std::time::Instant;

use fishdet_core::detector::Detector;
use fishdet_core::nn::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub n: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    /// `1 / mean_s`.
    pub fps: f64,
    pub samples_s: Vec<f64>,
}

impl BenchStats {
    /// Summary of raw timings; `None` without samples.
    pub fn from_samples(samples: Vec<f64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        // nearest rank
        let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(BenchStats {
            n,
            mean_s: mean,
            median_s: median,
            p95_s: p95,
            fps: 1.0 / mean,
            samples_s: samples,
        })
    }

    pub fn render(&self) -> String {
        format!(
            "images\t{}\nmean_s\t{:.6}\nmedian_s\t{:.6}\np95_s\t{:.6}\nfps\t{:.3}\n",
            self.n, self.mean_s, self.median_s, self.p95_s, self.fps
        )
    }
}

/// Times `detect` once per image.
pub fn bench(det: &Detector, images: &[Tensor]) -> anyhow::Result<BenchStats> {
    if images.is_empty() {
        anyhow::bail!("no images");
    }
    let mut samples = Vec::with_capacity(images.len());
    for img in images {
        let t = Instant::now();
        let dets = det.detect(img)?;
        samples.push(t.elapsed().as_secs_f64());
        std::hint::black_box(dets);
    }
    Ok(BenchStats::from_samples(samples).expect("non-empty"))
}
