//! Single-threaded inference latency measurement.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detect::{predict, PredictSettings};
use crate::error::{invalid, Result};
use crate::pyramid::SfpnModel;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

const BENCH_IMAGE_SEED: u64 = 0xBE7C_4000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub tag: String,
    pub input_size: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
}

impl LatencyReport {
    pub fn from_samples(tag: impl Into<String>, input_size: usize, samples_ms: &[f64]) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(invalid("latency report needs at least one sample"));
        }
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean_ms = sorted.iter().sum::<f64>() / n as f64;
        let median_ms = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        // nearest-rank percentile
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(Self {
            tag: tag.into(),
            input_size,
            iterations: n,
            mean_ms,
            median_ms,
            p95_ms: sorted[rank - 1],
            fps: 1000.0 / mean_ms,
        })
    }

    pub const CSV_HEADER: &'static str = "tag,size,mean_ms,fps";

    pub fn csv_row(&self) -> String {
        format!("{},{},{:.4},{:.3}", self.tag, self.input_size, self.mean_ms, self.fps)
    }
}

/// Model tag used in reports, e.g. `SFPN-5-SOL@224`.
pub fn model_tag<T: Scalar>(model: &SfpnModel<T>, sol: bool) -> String {
    let cfg = model.config();
    format!("{}{}@{}", cfg.variant, if sol { "-SOL" } else { "" }, cfg.input_size)
}

/// The fixed random image every benchmark run uses for a given size.
pub fn bench_image<T: Scalar>(input_size: usize) -> Tensor<T> {
    let mut rng = SplitMix64::new(BENCH_IMAGE_SEED);
    Tensor::uniform(Shape4::new(1, 3, input_size, input_size), 0.0, 1.0, &mut rng)
}

/// Times full prediction (forward, head, decode, NMS) on the calling thread.
pub fn bench_latency<T: Scalar>(
    model: &SfpnModel<T>,
    iters: usize,
    warmup: usize,
    sol: bool,
    settings: &PredictSettings,
) -> Result<LatencyReport> {
    if iters == 0 {
        return Err(invalid("bench needs at least one timed iteration"));
    }
    let size = model.config().input_size;
    let image = bench_image::<T>(size);
    for _ in 0..warmup {
        predict(model, &image, sol, settings)?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        let p = predict(model, &image, sol, settings)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(p);
    }
    LatencyReport::from_samples(model_tag(model, sol), size, &samples)
}

/// Base and SOL timed alternately, one of each per iteration, so drift in
/// machine load falls on both modes alike. Returns `(base, sol)`.
pub fn bench_latency_paired<T: Scalar>(
    model: &SfpnModel<T>,
    iters: usize,
    warmup: usize,
    settings: &PredictSettings,
) -> Result<(LatencyReport, LatencyReport)> {
    if iters == 0 {
        return Err(invalid("bench needs at least one timed iteration"));
    }
    let size = model.config().input_size;
    let image = bench_image::<T>(size);
    for _ in 0..warmup {
        predict(model, &image, false, settings)?;
        predict(model, &image, true, settings)?;
    }
    let mut samples = [Vec::with_capacity(iters), Vec::with_capacity(iters)];
    for _ in 0..iters {
        for (k, sol) in [false, true].into_iter().enumerate() {
            let t0 = Instant::now();
            let p = predict(model, &image, sol, settings)?;
            samples[k].push(t0.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(p);
        }
    }
    Ok((
        LatencyReport::from_samples(model_tag(model, false), size, &samples[0])?,
        LatencyReport::from_samples(model_tag(model, true), size, &samples[1])?,
    ))
}
