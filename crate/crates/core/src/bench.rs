//! Latency measurement: a fixed number of discarded warm-up forwards followed
//! by individually timed forwards, one monotonic-clock reading pair around
//! each call. Input generation happens once, outside the timed region.

use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::BenchError;
use crate::network::Network;
use crate::tensor::Tensor;

pub const DEFAULT_WARMUP: usize = 1000;
pub const DEFAULT_ITERS: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// One image per forward call.
    Online,
    /// `batch` images per forward call.
    Offline,
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "online" => Ok(BenchMode::Online),
            "offline" => Ok(BenchMode::Offline),
            other => Err(format!(
                "unknown mode `{other}`; expected online or offline"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iters: usize,
    pub mode: BenchMode,
    pub batch: usize,
    /// Seed for the synthetic input image.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup: DEFAULT_WARMUP,
            iters: DEFAULT_ITERS,
            mode: BenchMode::Online,
            batch: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.batch == 0 {
            return Err(BenchError::ZeroBatch);
        }
        if self.mode == BenchMode::Online && self.batch != 1 {
            return Err(BenchError::OnlineBatch(self.batch));
        }
        if self.iters == 0 {
            return Err(BenchError::NoIterations);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(samples: &[f64]) -> Summary {
    assert!(!samples.is_empty());
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        mean,
        std: var.sqrt(),
        p50: percentile(&sorted, 50.0),
        p90: percentile(&sorted, 90.0),
        p99: percentile(&sorted, 99.0),
    }
}

/// Calls `step` `warmup` times untimed, then `iters` times timed.
pub fn measure<E>(
    warmup: usize,
    iters: usize,
    mut step: impl FnMut() -> Result<(), E>,
) -> Result<Vec<f64>, E> {
    for _ in 0..warmup {
        step()?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        step()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(samples)
}

pub fn host_descriptor() -> String {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{}-{} cpus={} pool_threads={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        threads,
        rayon::current_num_threads()
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub variant: String,
    pub config_fingerprint: String,
    pub resolution: String,
    pub mode: BenchMode,
    pub batch: usize,
    pub active_heads: usize,
    pub macs_per_forward: u64,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub mean: f64,
    pub std: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    /// Forward calls per second, `1 / mean`.
    pub fps: f64,
    /// Images per second, `batch / mean`.
    pub images_per_second: f64,
    pub host: String,
    /// Per-iteration wall times in seconds.
    pub samples: Vec<f64>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `iteration,seconds` rows with round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,seconds\n");
        for (i, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{i},{s:?}\n"));
        }
        out
    }
}

/// Fixed pseudo-random image in [0, 1).
pub fn synthetic_input(net: &Network, batch: usize, seed: u64) -> Tensor {
    let dims = net.input_dims(batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.len()).map(|_| rng.gen::<f32>()).collect();
    Tensor::from_vec(dims, data).expect("network input extents are valid")
}

pub fn run_benchmark(net: &Network, cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let input = synthetic_input(net, cfg.batch, cfg.seed);
    let samples = measure(cfg.warmup, cfg.iters, || {
        black_box(net.forward(black_box(&input))?);
        Ok::<_, BenchError>(())
    })?;
    let s = summarize(&samples);
    let arch = net.config();
    Ok(BenchReport {
        variant: arch.variant.clone(),
        config_fingerprint: arch.fingerprint(),
        resolution: arch.resolution().to_string(),
        mode: cfg.mode,
        batch: cfg.batch,
        active_heads: net.active_heads(),
        macs_per_forward: net.active_macs() * cfg.batch as u64,
        warmup_iters: cfg.warmup,
        measured_iters: samples.len(),
        mean: s.mean,
        std: s.std,
        p50: s.p50,
        p90: s.p90,
        p99: s.p99,
        fps: 1.0 / s.mean,
        images_per_second: cfg.batch as f64 / s.mean,
        host: host_descriptor(),
        samples,
    })
}
