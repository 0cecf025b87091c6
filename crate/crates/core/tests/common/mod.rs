//! Reference implementations used as independent oracles by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtmd::eval::{DepthMap, DepthMetrics};
use rtmd::tensor::{Dims, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, dims: Dims) -> Tensor {
    let data = (0..dims.len())
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

/// Six nested loops over (n, o, y, x, c, tap), zero padding 1, f64 accumulation.
pub fn conv2d_oracle(
    input: &[f32],
    dims: Dims,
    kernel: &[f32],
    bias: &[f32],
    out_channels: usize,
    stride: usize,
) -> (Dims, Vec<f32>) {
    let out_h = (dims.h + 2 - 3) / stride + 1;
    let out_w = (dims.w + 2 - 3) / stride + 1;
    let mut out = vec![0.0f32; dims.n * out_channels * out_h * out_w];
    for n in 0..dims.n {
        for o in 0..out_channels {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = bias[o] as f64;
                    for c in 0..dims.c {
                        for t in 0..9 {
                            let (ky, kx) = (t / 3, t % 3);
                            let iy = (oy * stride + ky) as isize - 1;
                            let ix = (ox * stride + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= dims.h as isize || ix >= dims.w as isize {
                                continue;
                            }
                            let v = input
                                [((n * dims.c + c) * dims.h + iy as usize) * dims.w + ix as usize];
                            acc += v as f64 * kernel[(o * dims.c + c) * 9 + t] as f64;
                        }
                    }
                    out[((n * out_channels + o) * out_h + oy) * out_w + ox] = acc as f32;
                }
            }
        }
    }
    (Dims::new(dims.n, out_channels, out_h, out_w), out)
}

/// Straight per-pixel loop over the printed metric definitions.
pub fn metrics_oracle(
    pred: &DepthMap,
    gt: &DepthMap,
    min_depth: f64,
    max_depth: f64,
) -> DepthMetrics {
    let mut n = 0u64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut deltas = [0u64; 3];
    for i in 0..gt.values().len() {
        let d = gt.values()[i] as f64;
        if !(d > min_depth && d <= max_depth) {
            continue;
        }
        let mut p = pred.values()[i] as f64;
        if p < min_depth {
            p = min_depth;
        }
        if p > max_depth {
            p = max_depth;
        }
        n += 1;
        abs_rel += (d - p).abs() / d;
        sq_rel += (d - p).abs().powi(2) / d;
        sq += (d - p).abs().powi(2);
        sq_log += (d.log10() - p.log10()).abs().powi(2);
        let r = if d / p > p / d { d / p } else { p / d };
        for (j, thr) in [1.25f64, 1.5625, 1.953125].iter().enumerate() {
            if r < *thr {
                deltas[j] += 1;
            }
        }
    }
    let nf = n as f64;
    DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: deltas[0] as f64 / nf,
        delta2: deltas[1] as f64 / nf,
        delta3: deltas[2] as f64 / nf,
        n_pixels: n,
    }
}

pub fn random_depth_map(rng: &mut impl Rng, h: usize, w: usize, invalid_fraction: f64) -> DepthMap {
    let values = (0..h * w)
        .map(|_| {
            if rng.gen_bool(invalid_fraction) {
                0.0
            } else {
                rng.gen_range(0.5f32..90.0)
            }
        })
        .collect();
    DepthMap::new(h, w, values)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn metrics_close(a: &DepthMetrics, b: &DepthMetrics, tol: f64) -> bool {
    a.n_pixels == b.n_pixels
        && close(a.abs_rel, b.abs_rel, tol)
        && close(a.sq_rel, b.sq_rel, tol)
        && close(a.rmse, b.rmse, tol)
        && close(a.rmse_log, b.rmse_log, tol)
        && close(a.delta1, b.delta1, tol)
        && close(a.delta2, b.delta2, tol)
        && close(a.delta3, b.delta3, tol)
}

/// Maximum relative error `|a - b| / max(|b|, 1)` over two slices.
pub fn max_rel_err(actual: &[f32], expected: &[f32]) -> f64 {
    actual
        .iter()
        .zip(expected)
        .map(|(&a, &b)| (a as f64 - b as f64).abs() / (b.abs() as f64).max(1.0))
        .fold(0.0, f64::max)
}
