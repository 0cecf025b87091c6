//! Depth ground-truth I/O and the six standard error/accuracy metrics.
//!
//! Depth PNGs follow the KITTI convention: 16-bit grayscale, metres = value / 256,
//! zero marks a missing measurement.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

/// Scale between stored 16-bit values and metres.
pub const PNG_DEPTH_SCALE: f32 = 256.0;

pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;
pub const DEFAULT_MAX_DEPTH: f64 = 80.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), height * width, "depth map size");
        DepthMap {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        let v = self.get(y, x);
        v.is_finite() && v > 0.0
    }
}

pub fn load_depth_png16(path: impl AsRef<Path>) -> Result<DepthMap, EvalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let png_err = |e: png::DecodingError| EvalError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale {
        return Err(EvalError::Format {
            path: path.to_path_buf(),
            found: format!("{:?} {}-bit", info.color_type, info.bit_depth as u8),
        });
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let values = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / PNG_DEPTH_SCALE)
        .collect();
    Ok(DepthMap::new(height, width, values))
}

/// Encodes metres as `round(depth * 256)` clamped to the u16 range; invalid pixels become 0.
pub fn depth_to_png16_value(depth: f32) -> u16 {
    if !depth.is_finite() || depth <= 0.0 {
        return 0;
    }
    (depth * PNG_DEPTH_SCALE)
        .round()
        .clamp(0.0, u16::MAX as f32) as u16
}

pub fn save_depth_png16(map: &DepthMap, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let io_err = |source: std::io::Error| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let png_err = |e: png::EncodingError| EvalError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), map.width as u32, map.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder.write_header().map_err(png_err)?;
    let data: Vec<u8> = map
        .values
        .iter()
        .flat_map(|&d| depth_to_png16_value(d).to_be_bytes())
        .collect();
    writer.write_image_data(&data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Half-open pixel rectangle `[top, bottom) x [left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Crop {
    /// The crop of Garg et al. used by many KITTI evaluations.
    pub fn garg(height: usize, width: usize) -> Crop {
        let (h, w) = (height as f64, width as f64);
        Crop {
            top: (0.408_108_11 * h) as usize,
            bottom: (0.991_891_89 * h) as usize,
            left: (0.035_947_71 * w) as usize,
            right: (0.964_052_29 * w) as usize,
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub min_depth: f64,
    pub max_depth: f64,
    pub crop: Option<Crop>,
    pub median_scale: bool,
}

impl EvalOptions {
    pub fn kitti() -> Self {
        EvalOptions {
            min_depth: DEFAULT_MIN_DEPTH,
            max_depth: DEFAULT_MAX_DEPTH,
            crop: None,
            median_scale: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels: u64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Metrics over pixels with valid ground truth in `(min_depth, max_depth]`
/// inside the crop. Predictions are optionally median-scaled, then clamped
/// to `[min_depth, max_depth]`. The log error uses base 10.
pub fn compute_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    opts: &EvalOptions,
) -> Result<DepthMetrics, EvalError> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(EvalError::SizeMismatch {
            pred_w: pred.width,
            pred_h: pred.height,
            gt_w: gt.width,
            gt_h: gt.height,
        });
    }
    let (lo, hi) = (opts.min_depth, opts.max_depth);
    if !(lo > 0.0 && lo < hi) {
        return Err(EvalError::DepthRange(lo, hi));
    }
    if let Some(c) = opts.crop {
        if c.top >= c.bottom || c.left >= c.right || c.bottom > gt.height || c.right > gt.width {
            return Err(EvalError::Crop(c));
        }
    }

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for y in 0..gt.height {
        for x in 0..gt.width {
            if !gt.is_valid(y, x) {
                continue;
            }
            let d = gt.get(y, x) as f64;
            if d <= lo || d > hi || opts.crop.is_some_and(|c| !c.contains(y, x)) {
                continue;
            }
            pairs.push((d, pred.get(y, x) as f64));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptyEvaluation {
            min_depth: lo,
            max_depth: hi,
        });
    }

    if opts.median_scale {
        let mut g: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let ratio = median(&mut g) / median(&mut p);
        pairs.iter_mut().for_each(|p| p.1 *= ratio);
    }
    // NaN predictions clamp to the lower bound rather than poisoning the means.
    pairs
        .iter_mut()
        .for_each(|p| p.1 = if p.1.is_nan() { lo } else { p.1.clamp(lo, hi) });

    let n = pairs.len() as f64;
    let mut m = DepthMetrics {
        abs_rel: 0.0,
        sq_rel: 0.0,
        rmse: 0.0,
        rmse_log: 0.0,
        delta1: 0.0,
        delta2: 0.0,
        delta3: 0.0,
        n_pixels: pairs.len() as u64,
    };
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for &(d, p) in &pairs {
        let diff = d - p;
        m.abs_rel += diff.abs() / d;
        m.sq_rel += diff * diff / d;
        m.rmse += diff * diff;
        m.rmse_log += (d.log10() - p.log10()).powi(2);
        let ratio = (d / p).max(p / d);
        m.delta1 += (ratio < thresholds[0]) as u8 as f64;
        m.delta2 += (ratio < thresholds[1]) as u8 as f64;
        m.delta3 += (ratio < thresholds[2]) as u8 as f64;
    }
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = (m.rmse / n).sqrt();
    m.rmse_log = (m.rmse_log / n).sqrt();
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    Ok(m)
}

/// Unweighted per-image mean of every metric; `n_pixels` is summed.
pub fn aggregate(per_image: &[DepthMetrics]) -> Result<DepthMetrics, EvalError> {
    if per_image.is_empty() {
        return Err(EvalError::EmptyAggregate);
    }
    let n = per_image.len() as f64;
    let mean = |f: fn(&DepthMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    Ok(DepthMetrics {
        abs_rel: mean(|m| m.abs_rel),
        sq_rel: mean(|m| m.sq_rel),
        rmse: mean(|m| m.rmse),
        rmse_log: mean(|m| m.rmse_log),
        delta1: mean(|m| m.delta1),
        delta2: mean(|m| m.delta2),
        delta3: mean(|m| m.delta3),
        n_pixels: per_image.iter().map(|m| m.n_pixels).sum(),
    })
}

impl std::fmt::Display for DepthMetrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3"
        )?;
        write!(
            f,
            "{:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f32]) -> DepthMap {
        DepthMap::new(1, values.len(), values.to_vec())
    }

    #[test]
    fn identity_is_perfect() {
        let gt = map(&[2.0, 5.0, 10.0, 79.0]);
        let m = compute_metrics(&gt, &gt, &EvalOptions::kitti()).unwrap();
        assert_eq!(
            (m.abs_rel, m.sq_rel, m.rmse, m.rmse_log),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn uniform_twenty_percent_overshoot() {
        let gt_vals = [2.0f32, 4.0, 10.0, 50.0];
        let pred: Vec<f32> = gt_vals.iter().map(|v| v * 1.2).collect();
        let m = compute_metrics(&map(&pred), &map(&gt_vals), &EvalOptions::kitti()).unwrap();
        let mean_gt = gt_vals.iter().map(|&v| v as f64).sum::<f64>() / 4.0;
        assert!((m.abs_rel - 0.2).abs() < 1e-6);
        assert!((m.sq_rel - 0.04 * mean_gt).abs() < 1e-5);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn invalid_and_out_of_range_gt_skipped() {
        let gt = map(&[0.0, 90.0, 10.0, f32::NAN]);
        let pred = map(&[1.0, 1.0, 10.0, 1.0]);
        let m = compute_metrics(&pred, &gt, &EvalOptions::kitti()).unwrap();
        assert_eq!(m.n_pixels, 1);
        assert_eq!(m.abs_rel, 0.0);
    }

    #[test]
    fn empty_set_is_an_error() {
        let gt = map(&[0.0, 0.0]);
        assert!(matches!(
            compute_metrics(&gt, &gt, &EvalOptions::kitti()),
            Err(EvalError::EmptyEvaluation { .. })
        ));
    }

    #[test]
    fn predictions_are_clamped() {
        let gt = map(&[80.0]);
        let pred = map(&[500.0]);
        let m = compute_metrics(&pred, &gt, &EvalOptions::kitti()).unwrap();
        assert_eq!(m.abs_rel, 0.0);
    }

    #[test]
    fn crop_restricts_pixels() {
        let gt = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let opts = EvalOptions {
            crop: Some(Crop {
                top: 1,
                bottom: 2,
                left: 0,
                right: 1,
            }),
            ..EvalOptions::kitti()
        };
        assert_eq!(compute_metrics(&gt, &gt, &opts).unwrap().n_pixels, 1);
        let bad = EvalOptions {
            crop: Some(Crop {
                top: 0,
                bottom: 3,
                left: 0,
                right: 1,
            }),
            ..EvalOptions::kitti()
        };
        assert!(matches!(
            compute_metrics(&gt, &gt, &bad),
            Err(EvalError::Crop(_))
        ));
    }

    #[test]
    fn garg_crop_at_kitti_resolution() {
        let c = Crop::garg(375, 1242);
        assert_eq!((c.top, c.bottom, c.left, c.right), (153, 371, 44, 1197));
    }

    #[test]
    fn aggregate_cases() {
        let a =
            compute_metrics(&map(&[1.0, 3.0]), &map(&[2.0, 3.0]), &EvalOptions::kitti()).unwrap();
        let b = compute_metrics(&map(&[4.0]), &map(&[5.0]), &EvalOptions::kitti()).unwrap();
        assert_eq!(aggregate(&[a]).unwrap(), a);
        let twice = aggregate(&[a, a]).unwrap();
        assert_eq!(twice.abs_rel, a.abs_rel);
        assert_eq!(twice.n_pixels, 2 * a.n_pixels);
        let ab = aggregate(&[a, b]).unwrap();
        let ba = aggregate(&[b, a]).unwrap();
        assert_eq!(ab, ba);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn png_value_encoding() {
        assert_eq!(depth_to_png16_value(100.0), 25600);
        assert_eq!(depth_to_png16_value(0.0), 0);
        assert_eq!(depth_to_png16_value(1e6), u16::MAX);
        assert_eq!(depth_to_png16_value(f32::NAN), 0);
    }
}
