//! Forward-only self-supervised objective: view synthesis by inverse warping,
//! SSIM + L1 photometric error, per-pixel minimum reprojection across source
//! frames, auto-masking of stationary pixels, and edge-aware disparity
//! smoothness. Nothing here computes gradients.

use std::cmp::Ordering;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::LossError;
use crate::network::{disp_to_depth, DepthOutputs, DepthRange};
use crate::tensor::{Dims, Tensor};

/// Weight of the SSIM term in the photometric error.
pub const SSIM_WEIGHT: f32 = 0.85;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Margin added to the identity error before comparing it with the warped error.
pub const AUTOMASK_EPSILON: f32 = 1e-5;
pub const DEFAULT_SMOOTHNESS_WEIGHT: f64 = 1e-3;

/// Pinhole intrinsics in pixels, valid at `width` x `height`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, LossError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(LossError::Intrinsics {
                fx: self.fx,
                fy: self.fy,
            });
        }
        Ok(())
    }

    /// Rescales linearly to another resolution.
    pub fn for_resolution(&self, width: usize, height: usize) -> CameraIntrinsics {
        if width == self.width && height == self.height {
            return *self;
        }
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Rigid transform taking target-camera points into the source camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, LossError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = (rotation.determinant() - 1.0).abs();
        let dev = ortho.max(det);
        if dev.is_nan() || dev > Self::ORTHONORMAL_TOLERANCE {
            return Err(LossError::Rotation(dev));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_rows(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, LossError> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        Self::new(r, Vector3::from(translation))
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
}

/// Source pixel coordinates `(u, v)` that each target pixel maps to.
pub fn reprojection_grid(
    depth: &Tensor,
    k: &CameraIntrinsics,
    pose: &Pose,
) -> Result<Vec<(f64, f64)>, LossError> {
    let d = depth.dims();
    let k = k.for_resolution(d.w, d.h);
    if let Some(&bad) = depth.data().iter().find(|&&z| z.is_nan() || z <= 0.0) {
        return Err(LossError::NonPositiveDepth(bad));
    }
    let r = &pose.rotation;
    let t = &pose.translation;
    let mut grid = Vec::with_capacity(depth.data().len());
    for n in 0..d.n {
        for y in 0..d.h {
            for x in 0..d.w {
                let z = depth.at(n, 0, y, x) as f64;
                let p = Vector3::new(
                    (x as f64 - k.cx) / k.fx * z,
                    (y as f64 - k.cy) / k.fy * z,
                    z,
                );
                let q = r * p + t;
                // Points behind the camera project far away and end up border-clamped.
                let zq = q.z.max(1e-7);
                grid.push((k.fx * q.x / zq + k.cx, k.fy * q.y / zq + k.cy));
            }
        }
    }
    Ok(grid)
}

/// Bilinear sample of one plane with coordinates clamped to the border.
fn sample_bilinear(plane: &[f32], h: usize, w: usize, u: f64, v: f64) -> f32 {
    // Reprojection round-off lands integer grids ~1e-13 px off; snap it back.
    let snap = |c: f64| {
        if (c - c.round()).abs() < 1e-9 {
            c.round()
        } else {
            c
        }
    };
    let (u, v) = (snap(u), snap(v));
    let u = if u.is_nan() {
        0.0
    } else {
        u.clamp(0.0, (w - 1) as f64)
    };
    let v = if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, (h - 1) as f64)
    };
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (u - x0 as f64, v - y0 as f64);
    let at = |y: usize, x: usize| plane[y * w + x] as f64;
    let top = at(y0, x0) * (1.0 - ax) + at(y0, x1) * ax;
    let bottom = at(y1, x0) * (1.0 - ax) + at(y1, x1) * ax;
    (top * (1.0 - ay) + bottom * ay) as f32
}

/// Synthesises the target view from `source` using target depth and the relative pose.
pub fn warp_to_target(
    source: &Tensor,
    depth: &Tensor,
    k: &CameraIntrinsics,
    pose: &Pose,
) -> Result<Tensor, LossError> {
    let (s, d) = (source.dims(), depth.dims());
    if d.c != 1 || d.n != s.n || d.h != s.h || d.w != s.w {
        return Err(crate::error::TensorError::ExtentMismatch { left: s, right: d }.into());
    }
    let grid = reprojection_grid(depth, k, pose)?;
    let plane = s.plane();
    let mut out = vec![0.0f32; s.len()];
    for n in 0..s.n {
        let coords = &grid[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            let src = source.plane(n, c);
            let dst = &mut out[(n * s.c + c) * plane..][..plane];
            for (o, &(u, v)) in dst.iter_mut().zip(coords) {
                *o = sample_bilinear(src, s.h, s.w, u, v);
            }
        }
    }
    Ok(Tensor::from_vec(s, out)?)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// 3x3 box mean with one pixel of reflection padding.
fn box3(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -1..=1isize {
                let yy = reflect(y as isize + dy, h);
                for dx in -1..=1isize {
                    s += plane[yy * w + reflect(x as isize + dx, w)];
                }
            }
            out[y * w + x] = s / 9.0;
        }
    }
    out
}

/// Per-pixel, per-channel SSIM over 3x3 reflection-padded windows.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<Tensor, LossError> {
    let d = a.dims();
    if b.dims() != d {
        return Err(crate::error::TensorError::ExtentMismatch {
            left: d,
            right: b.dims(),
        }
        .into());
    }
    let (h, w) = (d.h, d.w);
    let mut out = Vec::with_capacity(d.len());
    for n in 0..d.n {
        for c in 0..d.c {
            let pa: Vec<f64> = a.plane(n, c).iter().map(|&v| v as f64).collect();
            let pb: Vec<f64> = b.plane(n, c).iter().map(|&v| v as f64).collect();
            let prod =
                |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
            let mu_a = box3(&pa, h, w);
            let mu_b = box3(&pb, h, w);
            let e_aa = box3(&prod(&pa, &pa), h, w);
            let e_bb = box3(&prod(&pb, &pb), h, w);
            let e_ab = box3(&prod(&pa, &pb), h, w);
            for i in 0..h * w {
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let var_a = e_aa[i] - ma * ma;
                let var_b = e_bb[i] - mb * mb;
                let cov = e_ab[i] - ma * mb;
                let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
                out.push((num / den).clamp(-1.0, 1.0) as f32);
            }
        }
    }
    Ok(Tensor::from_vec(d, out)?)
}

/// `(alpha / 2) * (1 - ssim) + (1 - alpha) * l1` for one pixel and channel.
pub fn photometric_blend(ssim: f32, l1: f32) -> f32 {
    SSIM_WEIGHT / 2.0 * (1.0 - ssim) + (1.0 - SSIM_WEIGHT) * l1
}

/// Channel-averaged photometric error, shape (N, 1, H, W).
pub fn photometric_error(pred: &Tensor, target: &Tensor) -> Result<Tensor, LossError> {
    let s = ssim(pred, target)?;
    let d = pred.dims();
    let plane = d.plane();
    let mut out = vec![0.0f32; d.n * plane];
    for n in 0..d.n {
        let dst = &mut out[n * plane..(n + 1) * plane];
        for c in 0..d.c {
            let (p, t, q) = (pred.plane(n, c), target.plane(n, c), s.plane(n, c));
            for i in 0..plane {
                dst[i] += photometric_blend(q[i], (p[i] - t[i]).abs());
            }
        }
        dst.iter_mut().for_each(|v| *v = (*v / d.c as f32).max(0.0));
    }
    Ok(Tensor::from_vec(Dims::new(d.n, 1, d.h, d.w), out)?)
}

/// `true` where a pixel is kept: the best unwarped error plus the margin does
/// not beat the best warped error.
pub fn automask(identity_min: &[f32], warped_min: &[f32]) -> Vec<bool> {
    identity_min
        .iter()
        .zip(warped_min)
        .map(|(&id, &wp)| (id + AUTOMASK_EPSILON).partial_cmp(&wp) != Some(Ordering::Less))
        .collect()
}

fn elementwise_min(maps: &[Tensor]) -> Vec<f32> {
    let mut out = maps[0].data().to_vec();
    for m in &maps[1..] {
        out.iter_mut()
            .zip(m.data())
            .for_each(|(a, &b)| *a = a.min(b));
    }
    out
}

/// Bilinear resize (half-pixel centres) of every plane to `h` x `w`.
pub fn resize_bilinear(t: &Tensor, h: usize, w: usize) -> Tensor {
    let d = t.dims();
    if d.h == h && d.w == w {
        return t.clone();
    }
    let (sy, sx) = (d.h as f64 / h as f64, d.w as f64 / w as f64);
    let mut out = Vec::with_capacity(d.n * d.c * h * w);
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = t.plane(n, c);
            for y in 0..h {
                let v = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
                for x in 0..w {
                    let u = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                    out.push(sample_bilinear(plane, d.h, d.w, u, v));
                }
            }
        }
    }
    Tensor::from_vec(Dims::new(d.n, d.c, h, w), out).expect("sizes computed above")
}

/// Box-average downsampling by an integer factor.
fn downsample_mean(t: &Tensor, factor: usize) -> Tensor {
    if factor == 1 {
        return t.clone();
    }
    let d = t.dims();
    let (h, w) = (d.h / factor, d.w / factor);
    let norm = (factor * factor) as f64;
    let mut out = Vec::with_capacity(d.n * d.c * h * w);
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = t.plane(n, c);
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0f64;
                    for yy in y * factor..(y + 1) * factor {
                        for xx in x * factor..(x + 1) * factor {
                            s += plane[yy * d.w + xx] as f64;
                        }
                    }
                    out.push((s / norm) as f32);
                }
            }
        }
    }
    Tensor::from_vec(Dims::new(d.n, d.c, h, w), out).expect("sizes computed above")
}

/// Edge-aware smoothness of mean-normalised disparity against an image of the same size.
pub fn smoothness(disp: &Tensor, image: &Tensor) -> f64 {
    let (d, di) = (disp.dims(), image.dims());
    debug_assert_eq!((d.n, d.h, d.w), (di.n, di.h, di.w));
    let (h, w) = (d.h, d.w);
    let (mut gx_sum, mut gy_sum) = (0.0f64, 0.0f64);
    for n in 0..d.n {
        let plane = disp.plane(n, 0);
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64;
        let norm: Vec<f64> = plane.iter().map(|&v| v as f64 / (mean + 1e-7)).collect();
        let img_grad = |y0: usize, x0: usize, y1: usize, x1: usize| {
            (0..di.c)
                .map(|c| (image.at(n, c, y0, x0) as f64 - image.at(n, c, y1, x1) as f64).abs())
                .sum::<f64>()
                / di.c as f64
        };
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                let g = (norm[y * w + x] - norm[y * w + x + 1]).abs();
                gx_sum += g * (-img_grad(y, x, y, x + 1)).exp();
            }
        }
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                let g = (norm[y * w + x] - norm[(y + 1) * w + x]).abs();
                gy_sum += g * (-img_grad(y, x, y + 1, x)).exp();
            }
        }
    }
    let nx = (d.n * h * w.saturating_sub(1)).max(1) as f64;
    let ny = (d.n * h.saturating_sub(1) * w).max(1) as f64;
    gx_sum / nx + gy_sum / ny
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub smoothness_weight: f64,
    pub depth_range: DepthRange,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            smoothness_weight: DEFAULT_SMOOTHNESS_WEIGHT,
            depth_range: DepthRange::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleLoss {
    pub scale: usize,
    /// Masked mean of the per-pixel minimum warped error.
    pub photometric: f64,
    /// Smoothness already multiplied by `smoothness_weight / 2^scale`.
    pub smoothness: f64,
    pub total: f64,
    /// Fraction of pixels kept by the auto-mask.
    pub kept_fraction: f64,
    #[serde(skip)]
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub scales: Vec<ScaleLoss>,
}

fn check_sources(target: &Tensor, sources: &[Tensor], poses: &[Pose]) -> Result<(), LossError> {
    if sources.is_empty() {
        return Err(LossError::NoSources);
    }
    if sources.len() != poses.len() {
        return Err(LossError::PoseCount {
            sources: sources.len(),
            poses: poses.len(),
        });
    }
    if let Some(s) = sources.iter().find(|s| s.dims() != target.dims()) {
        return Err(crate::error::TensorError::ExtentMismatch {
            left: target.dims(),
            right: s.dims(),
        }
        .into());
    }
    Ok(())
}

/// Loss term for one prediction scale; `disp` is at 1/2^scale resolution.
pub fn scale_loss(
    disp: &Tensor,
    scale: usize,
    target: &Tensor,
    sources: &[Tensor],
    poses: &[Pose],
    k: &CameraIntrinsics,
    opts: &LossOptions,
) -> Result<ScaleLoss, LossError> {
    check_sources(target, sources, poses)?;
    k.validate()?;
    let td = target.dims();
    let disp_full = resize_bilinear(disp, td.h, td.w);
    // Photometric terms always live at full resolution.
    assert_eq!(disp_full.dims(), Dims::new(td.n, 1, td.h, td.w));
    let depth = disp_to_depth(&disp_full, opts.depth_range);

    let warped_errors = sources
        .iter()
        .zip(poses)
        .map(|(src, pose)| photometric_error(&warp_to_target(src, &depth, k, pose)?, target))
        .collect::<Result<Vec<_>, _>>()?;
    let identity_errors = sources
        .iter()
        .map(|src| photometric_error(src, target))
        .collect::<Result<Vec<_>, _>>()?;
    let warped_min = elementwise_min(&warped_errors);
    let identity_min = elementwise_min(&identity_errors);
    let mask = automask(&identity_min, &warped_min);

    let (sum, kept) = warped_min
        .iter()
        .zip(&mask)
        .filter(|(_, &keep)| keep)
        .fold((0.0f64, 0usize), |(s, n), (&e, _)| (s + e as f64, n + 1));
    let photometric = if kept == 0 { 0.0 } else { sum / kept as f64 };

    let factor = 1usize << scale;
    let image = downsample_mean(target, factor);
    let smooth = if opts.smoothness_weight == 0.0 {
        0.0
    } else {
        opts.smoothness_weight / factor as f64 * smoothness(disp, &image)
    };
    Ok(ScaleLoss {
        scale,
        photometric,
        smoothness: smooth,
        total: photometric + smooth,
        kept_fraction: kept as f64 / mask.len() as f64,
        mask,
    })
}

/// Mean over all predicted scales of the per-scale loss.
pub fn total_loss(
    outputs: &DepthOutputs,
    target: &Tensor,
    sources: &[Tensor],
    poses: &[Pose],
    k: &CameraIntrinsics,
    opts: &LossOptions,
) -> Result<LossBreakdown, LossError> {
    check_sources(target, sources, poses)?;
    let count = outputs.len();
    if count == 0 {
        return Err(LossError::Scales {
            available: 0,
            requested: 1,
        });
    }
    let scales = (0..count)
        .map(|s| {
            let disp = outputs.get(s).expect("consecutive scales");
            scale_loss(disp, s, target, sources, poses, k, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total = scales.iter().map(|s| s.total).sum::<f64>() / count as f64;
    Ok(LossBreakdown { total, scales })
}
