//! Dense NCHW tensors and the handful of kernels the depth network needs.
//!
//! Every kernel is a pure function: inputs are borrowed immutably and a new
//! tensor is returned. Convolution is lowered to im2col + SGEMM over fixed-size
//! bands of output rows, so results do not depend on the number of worker
//! threads.

use rayon::prelude::*;

use crate::error::TensorError;

/// Slope applied to negative inputs by [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f32 = 0.01;

/// Largest `f32` strictly below one.
const SIGMOID_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

/// Target size (in f32 elements) of one im2col band.
const CONV_BAND_ELEMS: usize = 1 << 17;

/// Below this many output channels stride-1 convs skip im2col.
const DIRECT_MAX_OUT: usize = 4;

/// Extents of a 4-D tensor in batch, channel, height, width order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(dims: Dims, data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0 {
            return Err(TensorError::ZeroExtent(dims));
        }
        if data.len() != dims.len() {
            return Err(TensorError::DataLength {
                dims,
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn full(dims: Dims, value: f32) -> Result<Self, TensorError> {
        Self::from_vec(dims, vec![value; dims.len()])
    }

    pub fn zeros(dims: Dims) -> Result<Self, TensorError> {
        Self::full(dims, 0.0)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let d = self.dims;
        self.data[((n * d.c + c) * d.h + y) * d.w + x]
    }

    /// Contiguous view of one `(batch, channel)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    /// Copies channels `[start, start + count)` into a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Tensor, TensorError> {
        let d = self.dims;
        if count == 0 || start + count > d.c {
            return Err(TensorError::ChannelRange {
                start,
                count,
                channels: d.c,
            });
        }
        let p = d.plane();
        let mut out = Vec::with_capacity(d.n * count * p);
        for n in 0..d.n {
            let base = (n * d.c + start) * p;
            out.extend_from_slice(&self.data[base..base + count * p]);
        }
        Tensor::from_vec(Dims::new(d.n, count, d.h, d.w), out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// 3x3 convolution filter bank with one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    out_channels: usize,
    in_channels: usize,
    kernel: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvWeights {
    pub const KERNEL: usize = 3;

    /// `kernel` is laid out as (out, in, 3, 3).
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self, TensorError> {
        if out_channels == 0 || in_channels == 0 {
            return Err(TensorError::ZeroExtent(Dims::new(
                out_channels,
                in_channels,
                3,
                3,
            )));
        }
        let expected = out_channels * in_channels * 9;
        if kernel.len() != expected {
            return Err(TensorError::DataLength {
                dims: Dims::new(out_channels, in_channels, 3, 3),
                expected,
                actual: kernel.len(),
            });
        }
        if bias.len() != out_channels {
            return Err(TensorError::BiasLength {
                out_channels,
                actual: bias.len(),
            });
        }
        Ok(ConvWeights {
            out_channels,
            in_channels,
            kernel,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> &[f32] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stride {
    One = 1,
    Two = 2,
}

impl Stride {
    pub fn get(self) -> usize {
        self as usize
    }

    /// Output extent for a 3x3 window with one pixel of zero padding.
    pub fn output_extent(self, input: usize) -> usize {
        input.div_ceil(self.get())
    }
}

impl TryFrom<usize> for Stride {
    type Error = TensorError;

    fn try_from(value: usize) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Stride::One),
            2 => Ok(Stride::Two),
            other => Err(TensorError::UnsupportedStride(other)),
        }
    }
}

/// Zero-padded (padding 1) 3x3 cross-correlation plus bias.
pub fn conv2d(input: &Tensor, w: &ConvWeights, stride: Stride) -> Result<Tensor, TensorError> {
    let d = input.dims;
    if d.c != w.in_channels {
        return Err(TensorError::ChannelMismatch {
            input: d.c,
            weights: w.in_channels,
        });
    }
    let s = stride.get();
    let out_h = stride.output_extent(d.h);
    let out_w = stride.output_extent(d.w);
    let out_dims = Dims::new(d.n, w.out_channels, out_h, out_w);
    if stride == Stride::One && w.out_channels <= DIRECT_MAX_OUT {
        return Tensor::from_vec(out_dims, conv2d_direct(input, w));
    }
    let k = w.in_channels * 9;
    let band_pixels = (CONV_BAND_ELEMS / k).clamp(256, 8192);
    let rows_per_band = (band_pixels / out_w).max(1);

    let mut out = vec![0.0f32; out_dims.len()];
    let out_plane = out_h * out_w;
    for n in 0..d.n {
        let image = &input.data[n * d.c * d.plane()..(n + 1) * d.c * d.plane()];
        let bands: Vec<(usize, Vec<f32>)> = (0..out_h)
            .step_by(rows_per_band)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|y0| {
                let y1 = (y0 + rows_per_band).min(out_h);
                let cols = im2col_band(image, d, s, y0, y1, out_w);
                let pixels = (y1 - y0) * out_w;
                let mut c = vec![0.0f32; w.out_channels * pixels];
                for (o, row) in c.chunks_exact_mut(pixels).enumerate() {
                    row.fill(w.bias[o]);
                }
                // SAFETY: `kernel` is out x k row-major, `cols` is k x pixels
                // row-major, `c` is out x pixels row-major; all lengths match.
                unsafe {
                    matrixmultiply::sgemm(
                        w.out_channels,
                        k,
                        pixels,
                        1.0,
                        w.kernel.as_ptr(),
                        k as isize,
                        1,
                        cols.as_ptr(),
                        pixels as isize,
                        1,
                        1.0,
                        c.as_mut_ptr(),
                        pixels as isize,
                        1,
                    );
                }
                (y0 * out_w, c)
            })
            .collect();

        let dst = &mut out[n * w.out_channels * out_plane..(n + 1) * w.out_channels * out_plane];
        for (offset, band) in bands {
            let pixels = band.len() / w.out_channels;
            for (o, row) in band.chunks_exact(pixels).enumerate() {
                let start = o * out_plane + offset;
                dst[start..start + pixels].copy_from_slice(row);
            }
        }
    }
    Tensor::from_vec(out_dims, out)
}

/// Stride-1 convolution as shifted row AXPYs; efficient when there are few outputs.
fn conv2d_direct(input: &Tensor, w: &ConvWeights) -> Vec<f32> {
    let d = input.dims;
    let (h, wd) = (d.h, d.w);
    let plane = d.plane();
    let mut out = vec![0.0f32; d.n * w.out_channels * plane];
    for n in 0..d.n {
        for o in 0..w.out_channels {
            let dst = &mut out[(n * w.out_channels + o) * plane..][..plane];
            dst.fill(w.bias[o]);
            for c in 0..d.c {
                let src = input.plane(n, c);
                let taps = &w.kernel[(o * d.c + c) * 9..][..9];
                for y in 0..h {
                    let row = &mut dst[y * wd..(y + 1) * wd];
                    for ky in 0..3 {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * wd..(iy as usize + 1) * wd];
                        let (left, mid, right) = (taps[ky * 3], taps[ky * 3 + 1], taps[ky * 3 + 2]);
                        // x-1 tap
                        for (r, s) in row[1..].iter_mut().zip(&src_row[..wd - 1]) {
                            *r += left * s;
                        }
                        for (r, s) in row.iter_mut().zip(src_row) {
                            *r += mid * s;
                        }
                        // x+1 tap
                        for (r, s) in row[..wd - 1].iter_mut().zip(&src_row[1..]) {
                            *r += right * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Unrolls 3x3 patches for output rows `[y0, y1)` into a `(c*9) x pixels` matrix.
fn im2col_band(
    image: &[f32],
    d: Dims,
    stride: usize,
    y0: usize,
    y1: usize,
    out_w: usize,
) -> Vec<f32> {
    let pixels = (y1 - y0) * out_w;
    let mut cols = vec![0.0f32; d.c * 9 * pixels];
    let plane = d.plane();
    for c in 0..d.c {
        let src = &image[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * pixels..][..pixels];
                for oy in y0..y1 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let dst = &mut row[(oy - y0) * out_w..(oy - y0 + 1) * out_w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < d.w as isize {
                            *v = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => {
                // Saturated values are clamped so the result stays inside (0, 1).
                let y = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                y.clamp(f32::MIN_POSITIVE, SIGMOID_MAX)
            }
        }
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|v| kind.apply(v))
}

pub fn activation_inplace(t: &mut Tensor, kind: Activation) {
    t.data.iter_mut().for_each(|v| *v = kind.apply(*v));
}

/// Nearest-neighbour 2x upsampling: every value fills a 2x2 block.
pub fn upsample_nearest2x(input: &Tensor) -> Tensor {
    let d = input.dims;
    let (oh, ow) = (d.h * 2, d.w * 2);
    let mut out = vec![0.0f32; d.n * d.c * oh * ow];
    for (src, dst) in input
        .data
        .chunks_exact(d.plane())
        .zip(out.chunks_exact_mut(oh * ow))
    {
        for y in 0..d.h {
            let src_row = &src[y * d.w..(y + 1) * d.w];
            let (top, bottom) = dst[2 * y * ow..(2 * y + 2) * ow].split_at_mut(ow);
            for (x, &v) in src_row.iter().enumerate() {
                top[2 * x] = v;
                top[2 * x + 1] = v;
            }
            bottom.copy_from_slice(top);
        }
    }
    Tensor {
        dims: Dims::new(d.n, d.c, oh, ow),
        data: out,
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.dims != b.dims {
        return Err(TensorError::ExtentMismatch {
            left: a.dims,
            right: b.dims,
        });
    }
    Ok(Tensor {
        dims: a.dims,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    })
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (da, db) = (a.dims, b.dims);
    if da.n != db.n || da.h != db.h || da.w != db.w {
        return Err(TensorError::ExtentMismatch {
            left: da,
            right: db,
        });
    }
    let p = da.plane();
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for n in 0..da.n {
        data.extend_from_slice(&a.data[n * da.c * p..(n + 1) * da.c * p]);
        data.extend_from_slice(&b.data[n * db.c * p..(n + 1) * db.c * p]);
    }
    Ok(Tensor {
        dims: Dims::new(da.n, da.c + db.c, da.h, da.w),
        data,
    })
}
