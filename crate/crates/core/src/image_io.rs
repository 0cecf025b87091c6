//! 8-bit RGB images (PNG or binary PPM) to and from normalised NCHW tensors.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::ImageError;
use crate::tensor::{Dims, Tensor};

/// Interleaved 8-bit RGB pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    /// 1x3xHxW tensor with values scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Tensor::from_vec(Dims::new(1, 3, self.height, self.width), data).expect("rgb extents")
    }
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes).map_err(|message| ImageError::Decode {
            path: path.to_path_buf(),
            message,
        })
    } else {
        decode_png(&bytes, path)
    }
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<RgbImage, ImageError> {
    let err = |e: png::DecodingError| ImageError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(err)?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(err)?;
    if frame.color_type != png::ColorType::Rgb || frame.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Unsupported {
            path: path.to_path_buf(),
            found: format!("{:?} {}-bit", frame.color_type, frame.bit_depth as u8),
        });
    }
    buf.truncate(frame.buffer_size());
    Ok(RgbImage {
        width: frame.width as usize,
        height: frame.height as usize,
        pixels: buf,
    })
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PPM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PPM header")?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("PPM maxval {maxval} unsupported; expected 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let len = width * height * 3;
    let pixels = bytes
        .get(pos..pos + len)
        .ok_or_else(|| format!("PPM raster truncated: expected {len} bytes"))?
        .to_vec();
    Ok(RgbImage {
        width,
        height,
        pixels,
    })
}

pub fn save_rgb_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let decode = |message: String| ImageError::Decode {
        path: path.to_path_buf(),
        message,
    };
    let file = File::create(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| decode(e.to_string()))?;
    writer
        .write_image_data(&img.pixels)
        .map_err(|e| decode(e.to_string()))?;
    writer.finish().map_err(|e| decode(e.to_string()))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RgbImage {
        RgbImage {
            width: 3,
            height: 2,
            pixels: (0..18).map(|i| (i * 14) as u8).collect(),
        }
    }

    #[test]
    fn ppm_round_trip() {
        let img = sample();
        let mut bytes = encode_ppm(&img);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
        bytes.truncate(bytes.len() - 1);
        assert!(decode_ppm(&bytes).is_err());
    }

    #[test]
    fn ppm_header_comments() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend([1, 2, 3]);
        assert_eq!(decode_ppm(&bytes).unwrap().pixels, vec![1, 2, 3]);
    }

    #[test]
    fn tensor_is_planar_and_normalised() {
        let t = sample().to_tensor();
        assert_eq!(t.dims(), Dims::new(1, 3, 2, 3));
        assert_eq!(t.at(0, 1, 0, 0), 14.0 / 255.0);
        assert_eq!(t.at(0, 0, 1, 2), (15 * 14) as f32 / 255.0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        save_rgb_png(&sample(), &path).unwrap();
        assert_eq!(load_rgb(&path).unwrap(), sample());
    }
}
