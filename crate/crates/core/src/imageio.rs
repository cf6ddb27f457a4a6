//! Image buffers and binary PNM (P5/P6, 8-bit) encode/decode.
//!
//! PNG is available behind the `png` cargo feature through the same
//! [`read_image`] / [`write_image`] entry points.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    /// Row-major, channel-interleaved values in `[0, 1]`.
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "ImageBuffer::new",
                width * height * channels,
                data.len(),
            ));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        ImageBuffer::new(width, height, channels, vec![value; width * height * channels])
            .expect("consistent shape")
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Top-left `width x height` crop starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<ImageBuffer> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::domain(
                "crop",
                format!(
                    "{width}x{height}+{x0}+{y0} exceeds {}x{}",
                    self.width, self.height
                ),
            ));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        ImageBuffer::new(width, height, c, data)
    }
}

/// `round_half_up(clamp(v, 0, 1) * 255)`.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                detail: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                detail: format!("{what} out of range"),
            })
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < 2 {
        return Err(Error::Parse {
            offset: 0,
            detail: "missing magic number".into(),
        });
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::Parse {
                offset: 0,
                detail: format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            })
        }
    };
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            detail: format!("unsupported maxval {maxval} (only 255)"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: 2,
            detail: "zero-sized image".into(),
        });
    }
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: r.pos,
                detail: "expected single whitespace before payload".into(),
            })
        }
    }
    let expected = width * height * channels;
    let payload = &bytes[r.pos..];
    if payload.len() < expected {
        return Err(Error::Parse {
            offset: r.pos,
            detail: format!(
                "truncated payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        });
    }
    let data = payload[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::new(width, height, channels, data)
}

pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

/// Averages non-overlapping `factor x factor` blocks.
pub fn box_downsample(img: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    if factor == 0 || !img.width.is_multiple_of(factor) || !img.height.is_multiple_of(factor) {
        return Err(Error::domain(
            "box_downsample",
            format!("{}x{} not divisible by {factor}", img.width, img.height),
        ));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h, c) = (img.width / factor, img.height / factor, img.channels);
    let norm = (factor * factor) as f64;
    let mut data = vec![0.0; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += img.get(x * factor + dx, y * factor + dy, ch);
                    }
                }
                data[(y * w + x) * c + ch] = s / norm;
            }
        }
    }
    ImageBuffer::new(w, h, c, data)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_png(path) {
        return png_codec::decode(&bytes);
    }
    decode_pnm(&bytes)
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_png(path) {
        png_codec::encode(img)?
    } else {
        encode_pnm(img)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(feature = "png")]
mod png_codec {
    use super::{quantize, ImageBuffer};
    use crate::error::{Error, Result};

    pub fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
        let err = |e: &dyn std::fmt::Display| Error::Parse {
            offset: 0,
            detail: format!("png: {e}"),
        };
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| err(&e))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| err(&e))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let src = info.color_type.samples();
        let channels = if src >= 3 { 3 } else { 1 };
        let mut data = Vec::with_capacity(w * h * channels);
        for px in buf[..info.buffer_size()].chunks_exact(src) {
            data.extend(px[..channels].iter().map(|&b| b as f64 / 255.0));
        }
        ImageBuffer::new(w, h, channels, data)
    }

    pub fn encode(img: &ImageBuffer) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
            enc.set_color(if img.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Config(format!("png: {e}")))?;
            let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
            w.write_image_data(&bytes)
                .map_err(|e| Error::Config(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

#[cfg(not(feature = "png"))]
mod png_codec {
    use super::ImageBuffer;
    use crate::error::{Error, Result};

    pub fn decode(_: &[u8]) -> Result<ImageBuffer> {
        Err(Error::Config("PNG support requires the `png` feature".into()))
    }

    pub fn encode(_: &ImageBuffer) -> Result<Vec<u8>> {
        Err(Error::Config("PNG support requires the `png` feature".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_gray_scaling() {
        let mut bytes = b"P5 2 1 255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.data, vec![0.0, 1.0]);
        assert_eq!(img.channels, 1);
    }

    #[test]
    fn header_comments_tolerated() {
        let mut bytes = b"P6\n# made by hand\n1 1\n# max\n255\n".to_vec();
        bytes.extend([10u8, 20, 30]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (1, 1, 3));
    }

    #[test]
    fn truncated_payload_names_counts() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([0u8; 5]);
        let err = decode_pnm(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 12 bytes"), "{msg}");
        assert!(msg.contains("found 5"), "{msg}");
        assert!(matches!(err, Error::Parse { offset: 11, .. }));
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode_pnm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_pnm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(decode_pnm(b"P5\nx 1\n255\n\0").is_err());
        assert!(decode_pnm(b"").is_err());
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn encode_picks_magic() {
        let gray = ImageBuffer::filled(2, 2, 1, 0.0);
        let enc = encode_pnm(&gray);
        assert!(enc.starts_with(b"P5"));
        assert!(enc[enc.len() - 4..].iter().all(|&b| b == 0));
        assert!(encode_pnm(&ImageBuffer::filled(2, 2, 3, 0.0)).starts_with(b"P6"));
    }

    #[test]
    fn downsample_cases() {
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(box_downsample(&img, 1).unwrap(), img);
        assert_eq!(box_downsample(&img, 2).unwrap().data, vec![0.5]);
        assert!(box_downsample(&ImageBuffer::filled(3, 2, 1, 0.0), 2).is_err());
    }

    #[test]
    fn crop_extracts_block() {
        let data: Vec<f64> = (0..16).map(|v| v as f64 / 15.0).collect();
        let img = ImageBuffer::new(4, 4, 1, data).unwrap();
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data, vec![9.0 / 15.0, 10.0 / 15.0, 13.0 / 15.0, 14.0 / 15.0]);
        assert!(img.crop(3, 3, 2, 2).is_err());
    }

    fn any_image() -> impl Strategy<Value = (usize, usize, usize, Vec<u8>)> {
        (1usize..6, 1usize..6, prop::sample::select(vec![1usize, 3])).prop_flat_map(|(w, h, c)| {
            prop::collection::vec(any::<u8>(), w * h * c).prop_map(move |d| (w, h, c, d))
        })
    }

    fn image_with_factor() -> impl Strategy<Value = (ImageBuffer, usize, f64, f64)> {
        (1usize..4, 1usize..4, 1usize..4, -2.0f64..2.0, -1.0f64..1.0).prop_flat_map(
            |(bw, bh, f, a, b)| {
                prop::collection::vec(0.0f64..1.0, bw * f * bh * f).prop_map(move |d| {
                    (ImageBuffer::new(bw * f, bh * f, 1, d).unwrap(), f, a, b)
                })
            },
        )
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip((w, h, c, payload) in any_image()) {
            let magic = if c == 1 { "P5" } else { "P6" };
            let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            bytes.extend(&payload);
            let img = decode_pnm(&bytes).unwrap();
            prop_assert_eq!(encode_pnm(&img), bytes.clone());
            let again = decode_pnm(&encode_pnm(&img)).unwrap();
            prop_assert_eq!(again, img);
        }

        #[test]
        fn downsample_preserves_mean_and_commutes_with_affine((img, f, a, b) in image_with_factor()) {
            let down = box_downsample(&img, f).unwrap();
            prop_assert!((down.mean() - img.mean()).abs() < 1e-12);
            let mapped = ImageBuffer { data: img.data.iter().map(|v| a * v + b).collect(), ..img.clone() };
            let lhs = box_downsample(&mapped, f).unwrap();
            for (l, d) in lhs.data.iter().zip(&down.data) {
                prop_assert!((l - (a * d + b)).abs() < 1e-12);
            }
        }
    }
}
