//! Binary NetPBM codecs: `P6` color frames and `P5` grayscale maps.
//!
//! Samples are 8-bit (maxval 255) and map to `[0, 1]` as `byte / 255`.
//! Encoding rounds half up: `floor(v * 255 + 0.5)` after clamping.

use crate::error::{Error, Result};
use crate::Tensor;

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => pos += 1,
            _ => break,
        }
    }
    pos
}

fn read_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format(format!("missing {what} in header")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("{what} out of range")))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::Format(format!(
            "expected magic {}, found {found:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let width = read_number(bytes, &mut pos, "width")?;
    let height = read_number(bytes, &mut pos, "height")?;
    let maxval = read_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Unsupported(format!(
            "maxval {maxval} (only 255 is supported)"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("header not terminated by whitespace".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    Ok(Header {
        width,
        height,
        data_start: pos,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(Error::Format(format!(
            "truncated raster: {have} of {need} bytes"
        )));
    }
    Ok(&bytes[h.data_start..h.data_start + need])
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Decodes a `P6` stream into a `3 x H x W` tensor.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes, b"P6")?;
    let raw = raster(bytes, &h, 3)?;
    let plane = h.width * h.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h.height, h.width], data)
}

/// Encodes a `3 x H x W` tensor with the canonical header `P6\n<W> <H>\n255\n`.
pub fn encode_ppm(frame: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, height, width) = dims3(frame)?;
    if c != 3 {
        return Err(Error::dim("channels", 3, c));
    }
    let plane = height * width;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * plane);
    let d = frame.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + p]));
        }
    }
    Ok(out)
}

/// Decodes a `P5` stream into a `1 x H x W` tensor.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes, b"P5")?;
    let raw = raster(bytes, &h, 1)?;
    Tensor::new(
        vec![1, h.height, h.width],
        raw.iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

/// Encodes an `H x W` map of values in `[0, 1]` as `P5`.
pub fn encode_pgm(width: usize, height: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::dim("pixels", width * height, values.len()));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub(crate) fn dims3<T: crate::Real>(frame: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *frame.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Input(format!(
            "expected a C x H x W frame, got shape {:?}",
            frame.shape()
        ))),
    }
}
