//! Frame resizing and brightness augmentation.

use super::pnm::dims3;
use crate::error::{Error, Result};
use crate::Tensor;

/// Bilinear resize with half-pixel centers: output pixel `i` samples the
/// source at `(i + 0.5) * in / out - 0.5`, clamped to the edge pixels.
pub fn resize_bilinear(frame: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    if height == 0 || width == 0 {
        return Err(Error::Argument(format!(
            "target size {width}x{height} is empty"
        )));
    }
    let (c, ih, iw) = dims3(frame)?;
    if (ih, iw) == (height, width) {
        return Ok(frame.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, (s - lo as f64) as f32)
            })
            .collect()
    };
    let rows = taps(height, ih);
    let cols = taps(width, iw);
    let src = frame.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * ih * iw..(ch + 1) * ih * iw];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * iw + x0] * (1.0 - fx) + plane[y0 * iw + x1] * fx;
                let bot = plane[y1 * iw + x0] * (1.0 - fx) + plane[y1 * iw + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, height, width], out)
}

/// Multiplies every pixel by `factor` and clamps to `[0, 1]`.
pub fn augment_brightness(frame: &Tensor<f32>, factor: f32) -> Result<Tensor<f32>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Argument(format!(
            "brightness factor must be positive, got {factor}"
        )));
    }
    Ok(frame.map(|v| (v * factor).clamp(0.0, 1.0)))
}
