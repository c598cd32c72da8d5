//! Layer arithmetic: forward passes and their exact reverse-mode adjoints.
//!
//! Convolutions are lowered to matrix products through an im2col buffer.
//! All ops work on a single sample laid out as `C x H x W`.

use super::real::{matmul, Mat};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Output length of a strided, padded cross-correlation along one axis.
pub fn conv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn conv_transpose_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if input == 0 || stride == 0 {
        return None;
    }
    ((input - 1) * stride + kernel)
        .checked_sub(2 * padding)
        .filter(|&n| n > 0)
}

/// Geometry of a cross-correlation from an image of `c x h x w` to `oh x ow`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input row/col touched by output position `o` and kernel tap `t`.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < extent {
            Some(pos as usize)
        } else {
            None
        }
    }

    /// Output positions `lo..hi` whose tap `t` lands inside `0..extent`.
    fn valid(&self, t: usize, extent: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = t as isize - self.pad as isize;
        // need 0 <= o*s + shift < extent
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        let hi = if extent as isize - shift <= 0 {
            0
        } else {
            (extent as isize - shift - 1) / s + 1
        };
        let hi = (hi as usize).min(out_len);
        let lo = (lo as usize).min(hi);
        (lo, hi)
    }
}

/// `dst[j] = src[j * stride]`.
#[inline]
fn gather<T: Real>(dst: &mut [T], src: &[T], stride: usize) {
    if stride == 1 {
        dst.copy_from_slice(&src[..dst.len()]);
        return;
    }
    let src = &src[..(dst.len() - 1) * stride + 1];
    for (j, d) in dst.iter_mut().enumerate() {
        *d = src[j * stride];
    }
}

/// `dst[j * stride] += src[j]`.
#[inline]
fn scatter_add<T: Real>(dst: &mut [T], src: &[T], stride: usize) {
    if src.is_empty() {
        return;
    }
    let dst = &mut dst[..(src.len() - 1) * stride + 1];
    if stride == 1 {
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = *d + v;
        }
        return;
    }
    for (j, &v) in src.iter().enumerate() {
        dst[j * stride] = dst[j * stride] + v;
    }
}

fn im2col<T: Real>(image: &[T], g: &Geom, cols: &mut [T]) {
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    let n = g.col_cols();
    for c in 0..g.c {
        let plane = &image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (lo, hi) = g.valid(kj, g.w, g.ow);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.source(oy, ki, g.h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            line[..lo].fill(T::zero());
                            line[hi..].fill(T::zero());
                            if lo == hi {
                                continue;
                            }
                            let first = lo * g.stride + kj - g.pad;
                            gather(&mut line[lo..hi], &src[first..], g.stride);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates columns back into `image`, which must start zeroed.
fn col2im<T: Real>(cols: &[T], g: &Geom, image: &mut [T]) {
    debug_assert_eq!(image.len(), g.c * g.h * g.w);
    let n = g.col_cols();
    for c in 0..g.c {
        let plane = &mut image[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n..(row + 1) * n];
                let (lo, hi) = g.valid(kj, g.w, g.ow);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ki, g.h) else {
                        continue;
                    };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    scatter_add(&mut dst[first..], line, g.stride);
                }
            }
        }
    }
}

fn square_kernel<T: Real>(weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match weights.shape()[..] {
        [a, b, kh, kw] => {
            if kh != kw {
                return Err(Error::dim("kernel width", kh, kw));
            }
            Ok((a, b, kh))
        }
        _ => Err(Error::dim("weight rank", 4, weights.rank())),
    }
}

fn check_bias<T: Real>(bias: &Tensor<T>, channels: usize) -> Result<()> {
    if bias.len() != channels {
        return Err(Error::dim("bias length", channels, bias.len()));
    }
    Ok(())
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn channel_sums<T: Real>(grad: &[T], channels: usize) -> Vec<T> {
    let plane = grad.len() / channels;
    grad.chunks(plane)
        .map(|c| c.iter().copied().sum())
        .collect()
}

/// Gradients of a parameterized layer.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn conv_geom<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Geom, usize)> {
    let (c, h, w) = input.chw()?;
    let (out_ch, in_ch, k) = square_kernel(weights)?;
    if in_ch != c {
        return Err(Error::dim("input channels", in_ch, c));
    }
    let oh = conv_output_len(h, k, stride, padding)
        .ok_or_else(|| Error::Input(format!("kernel {k} does not fit input height {h}")))?;
    let ow = conv_output_len(w, k, stride, padding)
        .ok_or_else(|| Error::Input(format!("kernel {k} does not fit input width {w}")))?;
    Ok((
        Geom {
            c,
            h,
            w,
            k,
            stride,
            pad: padding,
            oh,
            ow,
        },
        out_ch,
    ))
}

/// 2-D cross-correlation (no kernel flip) plus per-channel bias.
///
/// `input` is `C_in x H x W`, `weights` is `C_out x C_in x k x k`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, out_ch) = conv_geom(input, weights, stride, padding)?;
    check_bias(bias, out_ch)?;
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    im2col(input.data(), &g, &mut cols);
    let mut out = vec![T::zero(); out_ch * g.col_cols()];
    matmul(
        Mat::new(weights.data(), out_ch, g.col_rows()),
        false,
        Mat::new(&cols, g.col_rows(), g.col_cols()),
        false,
        &mut out,
        false,
    );
    add_channel_bias(&mut out, bias.data(), g.col_cols());
    Tensor::new(vec![out_ch, g.oh, g.ow], out)
}

/// Adjoint of [`conv2d`] given the upstream gradient.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<LayerGrads<T>> {
    let (g, out_ch) = conv_geom(input, weights, stride, padding)?;
    let expected = out_ch * g.col_cols();
    if grad_out.len() != expected {
        return Err(Error::dim(
            "output gradient length",
            expected,
            grad_out.len(),
        ));
    }
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    im2col(input.data(), &g, &mut cols);

    let mut gw = vec![T::zero(); out_ch * g.col_rows()];
    matmul(
        Mat::new(grad_out.data(), out_ch, g.col_cols()),
        false,
        Mat::new(&cols, g.col_rows(), g.col_cols()),
        true,
        &mut gw,
        false,
    );
    // cols buffer reused for the input-side gradient
    matmul(
        Mat::new(weights.data(), out_ch, g.col_rows()),
        true,
        Mat::new(grad_out.data(), out_ch, g.col_cols()),
        false,
        &mut cols,
        false,
    );
    let mut gi = vec![T::zero(); input.len()];
    col2im(&cols, &g, &mut gi);
    Ok(LayerGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weight: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::from_vec(channel_sums(grad_out.data(), out_ch)),
    })
}

/// Geometry of the forward conv whose adjoint is the requested transposed conv.
fn conv_t_geom<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Geom, usize, usize)> {
    let (c_in, h, w) = input.chw()?;
    let (w_in, out_ch, k) = square_kernel(weights)?;
    if w_in != c_in {
        return Err(Error::dim("input channels", w_in, c_in));
    }
    let oh = conv_transpose_output_len(h, k, stride, padding).ok_or_else(|| {
        Error::Input(format!("transposed conv output height empty for input {h}"))
    })?;
    let ow = conv_transpose_output_len(w, k, stride, padding)
        .ok_or_else(|| Error::Input(format!("transposed conv output width empty for input {w}")))?;
    // the adjoint conv maps out_ch x oh x ow -> c_in x h x w
    let g = Geom {
        c: out_ch,
        h: oh,
        w: ow,
        k,
        stride,
        pad: padding,
        oh: h,
        ow: w,
    };
    Ok((g, c_in, out_ch))
}

/// Transposed convolution; `weights` is `C_in x C_out x k x k`.
///
/// Output spatial size is `(in - 1) * stride - 2 * padding + kernel`.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, c_in, out_ch) = conv_t_geom(input, weights, stride, padding)?;
    check_bias(bias, out_ch)?;
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    matmul(
        Mat::new(weights.data(), c_in, g.col_rows()),
        true,
        Mat::new(input.data(), c_in, g.col_cols()),
        false,
        &mut cols,
        false,
    );
    let mut out = vec![T::zero(); out_ch * g.h * g.w];
    col2im(&cols, &g, &mut out);
    add_channel_bias(&mut out, bias.data(), g.h * g.w);
    Tensor::new(vec![out_ch, g.h, g.w], out)
}

/// Adjoint of [`conv_transpose2d`].
pub fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<LayerGrads<T>> {
    let (g, c_in, out_ch) = conv_t_geom(input, weights, stride, padding)?;
    let expected = out_ch * g.h * g.w;
    if grad_out.len() != expected {
        return Err(Error::dim(
            "output gradient length",
            expected,
            grad_out.len(),
        ));
    }
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    im2col(grad_out.data(), &g, &mut cols);

    let mut gi = vec![T::zero(); input.len()];
    matmul(
        Mat::new(weights.data(), c_in, g.col_rows()),
        false,
        Mat::new(&cols, g.col_rows(), g.col_cols()),
        false,
        &mut gi,
        false,
    );
    let mut gw = vec![T::zero(); weights.len()];
    matmul(
        Mat::new(input.data(), c_in, g.col_cols()),
        false,
        Mat::new(&cols, g.col_rows(), g.col_cols()),
        true,
        &mut gw,
        false,
    );
    Ok(LayerGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weight: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::from_vec(channel_sums(grad_out.data(), out_ch)),
    })
}

fn linear_dims<T: Real>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize)> {
    let (out_f, in_f) = match weights.shape()[..] {
        [o, i] => (o, i),
        _ => return Err(Error::dim("weight rank", 2, weights.rank())),
    };
    if input.len() != in_f {
        return Err(Error::dim("in_features", in_f, input.len()));
    }
    Ok((out_f, in_f))
}

/// `W * flatten(input) + b` with `W` shaped `out x in`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (out_f, in_f) = linear_dims(input, weights)?;
    check_bias(bias, out_f)?;
    let mut out = bias.data().to_vec();
    matmul(
        Mat::new(weights.data(), out_f, in_f),
        false,
        Mat::new(input.data(), in_f, 1),
        false,
        &mut out,
        true,
    );
    Ok(Tensor::from_vec(out))
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let (out_f, in_f) = linear_dims(input, weights)?;
    if grad_out.len() != out_f {
        return Err(Error::dim("output gradient length", out_f, grad_out.len()));
    }
    let mut gw = vec![T::zero(); out_f * in_f];
    matmul(
        Mat::new(grad_out.data(), out_f, 1),
        false,
        Mat::new(input.data(), 1, in_f),
        false,
        &mut gw,
        false,
    );
    let mut gi = vec![T::zero(); in_f];
    matmul(
        Mat::new(weights.data(), out_f, in_f),
        true,
        Mat::new(grad_out.data(), out_f, 1),
        false,
        &mut gi,
        false,
    );
    Ok(LayerGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weight: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: grad_out.clone().reshape(vec![out_f])?,
    })
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the pre-activation was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.len() != grad_out.len() {
        return Err(Error::dim(
            "relu gradient length",
            input.len(),
            grad_out.len(),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct six-loop cross-correlation.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        s: usize,
        p: usize,
    ) -> Tensor<f64> {
        let (c, h, wd) = x.chw().unwrap();
        let (o, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * s + ki) as isize - p as isize;
                                let ix = (ox * s + kj) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[(ic * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oc * c + ic) * k + ki) * k + kj];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(vec![o, oh, ow], out).unwrap()
    }

    #[test]
    fn conv_scalar_multiply_add() {
        let x = Tensor::new(vec![1, 1, 1], vec![5.0f32]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![2.0f32]).unwrap();
        let b = Tensor::from_vec(vec![1.0f32]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(k, s, p) in &[(3, 1, 1), (5, 2, 2), (2, 2, 0), (3, 2, 1)] {
            let x = random(vec![2, 6, 6], &mut rng);
            let w = random(vec![3, 2, k, k], &mut rng);
            let b = random(vec![3], &mut rng);
            let fast = conv2d(&x, &w, &b, s, p).unwrap();
            let slow = naive_conv(&x, &w, &b, s, p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_transpose_trivial() {
        let x = Tensor::new(vec![1, 1, 1], vec![1.0f32]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![3.0f32]).unwrap();
        let b = Tensor::from_vec(vec![0.0f32]);
        assert_eq!(conv_transpose2d(&x, &w, &b, 1, 0).unwrap().data(), &[3.0]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, s, p, n) in &[(4, 2, 1, 8), (5, 2, 2, 7), (3, 1, 1, 6)] {
            // conv maps 3 x n x n -> 2 x oh x ow with weights 2 x 3 x k x k;
            // convT with the same weights viewed as C_in=2, C_out=3 maps back.
            let x = random(vec![3, n, n], &mut rng);
            let w = random(vec![2, 3, k, k], &mut rng);
            let zero2 = Tensor::zeros(vec![2]);
            let zero3 = Tensor::zeros(vec![3]);
            let cx = conv2d(&x, &w, &zero2, s, p).unwrap();
            let y = random(cx.shape().to_vec(), &mut rng);
            let ty = conv_transpose2d(&y, &w, &zero3, s, p).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&ty).unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-5 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let x = Tensor::<f32>::zeros(vec![3, 8, 8]);
        let w = Tensor::<f32>::zeros(vec![4, 2, 3, 3]);
        let b = Tensor::<f32>::zeros(vec![4]);
        let err = conv2d(&x, &w, &b, 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");

        let w = Tensor::<f32>::zeros(vec![4, 3, 3, 3]);
        let bad_bias = Tensor::<f32>::zeros(vec![5]);
        let err = conv2d(&x, &w, &bad_bias, 1, 1).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");

        let lw = Tensor::<f32>::zeros(vec![2, 10]);
        let err = linear(&Tensor::zeros(vec![9]), &lw, &Tensor::zeros(vec![2])).unwrap_err();
        assert!(err.to_string().contains("in_features"), "{err}");
    }

    #[test]
    fn linear_hand_arithmetic() {
        let w = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![1.0f32, 1.0]);
        let x = Tensor::from_vec(vec![1.0f32, 1.0]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[4.0, 8.0]);

        let eye = Tensor::new(
            vec![3, 3],
            vec![1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let v = Tensor::from_vec(vec![0.5f32, -2.0, 7.0]);
        assert_eq!(
            linear(&v, &eye, &Tensor::zeros(vec![3])).unwrap().data(),
            v.data()
        );
    }

    #[test]
    fn linear_backward_of_sum() {
        let w = Tensor::new(vec![2, 3], vec![0.1f64, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let g = linear_backward(&x, &w, &Tensor::filled(vec![2], 1.0)).unwrap();
        assert_eq!(g.weight.data(), &[1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
        assert_eq!(g.bias.data(), &[1.0, 1.0]);
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::from_vec(vec![-2.0f32, 0.0, 3.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 3.0]);
        let neg = Tensor::from_vec(vec![-1.0f32; 5]);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&x, &Tensor::filled(vec![3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random(vec![50], &mut rng);
        assert_eq!(relu(&relu(&r)), relu(&r));
    }
}
