use super::ops::{conv_output_len, conv_transpose_output_len};
use crate::error::{Error, Result};

/// One layer of a sequential stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    /// Reinterprets the flat activation with a new shape. Carries no parameters.
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::Linear {
                in_features,
                out_features,
            } => out_features * in_features + out_features,
            LayerSpec::Relu | LayerSpec::Reshape { .. } => 0,
        }
    }

    pub fn has_params(&self) -> bool {
        self.param_count() > 0
    }

    /// Shapes of `(weight, bias)` when the layer is parameterized.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![in_channels, out_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    /// Number of inputs feeding each output unit, used for weight init bounds.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Linear { in_features, .. } => in_features,
            _ => 0,
        }
    }

    /// Short kind label as used in layer summaries.
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "Conv2d",
            LayerSpec::ConvTranspose2d { .. } => "ConvTranspose2d",
            LayerSpec::Linear { .. } => "Linear",
            LayerSpec::Relu => "ReLU",
            LayerSpec::Reshape { .. } => "Reshape",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = spatial(input)?;
                if c != in_channels {
                    return Err(Error::dim("input channels", in_channels, c));
                }
                let oh = conv_output_len(h, kernel, stride, padding).ok_or_else(|| {
                    Error::Config(format!("conv kernel {kernel} exceeds height {h}"))
                })?;
                let ow = conv_output_len(w, kernel, stride, padding).ok_or_else(|| {
                    Error::Config(format!("conv kernel {kernel} exceeds width {w}"))
                })?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = spatial(input)?;
                if c != in_channels {
                    return Err(Error::dim("input channels", in_channels, c));
                }
                let oh = conv_transpose_output_len(h, kernel, stride, padding)
                    .ok_or_else(|| Error::Config("transposed conv output height empty".into()))?;
                let ow = conv_transpose_output_len(w, kernel, stride, padding)
                    .ok_or_else(|| Error::Config("transposed conv output width empty".into()))?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != in_features {
                    return Err(Error::dim("in_features", in_features, n));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Reshape { ref shape } => {
                let n: usize = input.iter().product();
                let m: usize = shape.iter().product();
                if n != m {
                    return Err(Error::dim("reshape element count", m, n));
                }
                Ok(shape.clone())
            }
        }
    }
}

fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::dim("rank", 3, shape.len())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_encoder_conv_shape_and_count() {
        let conv = LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 32,
            kernel: 5,
            stride: 2,
            padding: 2,
        };
        assert_eq!(
            conv.output_shape(&[3, 240, 320]).unwrap(),
            vec![32, 120, 160]
        );
        assert_eq!(conv.param_count(), 2_432);
    }

    #[test]
    fn first_decoder_deconv_shape_and_count() {
        let deconv = LayerSpec::ConvTranspose2d {
            in_channels: 256,
            out_channels: 128,
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        assert_eq!(
            deconv.output_shape(&[256, 15, 20]).unwrap(),
            vec![128, 30, 40]
        );
        assert_eq!(deconv.param_count(), 524_416);
    }

    #[test]
    fn wide_linear_count() {
        let fc = LayerSpec::Linear {
            in_features: 76_800,
            out_features: 1_024,
        };
        assert_eq!(fc.param_count(), 78_644_224);
        assert_eq!(LayerSpec::Relu.param_count(), 0);
    }
}
