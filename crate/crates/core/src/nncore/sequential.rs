use rand::Rng;

use super::layer::LayerSpec;
use super::ops;
use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
}

impl Layer {
    pub fn new(name: impl Into<String>, spec: LayerSpec) -> Self {
        Layer {
            name: name.into(),
            spec,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Activations recorded by a forward pass, consumed by [`Sequential::backward`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    inputs: Vec<Tensor<T>>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Tape { inputs: Vec::new() }
    }
}

impl<T> Tape<T> {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn clear(&mut self) {
        self.inputs.clear();
    }
}

/// A chain of layers with statically checked shapes.
#[derive(Clone, Debug)]
pub struct Sequential {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl Sequential {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for layer in &layers {
            current = layer.spec.output_shape(&current)?;
            shapes.push(current.clone());
        }
        Ok(Sequential {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, Vec::as_slice)
    }

    /// Splits into the layers before `at` and the layers from `at` on.
    pub fn split(&self, at: usize) -> Result<(Sequential, Sequential)> {
        if at > self.layers.len() {
            return Err(Error::Argument(format!(
                "split point {at} beyond {} layers",
                self.layers.len()
            )));
        }
        let mid = if at == 0 {
            self.input_shape.clone()
        } else {
            self.shapes[at - 1].clone()
        };
        Ok((
            Sequential::new(self.input_shape.clone(), self.layers[..at].to_vec())?,
            Sequential::new(mid, self.layers[at..].to_vec())?,
        ))
    }

    /// Output shape after each layer.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Registers every weight and bias, drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn init_params<T: Real, R: Rng>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        for layer in &self.layers {
            let Some((wshape, bshape)) = layer.spec.param_shapes() else {
                continue;
            };
            let bound = 1.0 / (layer.spec.fan_in() as f64).sqrt();
            let mut draw = |shape: Vec<usize>| -> Tensor<T> {
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                Tensor::new(shape, data).expect("consistent shape")
            };
            let w = draw(wshape);
            let b = draw(bshape);
            store.insert(layer.weight_name(), w)?;
            store.insert(layer.bias_name(), b)?;
        }
        Ok(())
    }

    /// Registers every weight and bias as zeros.
    pub fn zero_params<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for layer in &self.layers {
            if let Some((wshape, bshape)) = layer.spec.param_shapes() {
                store.insert(layer.weight_name(), Tensor::zeros(wshape))?;
                store.insert(layer.bias_name(), Tensor::zeros(bshape))?;
            }
        }
        Ok(())
    }

    fn layer_forward<T: Real>(
        layer: &Layer,
        params: &ParamStore<T>,
        input: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        match layer.spec {
            LayerSpec::Conv2d {
                stride, padding, ..
            } => ops::conv2d(
                input,
                params.get(&layer.weight_name())?,
                params.get(&layer.bias_name())?,
                stride,
                padding,
            ),
            LayerSpec::ConvTranspose2d {
                stride, padding, ..
            } => ops::conv_transpose2d(
                input,
                params.get(&layer.weight_name())?,
                params.get(&layer.bias_name())?,
                stride,
                padding,
            ),
            LayerSpec::Linear { .. } => ops::linear(
                input,
                params.get(&layer.weight_name())?,
                params.get(&layer.bias_name())?,
            ),
            LayerSpec::Relu => Ok(ops::relu(input)),
            LayerSpec::Reshape { ref shape } => input.clone().reshape(shape.clone()),
        }
    }

    fn check_input<T: Real>(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            let expected: usize = self.input_shape.iter().product();
            if input.len() != expected {
                return Err(Error::dim("network input length", expected, input.len()));
            }
            return Err(Error::Input(format!(
                "network input shape {:?} does not match {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Inference pass; records nothing.
    pub fn forward<T: Real>(&self, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut current = input.clone();
        for layer in &self.layers {
            current = Self::layer_forward(layer, params, &current)?;
        }
        Ok(current)
    }

    /// Forward pass that records each layer input on `tape` for a later backward.
    pub fn forward_recorded<T: Real>(
        &self,
        params: &ParamStore<T>,
        input: Tensor<T>,
        tape: &mut Tape<T>,
    ) -> Result<Tensor<T>> {
        self.check_input(&input)?;
        tape.clear();
        let mut current = input;
        for layer in &self.layers {
            let next = Self::layer_forward(layer, params, &current)?;
            tape.inputs.push(current);
            current = next;
        }
        Ok(current)
    }

    /// Reverse-mode pass: accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the network input.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        tape: &Tape<T>,
        grad_output: Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        if tape.inputs.is_empty() && !self.layers.is_empty() {
            return Err(Error::State(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "tape holds {} activations for {} layers",
                tape.inputs.len(),
                self.layers.len()
            )));
        }
        let out_len: usize = self.output_shape().iter().product();
        if grad_output.len() != out_len {
            return Err(Error::dim(
                "output gradient length",
                out_len,
                grad_output.len(),
            ));
        }
        let mut grad = grad_output.reshape(self.output_shape().to_vec())?;
        for (layer, input) in self.layers.iter().zip(&tape.inputs).rev() {
            grad = match layer.spec {
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let g = ops::conv2d_backward(
                        input,
                        params.get(&layer.weight_name())?,
                        &grad,
                        stride,
                        padding,
                    )?;
                    grads.add_into(&layer.weight_name(), &g.weight)?;
                    grads.add_into(&layer.bias_name(), &g.bias)?;
                    g.input
                }
                LayerSpec::ConvTranspose2d {
                    stride, padding, ..
                } => {
                    let g = ops::conv_transpose2d_backward(
                        input,
                        params.get(&layer.weight_name())?,
                        &grad,
                        stride,
                        padding,
                    )?;
                    grads.add_into(&layer.weight_name(), &g.weight)?;
                    grads.add_into(&layer.bias_name(), &g.bias)?;
                    g.input
                }
                LayerSpec::Linear { .. } => {
                    let g = ops::linear_backward(input, params.get(&layer.weight_name())?, &grad)?;
                    grads.add_into(&layer.weight_name(), &g.weight)?;
                    grads.add_into(&layer.bias_name(), &g.bias)?;
                    g.input
                }
                LayerSpec::Relu => ops::relu_backward(input, &grad)?,
                LayerSpec::Reshape { .. } => grad.reshape(input.shape().to_vec())?,
            };
        }
        Ok(grad)
    }
}
