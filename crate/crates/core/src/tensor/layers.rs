//! Layers that record the activations their backward pass needs.
//!
//! `forward` caches, `infer` does not. Calling `backward` without a cached
//! forward is a state error.

use rand::Rng;

use super::ops::{self, ConvSpec};
use super::{LayerParams, Scalar, Tensor};
use crate::error::{Error, Result};

fn missing_forward(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called before forward"))
}

#[derive(Clone, Debug)]
pub struct Dense<F> {
    pub params: LayerParams<F>,
    cache: Option<Tensor<F>>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(params: LayerParams<F>) -> Self {
        Dense {
            params,
            cache: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(din: usize, dout: usize, rng: &mut R) -> Self {
        Dense::new(LayerParams::glorot(&[din, dout], din, dout, rng))
    }

    pub fn in_dim(&self) -> usize {
        self.params.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.params.weight.shape()[1]
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        ops::dense_forward(x, &self.params)
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = ops::dense_forward(x, &self.params)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self.cache.take().ok_or_else(|| missing_forward("dense"))?;
        ops::dense_backward(&x, &mut self.params, dy)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[derive(Clone, Debug)]
struct ConvCache<F> {
    input: Tensor<F>,
    lengths: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Conv1d<F> {
    pub params: LayerParams<F>,
    pub spec: ConvSpec,
    cache: Option<ConvCache<F>>,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(params: LayerParams<F>, spec: ConvSpec) -> Self {
        Conv1d {
            params,
            spec,
            cache: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        kernel: usize,
        din: usize,
        dout: usize,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        let params = LayerParams::glorot(&[kernel, din, dout], kernel * din, kernel * dout, rng);
        Conv1d::new(params, spec)
    }

    pub fn kernel(&self) -> usize {
        self.params.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.params.weight.shape()[2]
    }

    pub fn infer(&self, x: &Tensor<F>, lengths: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
        ops::conv1d_forward_masked(x, lengths, &self.params, self.spec)
    }

    pub fn forward(&mut self, x: &Tensor<F>, lengths: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
        let out = ops::conv1d_forward_masked(x, lengths, &self.params, self.spec)?;
        self.cache = Some(ConvCache {
            input: x.clone(),
            lengths: lengths.to_vec(),
        });
        Ok(out)
    }

    /// Returns the input gradient only when `need_input_grad` is set; the
    /// first layer of a tower never needs it.
    pub fn backward(&mut self, dy: &Tensor<F>, need_input_grad: bool) -> Result<Option<Tensor<F>>> {
        let c = self.cache.take().ok_or_else(|| missing_forward("conv1d"))?;
        ops::conv1d_backward(
            &c.input,
            &c.lengths,
            &mut self.params,
            self.spec,
            dy,
            need_input_grad,
        )
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu<F> {
    output: Option<Tensor<F>>,
}

impl<F: Scalar> Relu<F> {
    pub fn new() -> Self {
        Relu { output: None }
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Tensor<F> {
        let y = ops::relu_forward(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Result<Tensor<F>> {
        let y = self.output.take().ok_or_else(|| missing_forward("relu"))?;
        ops::relu_backward(&y, dy)
    }

    pub fn clear_cache(&mut self) {
        self.output = None;
    }
}

#[derive(Clone, Debug, Default)]
pub struct MeanPool {
    cache: Option<(Vec<usize>, usize)>,
}

impl MeanPool {
    pub fn new() -> Self {
        MeanPool { cache: None }
    }

    pub fn forward<F: Scalar>(&mut self, x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
        let y = ops::mean_pool_time(x, lengths)?;
        self.cache = Some((lengths.to_vec(), x.shape()[1]));
        Ok(y)
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Tensor<F>) -> Result<Tensor<F>> {
        let (lengths, frames) = self.cache.take().ok_or_else(|| missing_forward("mean_pool"))?;
        ops::mean_pool_backward(&lengths, frames, dy)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
