//! Small building blocks shared by the network modules: convolution and
//! group-norm layers with owned parameters, and weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{ops, Element, Tensor};

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Kaiming-style: normal with std `sqrt(2 / fan_in)`.
    Kaiming,
    /// All zeros (residual prediction heads).
    Zero,
}

pub(crate) fn kaiming<E: Element, R: Rng>(rng: &mut R, fan_in: usize, n: usize) -> Vec<E> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| E::from_f64(dist.sample(rng))).collect()
}

/// Convolution layer with owned weight and (optionally) bias.
pub struct Conv2d<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    has_bias: bool,
    stride: (usize, usize),
    pad: (usize, usize),
    dilation: (usize, usize),
}

impl<E: Element> Conv2d<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        dilation: (usize, usize),
        init: Init,
    ) -> Self {
        let n = cout * cin * kernel.0 * kernel.1;
        let data = match init {
            Init::Kaiming => kaiming(rng, cin * kernel.0 * kernel.1, n),
            Init::Zero => vec![E::zero(); n],
        };
        Conv2d {
            weight: Tensor::param(data, &[cout, cin, kernel.0, kernel.1]).unwrap(),
            bias: Tensor::param(vec![E::zero(); cout], &[cout]).unwrap(),
            has_bias: true,
            stride,
            pad,
            dilation,
        }
    }

    /// Point-wise (1×1) convolution.
    pub fn pointwise<R: Rng>(rng: &mut R, cin: usize, cout: usize, init: Init) -> Self {
        Self::new(rng, cin, cout, (1, 1), (1, 1), (0, 0), (1, 1), init)
    }

    /// Point-wise convolution without a bias parameter. Used for the
    /// query/key projections of attention blocks, where a key bias shifts
    /// every affinity in a softmax row uniformly and therefore can never
    /// receive gradient.
    pub fn pointwise_no_bias<R: Rng>(rng: &mut R, cin: usize, cout: usize) -> Self {
        let mut conv = Self::pointwise(rng, cin, cout, Init::Kaiming);
        conv.bias = Tensor::zeros(&[cout]);
        conv.has_bias = false;
        conv
    }

    /// k×k convolution with same-padding at stride 1.
    pub fn same<R: Rng>(rng: &mut R, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(
            rng,
            cin,
            cout,
            (k, k),
            (1, 1),
            ((k - 1) / 2, (k - 1) / 2),
            (1, 1),
            Init::Kaiming,
        )
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::conv2d_ext(x, &self.weight, &self.bias, self.stride, self.pad, self.dilation)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if self.has_bias {
            out.push((format!("{prefix}.bias"), self.bias.clone()));
        }
    }
}

/// Group normalization with learnable per-channel scale and shift.
pub struct GroupNorm<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    groups: usize,
    eps: E,
}

impl<E: Element> GroupNorm<E> {
    pub fn new(channels: usize, groups: usize) -> Self {
        GroupNorm {
            gamma: Tensor::param(vec![E::one(); channels], &[channels]).unwrap(),
            beta: Tensor::param(vec![E::zero(); channels], &[channels]).unwrap(),
            groups,
            eps: E::from_f64(1e-5),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::group_norm(x, &self.gamma, &self.beta, self.groups, self.eps)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// conv → group norm → relu, the backbone's basic unit.
pub struct ConvBlock<E: Element> {
    conv: Conv2d<E>,
    norm: GroupNorm<E>,
}

impl<E: Element> ConvBlock<E> {
    pub fn new<R: Rng>(rng: &mut R, cin: usize, cout: usize, stride: usize, groups: usize) -> Self {
        ConvBlock {
            conv: Conv2d::new(
                rng,
                cin,
                cout,
                (3, 3),
                (stride, stride),
                (1, 1),
                (1, 1),
                Init::Kaiming,
            ),
            norm: GroupNorm::new(cout, groups),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(ops::relu(&self.norm.forward(&self.conv.forward(x)?)?))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.norm.collect_params(&format!("{prefix}.norm"), out);
    }
}
