//! Parallel axial attention and the encoder/decoder modules built on it.
//!
//! Axial attention restricts non-local self-attention to a single spatial
//! axis: every row (horizontal) or column (vertical) attends within itself,
//! which drops the affinity cost from (HW)² to HW·max(H,W). The parallel
//! block evaluates both axes on the same input and sums them element-wise;
//! no positional encoding is used.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv2d, GroupNorm, Init};
use crate::tensor::{ops, Element, Tensor};

/// Which spatial axis the attention operates along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionAxis {
    /// Each row attends over its W positions.
    Horizontal,
    /// Each column attends over its H positions.
    Vertical,
}

/// Single-axis non-local attention with a residual connection.
///
/// Query/key project to `C/reduction` channels, value and output projection
/// keep `C`. Output is `x + output(attention(x))`.
pub struct AxialAttention<E: Element> {
    pub query: Conv2d<E>,
    pub key: Conv2d<E>,
    pub value: Conv2d<E>,
    pub output: Conv2d<E>,
    axis: AttentionAxis,
}

impl<E: Element> AxialAttention<E> {
    pub fn new<R: Rng>(
        rng: &mut R,
        channels: usize,
        reduction: usize,
        axis: AttentionAxis,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::InvalidArg(format!(
                "axial attention: reduction {reduction} does not divide {channels} channels"
            )));
        }
        let qk = channels / reduction;
        Ok(AxialAttention {
            query: Conv2d::pointwise_no_bias(rng, channels, qk),
            key: Conv2d::pointwise_no_bias(rng, channels, qk),
            value: Conv2d::pointwise(rng, channels, channels, Init::Kaiming),
            output: Conv2d::pointwise(rng, channels, channels, Init::Kaiming),
            axis,
        })
    }

    pub fn axis(&self) -> AttentionAxis {
        self.axis
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, c, h, w) = x.dims4()?;
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let qk = q.shape()[1];

        // Collapse (batch, off-axis extent) into one batch dimension so each
        // row/column becomes an independent sequence for the batched matmul.
        let (seq, lanes) = match self.axis {
            AttentionAxis::Horizontal => (w, h),
            AttentionAxis::Vertical => (h, w),
        };
        let to_seq = |t: &Tensor<E>, ch: usize| -> Result<Tensor<E>> {
            let p = match self.axis {
                AttentionAxis::Horizontal => ops::permute(t, &[0, 2, 3, 1])?, // [B,H,W,C]
                AttentionAxis::Vertical => ops::permute(t, &[0, 3, 2, 1])?,   // [B,W,H,C]
            };
            ops::reshape(&p, &[b * lanes, seq, ch])
        };
        let q_seq = to_seq(&q, qk)?;
        let k_seq = to_seq(&k, qk)?;
        let v_seq = to_seq(&v, c)?;
        // affinity per lane: [seq, seq], rows softmax-normalized
        let k_t = ops::permute(&k_seq, &[0, 2, 1])?;
        let affinity = ops::softmax_last_axis(&ops::matmul(&q_seq, &k_t)?)?;
        let attended = ops::matmul(&affinity, &v_seq)?;
        let back = match self.axis {
            AttentionAxis::Horizontal => {
                ops::permute(&ops::reshape(&attended, &[b, lanes, seq, c])?, &[0, 3, 1, 2])?
            }
            AttentionAxis::Vertical => {
                ops::permute(&ops::reshape(&attended, &[b, lanes, seq, c])?, &[0, 3, 2, 1])?
            }
        };
        ops::add(x, &self.output.forward(&back)?)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.query.collect_params(&format!("{prefix}.query"), out);
        self.key.collect_params(&format!("{prefix}.key"), out);
        self.value.collect_params(&format!("{prefix}.value"), out);
        self.output.collect_params(&format!("{prefix}.output"), out);
    }
}

/// Parallel axial attention: horizontal and vertical branches evaluated on
/// the same input and summed element-wise.
pub struct PaaBlock<E: Element> {
    pub horizontal: AxialAttention<E>,
    pub vertical: AxialAttention<E>,
}

impl<E: Element> PaaBlock<E> {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, reduction: usize) -> Result<Self> {
        Ok(PaaBlock {
            horizontal: AxialAttention::new(rng, channels, reduction, AttentionAxis::Horizontal)?,
            vertical: AxialAttention::new(rng, channels, reduction, AttentionAxis::Vertical)?,
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        // Branch order must not matter; keep this a plain element-wise sum.
        ops::add(&self.horizontal.forward(x)?, &self.vertical.forward(x)?)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.horizontal
            .collect_params(&format!("{prefix}.horizontal"), out);
        self.vertical.collect_params(&format!("{prefix}.vertical"), out);
    }
}

/// Query/key channel reduction used by every attention block.
pub const ATTENTION_REDUCTION: usize = 8;

/// conv → group norm → relu unit used by the encoder/decoder stacks.
struct NormedConv<E: Element> {
    conv: Conv2d<E>,
    norm: GroupNorm<E>,
}

impl<E: Element> NormedConv<E> {
    fn new(conv: Conv2d<E>, channels: usize) -> Self {
        NormedConv {
            conv,
            norm: GroupNorm::new(channels, ATTENTION_REDUCTION),
        }
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(ops::relu(&self.norm.forward(&self.conv.forward(x)?)?))
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.norm.collect_params(&format!("{prefix}.norm"), out);
    }
}

struct EncoderBranch<E: Element> {
    convs: Vec<NormedConv<E>>,
    attention: Option<PaaBlock<E>>,
}

impl<E: Element> EncoderBranch<E> {
    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut cur = x.clone();
        for conv in &self.convs {
            cur = conv.forward(&cur)?;
        }
        match &self.attention {
            Some(paa) => paa.forward(&cur),
            None => Ok(cur),
        }
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.collect_params(&format!("{prefix}.conv{i}"), out);
        }
        if let Some(paa) = &self.attention {
            paa.collect_params(&format!("{prefix}.paa"), out);
        }
    }
}

/// Multi-receptive-field encoder: four branches (point-wise, and three
/// separable 1×k/k×1 stacks with dilated 3×3 tails, k ∈ {3,5,7},
/// dilation ∈ {3,5,7}), each refined by a parallel axial attention block,
/// concatenated, fused and residually connected. Reduces a backbone stage to
/// the network width.
pub struct PaaEncoder<E: Element> {
    branches: Vec<EncoderBranch<E>>,
    fuse: NormedConv<E>,
    residual: Conv2d<E>,
}

impl<E: Element> PaaEncoder<E> {
    pub fn new<R: Rng>(rng: &mut R, cin: usize, cm: usize, use_paa: bool) -> Result<Self> {
        let mut branches = Vec::with_capacity(4);
        for spec in [None, Some((3usize, 3usize)), Some((5, 5)), Some((7, 7))] {
            let mut convs = vec![NormedConv::new(
                Conv2d::pointwise(rng, cin, cm, Init::Kaiming),
                cm,
            )];
            if let Some((k, d)) = spec {
                let half = (k - 1) / 2;
                convs.push(NormedConv::new(
                    Conv2d::new(rng, cm, cm, (1, k), (1, 1), (0, half), (1, 1), Init::Kaiming),
                    cm,
                ));
                convs.push(NormedConv::new(
                    Conv2d::new(rng, cm, cm, (k, 1), (1, 1), (half, 0), (1, 1), Init::Kaiming),
                    cm,
                ));
                convs.push(NormedConv::new(
                    Conv2d::new(rng, cm, cm, (3, 3), (1, 1), (d, d), (d, d), Init::Kaiming),
                    cm,
                ));
            }
            let attention = if use_paa {
                Some(PaaBlock::new(rng, cm, ATTENTION_REDUCTION)?)
            } else {
                None
            };
            branches.push(EncoderBranch { convs, attention });
        }
        Ok(PaaEncoder {
            branches,
            fuse: NormedConv::new(Conv2d::same(rng, 4 * cm, cm, 3), cm),
            residual: Conv2d::pointwise(rng, cin, cm, Init::Kaiming),
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let outs: Vec<Tensor<E>> = self
            .branches
            .iter()
            .map(|br| br.forward(x))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<E>> = outs.iter().collect();
        let fused = self.fuse.forward(&ops::concat_channels(&refs)?)?;
        let short = self.residual.forward(x)?;
        Ok(ops::relu(&ops::add(&fused, &short)?))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for (i, br) in self.branches.iter().enumerate() {
            br.collect_params(&format!("{prefix}.branch{i}"), out);
        }
        self.fuse.collect_params(&format!("{prefix}.fuse"), out);
        self.residual
            .collect_params(&format!("{prefix}.residual"), out);
    }
}

/// Decoder over three encoder scales: upsample the coarser two to the finest,
/// concatenate, fuse, refine with one parallel axial attention block and
/// predict a 1-channel saliency logit map.
pub struct PaaDecoder<E: Element> {
    fuse1: NormedConv<E>,
    fuse2: NormedConv<E>,
    attention: Option<PaaBlock<E>>,
    head: Conv2d<E>,
}

impl<E: Element> PaaDecoder<E> {
    pub fn new<R: Rng>(rng: &mut R, cm: usize, use_paa: bool) -> Result<Self> {
        Ok(PaaDecoder {
            fuse1: NormedConv::new(Conv2d::same(rng, 3 * cm, cm, 3), cm),
            fuse2: NormedConv::new(Conv2d::same(rng, cm, cm, 3), cm),
            attention: if use_paa {
                Some(PaaBlock::new(rng, cm, ATTENTION_REDUCTION)?)
            } else {
                None
            },
            head: Conv2d::pointwise(rng, cm, 1, Init::Kaiming),
        })
    }

    /// `e2` is the finest scale; `e3`/`e4` must be coarser by exactly 2× and
    /// 4×. Returns `(feat, logit)` at `e2` resolution; the logit map stays a
    /// logit (no sigmoid) so downstream stages can refine it additively.
    pub fn forward(
        &self,
        e2: &Tensor<E>,
        e3: &Tensor<E>,
        e4: &Tensor<E>,
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        let (_, _, h2, w2) = e2.dims4()?;
        let (_, _, h3, w3) = e3.dims4()?;
        let (_, _, h4, w4) = e4.dims4()?;
        if (h3 * 2, w3 * 2) != (h2, w2) || (h4 * 4, w4 * 4) != (h2, w2) {
            return Err(Error::shape(
                "paa_decoder",
                format!(
                    "expected scales 1/2/4, got {:?}, {:?}, {:?}",
                    e2.shape(),
                    e3.shape(),
                    e4.shape()
                ),
            ));
        }
        let up3 = ops::bilinear_resize(e3, h2, w2)?;
        let up4 = ops::bilinear_resize(e4, h2, w2)?;
        let cat = ops::concat_channels(&[e2, &up3, &up4])?;
        let mut feat = self.fuse1.forward(&cat)?;
        feat = self.fuse2.forward(&feat)?;
        if let Some(paa) = &self.attention {
            feat = paa.forward(&feat)?;
        }
        let logit = self.head.forward(&feat)?;
        Ok((feat, logit))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.fuse1.collect_params(&format!("{prefix}.fuse1"), out);
        self.fuse2.collect_params(&format!("{prefix}.fuse2"), out);
        if let Some(paa) = &self.attention {
            paa.collect_params(&format!("{prefix}.paa"), out);
        }
        self.head.collect_params(&format!("{prefix}.head"), out);
    }
}
