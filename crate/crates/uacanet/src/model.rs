//! The full network: a lightweight convolutional backbone, three parallel
//! axial attention encoders, one decoder producing the initial saliency map,
//! and three uncertainty-augmented context attention stages refining it
//! bottom-up (coarse to fine). Four saliency logits come out, all supervised.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{PaaDecoder, PaaEncoder};
use crate::error::{Error, Result};
use crate::layers::ConvBlock;
use crate::tensor::{ops, Element, Tensor};
use crate::uaca::{AreaMaps, Uaca};

const NORM_GROUPS: usize = 8;

/// Architecture hyperparameters. `width` is the channel count of every
/// convolution outside the backbone: 32 for the small model, 256 for the
/// large one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub width: usize,
    /// Input side length; must be divisible by 32.
    pub side: usize,
    /// Backbone stage widths (strides 2, 4, 8, 16). Empty selects defaults
    /// derived from `width`.
    pub backbone_widths: Vec<usize>,
    /// Ablation: drop every parallel axial attention block.
    pub disable_paa: bool,
    /// Ablation: two-area context attention (no uncertainty branch).
    pub disable_uncertainty: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 32,
            side: 352,
            backbone_widths: Vec::new(),
            disable_paa: false,
            disable_uncertainty: false,
        }
    }
}

fn round8(v: usize) -> usize {
    v.div_ceil(8) * 8
}

impl ModelConfig {
    /// Small configuration for tests and experiments at reduced scale.
    pub fn desk(width: usize, side: usize) -> Self {
        ModelConfig {
            width,
            side,
            ..Default::default()
        }
    }

    pub fn resolved_backbone_widths(&self) -> Vec<usize> {
        if self.backbone_widths.is_empty() {
            let w = self.width;
            vec![w, round8(w * 3 / 2), 2 * w, 3 * w]
        } else {
            self.backbone_widths.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.width % 8 != 0 {
            return Err(Error::Config(format!(
                "model.width must be a positive multiple of 8, got {}",
                self.width
            )));
        }
        if self.side == 0 || self.side % 32 != 0 {
            return Err(Error::Config(format!(
                "model.side must be divisible by 32, got {}",
                self.side
            )));
        }
        let widths = self.resolved_backbone_widths();
        if widths.len() != 4 {
            return Err(Error::Config(format!(
                "model.backbone_widths needs 4 stages, got {}",
                widths.len()
            )));
        }
        for &w in &widths {
            if w < NORM_GROUPS || w % NORM_GROUPS != 0 {
                return Err(Error::Config(format!(
                    "backbone width {w} must be a positive multiple of {NORM_GROUPS}"
                )));
            }
        }
        Ok(())
    }
}

/// Stripped-down convolutional backbone: four stages of two 3×3
/// conv/group-norm/relu blocks each, the first at stride 2, producing
/// features at strides 2, 4, 8 and 16 of the input.
pub struct BackboneLite<E: Element> {
    stages: Vec<(ConvBlock<E>, ConvBlock<E>)>,
}

impl<E: Element> BackboneLite<E> {
    pub fn new(rng: &mut ChaCha8Rng, widths: &[usize]) -> Self {
        let mut stages = Vec::with_capacity(widths.len());
        let mut cin = 3;
        for &w in widths {
            stages.push((
                ConvBlock::new(rng, cin, w, 2, NORM_GROUPS),
                ConvBlock::new(rng, w, w, 1, NORM_GROUPS),
            ));
            cin = w;
        }
        BackboneLite { stages }
    }

    /// Runs all stages and returns the stride-4, stride-8 and stride-16
    /// feature maps.
    pub fn forward(&self, image: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 || h != w || h % 32 != 0 {
            return Err(Error::shape(
                "backbone",
                format!("expected [B,3,S,S] with S divisible by 32, got {:?}", image.shape()),
            ));
        }
        let mut cur = image.clone();
        let mut taps = Vec::with_capacity(self.stages.len());
        for (down, refine) in &self.stages {
            cur = refine.forward(&down.forward(&cur)?)?;
            taps.push(cur.clone());
        }
        Ok((taps[1].clone(), taps[2].clone(), taps[3].clone()))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for (i, (a, b)) in self.stages.iter().enumerate() {
            a.collect_params(&format!("{prefix}.stage{i}.block0"), out);
            b.collect_params(&format!("{prefix}.stage{i}.block1"), out);
        }
    }
}

/// Saliency map and area maps captured from one refinement stage.
pub struct StageMaps<E: Element> {
    pub m: Tensor<E>,
    pub maps: AreaMaps<E>,
}

/// All four supervised logits, at stage resolution and upsampled to the
/// input side.
pub struct ModelOutput<E: Element> {
    /// Decoder logit at stride 4.
    pub d_logit: Tensor<E>,
    /// Stage logits at strides 16, 8, 4 (bottom-up order).
    pub u_logits: [Tensor<E>; 3],
    /// The same four logits bilinearly upsampled to the input resolution.
    pub d_up: Tensor<E>,
    pub u_up: [Tensor<E>; 3],
    /// Per-stage saliency/area maps (detached), present when requested.
    pub stage_maps: Option<Vec<StageMaps<E>>>,
}

impl<E: Element> ModelOutput<E> {
    /// The four supervised logits at input resolution, in supervision order.
    pub fn supervised(&self) -> [&Tensor<E>; 4] {
        [&self.d_up, &self.u_up[0], &self.u_up[1], &self.u_up[2]]
    }

    /// Final probability map: sigmoid of the last stage's upsampled logit.
    pub fn probability(&self) -> Tensor<E> {
        ops::sigmoid(&self.u_up[2])
    }
}

pub struct Model<E: Element> {
    pub config: ModelConfig,
    backbone: BackboneLite<E>,
    encoders: [PaaEncoder<E>; 3],
    decoder: PaaDecoder<E>,
    stages: [Uaca<E>; 3],
}

impl<E: Element> Model<E> {
    /// Builds the network with parameters drawn deterministically from
    /// `seed`. Residual stage heads start at zero, so a fresh model's stage
    /// logits replicate the decoder logit exactly.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let widths = config.resolved_backbone_widths();
        let cm = config.width;
        let use_paa = !config.disable_paa;
        let use_u = !config.disable_uncertainty;
        let backbone = BackboneLite::new(rng, &widths);
        let encoders = [
            PaaEncoder::new(rng, widths[1], cm, use_paa)?,
            PaaEncoder::new(rng, widths[2], cm, use_paa)?,
            PaaEncoder::new(rng, widths[3], cm, use_paa)?,
        ];
        let decoder = PaaDecoder::new(rng, cm, use_paa)?;
        // stage resolutions are side/16, side/8, side/4; the expected context
        // vector mass scales with the pixel count
        let mass = |stride: usize| {
            let px = (config.side / stride) * (config.side / stride);
            px as f64 / 4.0
        };
        let stages = [
            Uaca::new(rng, 2 * cm, cm, use_u, mass(16)),
            Uaca::new(rng, 2 * cm, cm, use_u, mass(8)),
            Uaca::new(rng, 2 * cm, cm, use_u, mass(4)),
        ];
        Ok(Model {
            config: config.clone(),
            backbone,
            encoders,
            decoder,
            stages,
        })
    }

    pub fn forward(&self, image: &Tensor<E>) -> Result<ModelOutput<E>> {
        self.forward_full(image, false)
    }

    /// Forward pass; `collect_maps` additionally captures each stage's
    /// saliency and area maps (detached from the record).
    pub fn forward_full(&self, image: &Tensor<E>, collect_maps: bool) -> Result<ModelOutput<E>> {
        let (_, _, s, _) = image.dims4()?;
        let (f2, f3, f4) = self.backbone.forward(image)?;
        let e2 = self.encoders[0].forward(&f2)?;
        let e3 = self.encoders[1].forward(&f3)?;
        let e4 = self.encoders[2].forward(&f4)?;
        let (d_feat, d_logit) = self.decoder.forward(&e2, &e3, &e4)?;

        let mut maps = Vec::new();
        let stage_in = |e: &Tensor<E>, prev_feat: &Tensor<E>| -> Result<Tensor<E>> {
            let (_, _, h, w) = e.dims4()?;
            let resized = ops::bilinear_resize(prev_feat, h, w)?;
            ops::concat_channels(&[e, &resized])
        };

        let o1 = self.stages[0].forward(&stage_in(&e4, &d_feat)?, &d_logit)?;
        let o2 = self.stages[1].forward(&stage_in(&e3, &o1.feat)?, &o1.out_logit)?;
        let o3 = self.stages[2].forward(&stage_in(&e2, &o2.feat)?, &o2.out_logit)?;
        if collect_maps {
            for o in [&o1, &o2, &o3] {
                maps.push(StageMaps {
                    m: o.m.detach(),
                    maps: AreaMaps {
                        m_f: o.maps.m_f.detach(),
                        m_b: o.maps.m_b.detach(),
                        m_u: o.maps.m_u.detach(),
                    },
                });
            }
        }

        let up = |t: &Tensor<E>| ops::bilinear_resize(t, s, s);
        Ok(ModelOutput {
            d_up: up(&d_logit)?,
            u_up: [up(&o1.out_logit)?, up(&o2.out_logit)?, up(&o3.out_logit)?],
            d_logit,
            u_logits: [o1.out_logit, o2.out_logit, o3.out_logit],
            stage_maps: if collect_maps { Some(maps) } else { None },
        })
    }

    /// Every learnable parameter with a stable, unique name.
    pub fn parameters(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.backbone.collect_params("backbone", &mut out);
        for (i, enc) in self.encoders.iter().enumerate() {
            enc.collect_params(&format!("enc{}", i + 2), &mut out);
        }
        self.decoder.collect_params("decoder", &mut out);
        for (i, st) in self.stages.iter().enumerate() {
            st.collect_params(&format!("uaca{}", i + 1), &mut out);
        }
        out
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }
}
