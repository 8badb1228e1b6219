//! Uncertainty-augmented context attention.
//!
//! A guidance saliency map is split into three disjoint area maps —
//! foreground, background, and the uncertain band where the score hovers
//! around 0.5 (empirically the object boundary). Each area is summarized into
//! one representative context vector by an area-weighted sum over pixel
//! features; per-pixel similarities against the three vectors are normalized
//! into a partition of unity and used to mix the (projected) vectors back
//! into a context feature map. A residual 1-channel head then refines the
//! guidance logit, so a zero-initialized stage is an exact identity on it.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::netpbm;
use crate::error::Result;
use crate::layers::{Conv2d, Init};
use crate::tensor::{ops, Element, Tensor};

/// Disjoint area maps derived from a saliency map `m ∈ [0,1]`.
///
/// Invariants (exact algebraic identities): `m_f + m_b + m_u = 0.5`,
/// `m_f · m_b = 0`, `m = 0.5 + m_f − m_b`, all maps in `[0, 0.5]`.
pub struct AreaMaps<E: Element> {
    pub m_f: Tensor<E>,
    pub m_b: Tensor<E>,
    pub m_u: Tensor<E>,
}

/// Splits a saliency map into foreground / background / uncertainty areas:
/// `m_f = max(m−0.5, 0)`, `m_b = max(0.5−m, 0)`, `m_u = 0.5 − |m−0.5|`.
/// The max-rectification disentangles foreground and background from each
/// other and from the uncertain band.
pub fn area_maps<E: Element>(m: &Tensor<E>) -> Result<AreaMaps<E>> {
    let half = E::from_f64(0.5);
    let centered = ops::add_scalar(m, -half);
    let m_f = ops::scalar_max(&centered, E::zero());
    let m_b = ops::scalar_max(&ops::neg(&centered), E::zero());
    let m_u = ops::add_scalar(&ops::neg(&ops::abs(&centered)), half);
    Ok(AreaMaps { m_f, m_b, m_u })
}

/// One representative feature vector per area per batch item, shape `[B,C,1]`.
pub struct ContextVectors<E: Element> {
    pub v_f: Tensor<E>,
    pub v_b: Tensor<E>,
    pub v_u: Tensor<E>,
}

/// Area-weighted sums of pixel features: `v_a[c] = Σ_i m_a[i] · x[c,i]`,
/// realized as a `(C×HW)·(HW×1)` matrix product per batch item. The sums are
/// deliberately left unnormalized; the downstream projection and softmax
/// absorb the area-mass scale.
pub fn context_vectors<E: Element>(
    x: &Tensor<E>,
    areas: &AreaMaps<E>,
) -> Result<ContextVectors<E>> {
    let (b, c, h, w) = x.dims4()?;
    let (bm, _, hm, wm) = areas.m_f.dims4()?;
    if (bm, hm, wm) != (b, h, w) {
        return Err(crate::error::Error::shape(
            "context_vectors",
            format!("features {:?} vs area maps {:?}", x.shape(), areas.m_f.shape()),
        ));
    }
    let x_flat = ops::reshape(x, &[b, c, h * w])?;
    let weigh = |m: &Tensor<E>| -> Result<Tensor<E>> {
        ops::matmul(&x_flat, &ops::reshape(m, &[b, h * w, 1])?)
    };
    Ok(ContextVectors {
        v_f: weigh(&areas.m_f)?,
        v_b: weigh(&areas.m_b)?,
        v_u: weigh(&areas.m_u)?,
    })
}

/// Per-pixel similarity partition over the three context vectors,
/// each `[B,1,H,W]`; at every pixel `s_f + s_b + s_u = 1`.
///
/// With the uncertainty branch disabled, `s_u` is identically zero and the
/// partition runs over the two remaining competitors.
pub struct SimilarityScores<E: Element> {
    pub s_f: Tensor<E>,
    pub s_b: Tensor<E>,
    pub s_u: Tensor<E>,
}

/// The attention module: point-wise projections ψ (pixels), φ (vectors),
/// ω (values), δ (context output), the post-concat fusion and the residual
/// saliency head.
pub struct Uaca<E: Element> {
    pub psi: Conv2d<E>,
    pub phi: Conv2d<E>,
    pub omega: Conv2d<E>,
    pub delta: Conv2d<E>,
    pub fuse: Conv2d<E>,
    pub head: Conv2d<E>,
    use_uncertainty: bool,
    cin: usize,
}

/// Features, refined logit, the saliency map the stage derived from its
/// guidance, and the area maps (kept for inspection).
pub struct UacaOutput<E: Element> {
    pub feat: Tensor<E>,
    pub out_logit: Tensor<E>,
    pub m: Tensor<E>,
    pub maps: AreaMaps<E>,
}

impl<E: Element> Uaca<E> {
    /// `cin` is the feature width entering the module, `cm` the width of the
    /// fused output. Embeddings use `max(1, cin/2)` channels. The residual
    /// head starts at zero so a fresh stage forwards its guidance unchanged.
    ///
    /// `expected_mass` is the anticipated magnitude of the context vectors
    /// (roughly pixel count / 4, since the area maps live in `[0, 0.5]`).
    /// The vector sums are deliberately unnormalized, so φ and ω start with
    /// their fan-in scaling divided by this mass; otherwise the similarity
    /// scores open at O(mass) and the competitor softmax saturates into a
    /// gradient-free argmax.
    pub fn new<R: Rng>(
        rng: &mut R,
        cin: usize,
        cm: usize,
        use_uncertainty: bool,
        expected_mass: f64,
    ) -> Self {
        let ce = (cin / 2).max(1);
        let damp = E::from_f64(1.0 / expected_mass.max(1.0));
        let damped = |conv: Conv2d<E>| {
            let scaled: Vec<E> = conv.weight.data().iter().map(|&w| w * damp).collect();
            conv.weight.set_data(scaled);
            conv
        };
        // φ carries no bias: it would shift every competitor's score at a
        // pixel equally, which the score softmax cancels.
        Uaca {
            psi: Conv2d::pointwise(rng, cin, ce, Init::Kaiming),
            phi: damped(Conv2d::pointwise_no_bias(rng, cin, ce)),
            omega: damped(Conv2d::pointwise(rng, cin, ce, Init::Kaiming)),
            delta: Conv2d::pointwise(rng, ce, cin, Init::Kaiming),
            fuse: Conv2d::pointwise(rng, 2 * cin, cm, Init::Kaiming),
            head: Conv2d::pointwise(rng, cm, 1, Init::Zero),
            use_uncertainty,
            cin,
        }
    }

    pub fn uses_uncertainty(&self) -> bool {
        self.use_uncertainty
    }

    fn project_vector(&self, conv: &Conv2d<E>, v: &Tensor<E>) -> Result<Tensor<E>> {
        // [B,C,1] viewed as a 1×1 image so the point-wise conv applies.
        let b = v.shape()[0];
        let c = v.shape()[1];
        let img = ops::reshape(v, &[b, c, 1, 1])?;
        conv.forward(&img)
    }

    /// `s_a'(i) = ψ(x_i)ᵀ φ(v_a)`, then a softmax across the competitors at
    /// every pixel.
    pub fn similarity_scores(
        &self,
        x: &Tensor<E>,
        vectors: &ContextVectors<E>,
    ) -> Result<SimilarityScores<E>> {
        let (b, _, h, w) = x.dims4()?;
        let p = self.psi.forward(x)?;
        let ce = p.shape()[1];
        // [B,HW,Ce] pixel embeddings
        let p_rows = ops::reshape(&ops::permute(&p, &[0, 2, 3, 1])?, &[b, h * w, ce])?;
        let raw = |v: &Tensor<E>| -> Result<Tensor<E>> {
            let pv = self.project_vector(&self.phi, v)?;
            let col = ops::reshape(&pv, &[b, ce, 1])?;
            ops::reshape(&ops::matmul(&p_rows, &col)?, &[b, 1, h, w])
        };
        let s_f = raw(&vectors.v_f)?;
        let s_b = raw(&vectors.v_b)?;
        if self.use_uncertainty {
            let s_u = raw(&vectors.v_u)?;
            let parts = ops::softmax_over(&[&s_f, &s_b, &s_u])?;
            let mut it = parts.into_iter();
            Ok(SimilarityScores {
                s_f: it.next().unwrap(),
                s_b: it.next().unwrap(),
                s_u: it.next().unwrap(),
            })
        } else {
            let parts = ops::softmax_over(&[&s_f, &s_b])?;
            let mut it = parts.into_iter();
            Ok(SimilarityScores {
                s_f: it.next().unwrap(),
                s_b: it.next().unwrap(),
                s_u: Tensor::zeros(&[b, 1, h, w]),
            })
        }
    }

    /// `t_i = δ(s_f(i)·ω(v_f) + s_b(i)·ω(v_b) + s_u(i)·ω(v_u))`: every pixel
    /// is a score-weighted average of the projected context vectors. Each
    /// term is the outer product of a projected vector with its score map.
    pub fn context_aggregate(
        &self,
        scores: &SimilarityScores<E>,
        vectors: &ContextVectors<E>,
    ) -> Result<Tensor<E>> {
        let (b, _, h, w) = scores.s_f.dims4()?;
        let ce = self.delta.weight.shape()[1];
        let term = |v: &Tensor<E>, s: &Tensor<E>| -> Result<Tensor<E>> {
            let ov = ops::reshape(&self.project_vector(&self.omega, v)?, &[b, ce, 1])?;
            let row = ops::reshape(s, &[b, 1, h * w])?;
            ops::matmul(&ov, &row)
        };
        let mut mixed = ops::add(
            &term(&vectors.v_f, &scores.s_f)?,
            &term(&vectors.v_b, &scores.s_b)?,
        )?;
        if self.use_uncertainty {
            mixed = ops::add(&mixed, &term(&vectors.v_u, &scores.s_u)?)?;
        }
        let mixed4 = ops::reshape(&mixed, &[b, ce, h, w])?;
        self.delta.forward(&mixed4)
    }

    /// Full stage: resize the guidance logit to the feature resolution,
    /// squash to a saliency map, run the area attention, fuse the context
    /// with the input features, and add the residual head output back onto
    /// the resized guidance logit.
    pub fn forward(&self, x: &Tensor<E>, guidance_logit: &Tensor<E>) -> Result<UacaOutput<E>> {
        let (_, c, h, w) = x.dims4()?;
        debug_assert_eq!(c, self.cin, "uaca: unexpected input width");
        let g = ops::bilinear_resize(guidance_logit, h, w)?;
        let m = ops::sigmoid(&g);
        let maps = area_maps(&m)?;
        let vectors = context_vectors(x, &maps)?;
        let scores = self.similarity_scores(x, &vectors)?;
        let t = self.context_aggregate(&scores, &vectors)?;
        let feat = ops::relu(&self.fuse.forward(&ops::concat_channels(&[&t, x])?)?);
        let residual = self.head.forward(&feat)?;
        let out_logit = ops::add(&residual, &g)?;
        Ok(UacaOutput {
            feat,
            out_logit,
            m,
            maps,
        })
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.psi.collect_params(&format!("{prefix}.psi"), out);
        self.phi.collect_params(&format!("{prefix}.phi"), out);
        self.omega.collect_params(&format!("{prefix}.omega"), out);
        self.delta.collect_params(&format!("{prefix}.delta"), out);
        self.fuse.collect_params(&format!("{prefix}.fuse"), out);
        self.head.collect_params(&format!("{prefix}.head"), out);
    }
}

/// Writes a saliency map and its area maps as 8-bit grayscale PGMs for
/// inspection. Values are scaled by 510 (area maps live in `[0, 0.5]`) and
/// clamped. Returns the written paths.
pub fn write_area_map_images<E: Element>(
    dir: &Path,
    stage: usize,
    m: Option<&Tensor<E>>,
    maps: &AreaMaps<E>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, t: &Tensor<E>| -> Result<()> {
        let (_, _, h, w) = t.dims4()?;
        let bytes: Vec<u8> = t
            .data()
            .iter()
            .map(|&v| (v.to_f64() * 510.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let path = dir.join(format!("stage{stage}_{name}.pgm"));
        netpbm::write_pgm_bytes(&path, &bytes[..h * w], h, w)?;
        written.push(path);
        Ok(())
    };
    if let Some(m) = m {
        emit("m", m)?;
    }
    emit("m_f", &maps.m_f)?;
    emit("m_b", &maps.m_b)?;
    emit("m_u", &maps.m_u)?;
    Ok(written)
}
