//! Normalization-style operations: group normalization and softmax variants.

use super::{add, div, exp, sub};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Group normalization over `[B,C,H,W]` with per-channel affine parameters.
///
/// Channels are split into `groups` equal blocks; each (batch, group) slab is
/// normalized to zero mean / unit variance before the `gamma`/`beta` affine.
/// Statistics are computed per forward call, so batch size never affects the
/// result of another sample.
pub fn group_norm<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    groups: usize,
    eps: E,
) -> Result<Tensor<E>> {
    let (b, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidArg(format!(
            "group_norm: {groups} groups do not divide {c} channels"
        )));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "group_norm",
            format!(
                "gamma {:?} / beta {:?} must be [{c}]",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    let cg = c / groups;
    let slab = cg * h * w;
    let hw = h * w;
    let numel = b * c * hw;
    let mut out = vec![E::zero(); numel];
    let mut means = vec![E::zero(); b * groups];
    let mut rstds = vec![E::zero(); b * groups];
    {
        let xd = x.data();
        let gv = gamma.data();
        let bv = beta.data();
        let n = E::from_f64(slab as f64);
        for bi in 0..b {
            for gi in 0..groups {
                let base = bi * c * hw + gi * slab;
                let xs = &xd[base..base + slab];
                let mut mean = E::zero();
                for &v in xs {
                    mean = mean + v;
                }
                mean = mean / n;
                let mut var = E::zero();
                for &v in xs {
                    let d = v - mean;
                    var = var + d * d;
                }
                var = var / n;
                let rstd = E::one() / (var + eps).sqrt();
                means[bi * groups + gi] = mean;
                rstds[bi * groups + gi] = rstd;
                let dst = &mut out[base..base + slab];
                for ci in 0..cg {
                    let ch = gi * cg + ci;
                    let (ga, be) = (gv[ch], bv[ch]);
                    for j in 0..hw {
                        let v = xs[ci * hw + j];
                        dst[ci * hw + j] = (v - mean) * rstd * ga + be;
                    }
                }
            }
        }
    }
    let (px, pg, pb) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        "group_norm",
        vec![b, c, h, w],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            let xd = px.data();
            let gv = pg.data();
            let n = E::from_f64(slab as f64);
            // d_beta and d_gamma reduce over batch and space per channel.
            if pb.participates() {
                pb.accum_grad_with(|db| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let mut s = E::zero();
                            for &v in &g[bi * c * hw + ch * hw..bi * c * hw + (ch + 1) * hw] {
                                s = s + v;
                            }
                            db[ch] = db[ch] + s;
                        }
                    }
                });
            }
            if pg.participates() {
                pg.accum_grad_with(|dg| {
                    for bi in 0..b {
                        for gi in 0..groups {
                            let mean = means[bi * groups + gi];
                            let rstd = rstds[bi * groups + gi];
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                let base = bi * c * hw + ch * hw;
                                let mut s = E::zero();
                                for j in 0..hw {
                                    let xh = (xd[base + j] - mean) * rstd;
                                    s = s + g[base + j] * xh;
                                }
                                dg[ch] = dg[ch] + s;
                            }
                        }
                    }
                });
            }
            if px.participates() {
                px.accum_grad_with(|dx| {
                    for bi in 0..b {
                        for gi in 0..groups {
                            let mean = means[bi * groups + gi];
                            let rstd = rstds[bi * groups + gi];
                            let base = bi * c * hw + gi * slab;
                            // m1 = mean(dŷ), m2 = mean(dŷ ⊙ x̂) over the slab
                            let mut m1 = E::zero();
                            let mut m2 = E::zero();
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                let ga = gv[ch];
                                for j in 0..hw {
                                    let o = base + ci * hw + j;
                                    let dyh = g[o] * ga;
                                    let xh = (xd[o] - mean) * rstd;
                                    m1 = m1 + dyh;
                                    m2 = m2 + dyh * xh;
                                }
                            }
                            m1 = m1 / n;
                            m2 = m2 / n;
                            for ci in 0..cg {
                                let ch = gi * cg + ci;
                                let ga = gv[ch];
                                for j in 0..hw {
                                    let o = base + ci * hw + j;
                                    let dyh = g[o] * ga;
                                    let xh = (xd[o] - mean) * rstd;
                                    dx[o] = dx[o] + rstd * (dyh - m1 - xh * m2);
                                }
                            }
                        }
                    }
                });
            }
        }),
    ))
}

/// Softmax along the last axis (rows of an affinity matrix).
pub fn softmax_last_axis<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = x.shape().to_vec();
    let l = *shape
        .last()
        .ok_or_else(|| Error::InvalidArg("softmax_last_axis: 0-d input".into()))?;
    let rows = x.numel() / l;
    let mut out = vec![E::zero(); x.numel()];
    {
        let xd = x.data();
        for r in 0..rows {
            let src = &xd[r * l..(r + 1) * l];
            let dst = &mut out[r * l..(r + 1) * l];
            let mut mx = src[0];
            for &v in src {
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = E::zero();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mx).exp();
                sum = sum + *d;
            }
            for d in dst.iter_mut() {
                *d = *d / sum;
            }
        }
    }
    let px = x.clone();
    let y = out.clone();
    Ok(Tensor::from_op(
        "softmax_last_axis",
        shape,
        out,
        vec![x.clone()],
        Box::new(move |g| {
            if !px.participates() {
                return;
            }
            px.accum_grad_with(|dx| {
                for r in 0..rows {
                    let ys = &y[r * l..(r + 1) * l];
                    let gs = &g[r * l..(r + 1) * l];
                    let mut dot = E::zero();
                    for i in 0..l {
                        dot = dot + ys[i] * gs[i];
                    }
                    let dst = &mut dx[r * l..(r + 1) * l];
                    for i in 0..l {
                        dst[i] = dst[i] + ys[i] * (gs[i] - dot);
                    }
                }
            });
        }),
    ))
}

/// Element-wise softmax across a list of K same-shape competitors.
///
/// For every element position the K values are normalized to a positive
/// partition of unity: `out_k = exp(z_k - m) / Σ_j exp(z_j - m)` with `m` the
/// element-wise maximum over the list (detached shift; the softmax value and
/// its Jacobian are invariant to it). Built from primitive ops so the backward
/// rule falls out of the record.
pub fn softmax_over<E: Element>(items: &[&Tensor<E>]) -> Result<Vec<Tensor<E>>> {
    if items.is_empty() {
        return Err(Error::InvalidArg("softmax_over: empty competitor list".into()));
    }
    let shape = items[0].shape().to_vec();
    for it in items {
        if it.shape() != shape {
            return Err(Error::shape(
                "softmax_over",
                format!("{:?} vs {:?}", shape, it.shape()),
            ));
        }
    }
    // Detached element-wise max over the list for overflow safety.
    let mut mx = items[0].to_vec();
    for it in &items[1..] {
        for (m, &v) in mx.iter_mut().zip(it.data().iter()) {
            if v > *m {
                *m = v;
            }
        }
    }
    let shift = Tensor::from_vec(mx, &shape)?;
    let exps: Vec<Tensor<E>> = items
        .iter()
        .map(|it| Ok(exp(&sub(it, &shift)?)))
        .collect::<Result<_>>()?;
    let mut total = exps[0].clone();
    for e in &exps[1..] {
        total = add(&total, e)?;
    }
    exps.iter().map(|e| div(e, &total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_over_equal_inputs_gives_uniform() {
        let a = Tensor::full(&[2, 3], 1.7f64);
        let outs = softmax_over(&[&a, &a, &a]).unwrap();
        for o in outs {
            for v in o.to_vec() {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_over_scalar_case() {
        let z = Tensor::scalar(0.0f64);
        let l2 = Tensor::scalar(2.0f64.ln());
        let outs = softmax_over(&[&z, &z.clone(), &l2]).unwrap();
        let v: Vec<f64> = outs.iter().map(|t| t.item()).collect();
        assert!((v[0] - 0.25).abs() < 1e-12);
        assert!((v[1] - 0.25).abs() < 1e-12);
        assert!((v[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_over_single_item_is_all_ones() {
        let a = Tensor::from_vec(vec![-3.0f64, 100.0, 0.0], &[3]).unwrap();
        let outs = softmax_over(&[&a]).unwrap();
        assert_eq!(outs[0].to_vec(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_over_rejects_empty_list() {
        assert!(softmax_over::<f64>(&[]).is_err());
    }

    #[test]
    fn softmax_over_is_overflow_safe() {
        let a = Tensor::from_vec(vec![1000.0f32], &[1]).unwrap();
        let b = Tensor::from_vec(vec![999.0f32], &[1]).unwrap();
        let outs = softmax_over(&[&a, &b]).unwrap();
        let s: f32 = outs.iter().map(|t| t.item()).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(outs[0].item() > outs[1].item());
    }

    #[test]
    fn softmax_last_axis_rows_sum_to_one() {
        let x = Tensor::from_vec(vec![0.0f64, 1.0, -2.0, 5.0, 5.0, 5.0], &[2, 3]).unwrap();
        let y = softmax_last_axis(&x).unwrap();
        let v = y.to_vec();
        assert!((v[0..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for &u in &v[3..6] {
            assert!((u - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_normalizes_each_group() {
        let x = Tensor::from_vec(
            vec![1.0f64, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
            &[1, 2, 2, 2],
        )
        .unwrap();
        let gamma = Tensor::from_vec(vec![1.0f64, 1.0], &[2]).unwrap();
        let beta = Tensor::from_vec(vec![0.0f64, 0.0], &[2]).unwrap();
        let y = group_norm(&x, &gamma, &beta, 2, 1e-6).unwrap();
        let v = y.to_vec();
        for half in [&v[0..4], &v[4..8]] {
            let mean: f64 = half.iter().sum::<f64>() / 4.0;
            let var: f64 = half.iter().map(|&u| (u - mean) * (u - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
