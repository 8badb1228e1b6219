//! Naive per-pixel reference implementations of the attention operations.
//!
//! These are written as plain nested loops, independent of the matmul-based
//! implementations they are checked against. They share only parameter
//! values, never computation code, and are used by the self-verification
//! suite as well as the tests.

use crate::attention::{AttentionAxis, AxialAttention};
use crate::layers::Conv2d;
use crate::tensor::{Element, Tensor};
use crate::uaca::Uaca;

/// Point-wise convolution by explicit per-pixel dot products.
pub(crate) fn pointwise<E: Element>(
    conv: &Conv2d<E>,
    x: &[E],
    b: usize,
    cin: usize,
    hw: usize,
) -> Vec<E> {
    let w = conv.weight.data();
    let bias = conv.bias.data();
    let cout = conv.weight.shape()[0];
    debug_assert_eq!(conv.weight.shape()[1], cin);
    let mut out = vec![E::zero(); b * cout * hw];
    for bi in 0..b {
        for co in 0..cout {
            for i in 0..hw {
                let mut acc = bias[co];
                for ci in 0..cin {
                    acc = acc + w[co * cin + ci] * x[(bi * cin + ci) * hw + i];
                }
                out[(bi * cout + co) * hw + i] = acc;
            }
        }
    }
    out
}

/// Triple-loop axial attention: per row (or column), scores, softmax and the
/// weighted value sum are computed one scalar at a time.
pub fn axial_attention<E: Element>(attn: &AxialAttention<E>, x: &Tensor<E>) -> Vec<E> {
    let (b, c, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let xd = x.to_vec();
    let cq = attn.query.weight.shape()[0];
    let q = pointwise(&attn.query, &xd, b, c, hw);
    let k = pointwise(&attn.key, &xd, b, c, hw);
    let v = pointwise(&attn.value, &xd, b, c, hw);

    let horizontal = attn.axis() == AttentionAxis::Horizontal;
    let (lanes, seq) = if horizontal { (h, w) } else { (w, h) };
    let at = |buf: &[E], bi: usize, ch: usize, lane: usize, pos: usize, chs: usize| -> E {
        let (y, xx) = if horizontal { (lane, pos) } else { (pos, lane) };
        buf[(bi * chs + ch) * hw + y * w + xx]
    };

    let mut attended = vec![E::zero(); b * c * hw];
    for bi in 0..b {
        for lane in 0..lanes {
            // scores[i][j] then softmax per i
            for i in 0..seq {
                let mut scores = vec![E::zero(); seq];
                for (j, s) in scores.iter_mut().enumerate() {
                    let mut acc = E::zero();
                    for ch in 0..cq {
                        acc = acc + at(&q, bi, ch, lane, i, cq) * at(&k, bi, ch, lane, j, cq);
                    }
                    *s = acc;
                }
                let mut mx = scores[0];
                for &s in &scores {
                    if s > mx {
                        mx = s;
                    }
                }
                let mut denom = E::zero();
                for s in scores.iter_mut() {
                    *s = (*s - mx).exp();
                    denom = denom + *s;
                }
                for ch in 0..c {
                    let mut acc = E::zero();
                    for (j, &s) in scores.iter().enumerate() {
                        acc = acc + s / denom * at(&v, bi, ch, lane, j, c);
                    }
                    let (y, xx) = if horizontal { (lane, i) } else { (i, lane) };
                    attended[(bi * c + ch) * hw + y * w + xx] = acc;
                }
            }
        }
    }
    let projected = pointwise(&attn.output, &attended, b, c, hw);
    projected
        .iter()
        .zip(&xd)
        .map(|(&p, &xv)| xv + p)
        .collect()
}

/// Per-pixel accumulation of the area-weighted feature sums; returns
/// `[B*C]`-flattened vectors in (f, b, u) order.
pub fn context_vectors<E: Element>(
    x: &Tensor<E>,
    maps: [&Tensor<E>; 3],
) -> [Vec<E>; 3] {
    let (b, c, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let xd = x.data();
    let mut out: [Vec<E>; 3] = [
        vec![E::zero(); b * c],
        vec![E::zero(); b * c],
        vec![E::zero(); b * c],
    ];
    for (a, m) in maps.iter().enumerate() {
        let md = m.data();
        for bi in 0..b {
            for ch in 0..c {
                let mut acc = E::zero();
                for i in 0..hw {
                    acc = acc + md[bi * hw + i] * xd[(bi * c + ch) * hw + i];
                }
                out[a][bi * c + ch] = acc;
            }
        }
    }
    out
}

/// Scalar-dot-product similarity scores with an explicit three-way softmax;
/// returns `[B*H*W]` score maps in (f, b, u) order.
pub fn similarity_scores<E: Element>(
    uaca: &Uaca<E>,
    x: &Tensor<E>,
    vectors: [&[E]; 3],
) -> [Vec<E>; 3] {
    let (b, c, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let p = pointwise(&uaca.psi, &x.to_vec(), b, c, hw);
    let ce = uaca.psi.weight.shape()[0];
    let proj: Vec<Vec<E>> = vectors
        .iter()
        .map(|v| pointwise(&uaca.phi, v, b, c, 1))
        .collect();
    let mut raw = vec![vec![E::zero(); b * hw]; 3];
    for a in 0..3 {
        for bi in 0..b {
            for i in 0..hw {
                let mut acc = E::zero();
                for e in 0..ce {
                    acc = acc + p[(bi * ce + e) * hw + i] * proj[a][bi * ce + e];
                }
                raw[a][bi * hw + i] = acc;
            }
        }
    }
    let competitors = if uaca.uses_uncertainty() { 3 } else { 2 };
    let mut out = [
        vec![E::zero(); b * hw],
        vec![E::zero(); b * hw],
        vec![E::zero(); b * hw],
    ];
    for i in 0..b * hw {
        let mut mx = raw[0][i];
        for r in raw.iter().take(competitors) {
            if r[i] > mx {
                mx = r[i];
            }
        }
        let mut denom = E::zero();
        let mut e = vec![E::zero(); competitors];
        for (a, ev) in e.iter_mut().enumerate() {
            *ev = (raw[a][i] - mx).exp();
            denom = denom + *ev;
        }
        for (a, &ev) in e.iter().enumerate() {
            out[a][i] = ev / denom;
        }
    }
    out
}

/// Per-pixel weighted vector mixture followed by the δ projection; returns
/// the `[B,C,H,W]`-flattened context map.
pub fn context_aggregate<E: Element>(
    uaca: &Uaca<E>,
    scores: [&[E]; 3],
    vectors: [&[E]; 3],
    b: usize,
    c: usize,
    hw: usize,
) -> Vec<E> {
    let ce = uaca.omega.weight.shape()[0];
    let proj: Vec<Vec<E>> = vectors
        .iter()
        .map(|v| pointwise(&uaca.omega, v, b, c, 1))
        .collect();
    let competitors = if uaca.uses_uncertainty() { 3 } else { 2 };
    let mut mixed = vec![E::zero(); b * ce * hw];
    for bi in 0..b {
        for e in 0..ce {
            for i in 0..hw {
                let mut acc = E::zero();
                for a in 0..competitors {
                    acc = acc + scores[a][bi * hw + i] * proj[a][bi * ce + e];
                }
                mixed[(bi * ce + e) * hw + i] = acc;
            }
        }
    }
    pointwise(&uaca.delta, &mixed, b, ce, hw)
}
