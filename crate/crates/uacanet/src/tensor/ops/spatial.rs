//! Shape and resampling operations: bilinear resize, channel concatenation,
//! axis permutation, reshape.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Precomputed 1-d bilinear taps for one output axis (half-pixel centers,
/// `align_corners = false`, edge clamp).
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let i0f = src.floor();
            let frac = src - i0f;
            let i0 = (i0f as isize).clamp(0, in_len as isize - 1) as usize;
            let i1 = ((i0f as isize + 1).clamp(0, in_len as isize - 1)) as usize;
            (i0, i1, frac)
        })
        .collect()
}

/// Resizes the spatial extents of `[B,C,H,W]` to `(out_h, out_w)` by bilinear
/// interpolation with half-pixel sample centers. Resizing to the input size
/// reproduces it bit-identically.
pub fn bilinear_resize<E: Element>(
    x: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArg(
            "bilinear_resize: output extents must be >= 1".into(),
        ));
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = vec![E::zero(); b * c * out_h * out_w];
    {
        let xd = x.data();
        for plane in 0..b * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = E::from_f64(fy);
                let wy0 = E::one() - fy;
                let r0 = &src[y0 * w..y0 * w + w];
                let r1 = &src[y1 * w..y1 * w + w];
                let drow = &mut dst[oy * out_w..(oy + 1) * out_w];
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = E::from_f64(fx);
                    let wx0 = E::one() - fx;
                    let top = wx0 * r0[x0] + fx * r0[x1];
                    let bot = wx0 * r1[x0] + fx * r1[x1];
                    drow[ox] = wy0 * top + fy * bot;
                }
            }
        }
    }
    let px = x.clone();
    Ok(Tensor::from_op(
        "bilinear_resize",
        vec![b, c, out_h, out_w],
        out,
        vec![x.clone()],
        Box::new(move |g| {
            if !px.participates() {
                return;
            }
            let ty = bilinear_taps(h, out_h);
            let tx = bilinear_taps(w, out_w);
            px.accum_grad_with(|dx| {
                for plane in 0..b * c {
                    let gsrc = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                    let dplane = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        let fy = E::from_f64(fy);
                        let wy0 = E::one() - fy;
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let fx = E::from_f64(fx);
                            let wx0 = E::one() - fx;
                            let gv = gsrc[oy * out_w + ox];
                            dplane[y0 * w + x0] = dplane[y0 * w + x0] + gv * wy0 * wx0;
                            dplane[y0 * w + x1] = dplane[y0 * w + x1] + gv * wy0 * fx;
                            dplane[y1 * w + x0] = dplane[y1 * w + x0] + gv * fy * wx0;
                            dplane[y1 * w + x1] = dplane[y1 * w + x1] + gv * fy * fx;
                        }
                    }
                }
            });
        }),
    ))
}

/// Concatenates `[B,Ci,H,W]` tensors along the channel axis, in argument
/// order. Backward splits the gradient back into per-input blocks.
pub fn concat_channels<E: Element>(xs: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if xs.is_empty() {
        return Err(Error::InvalidArg("concat_channels: empty input list".into()));
    }
    let (b, _, h, w) = xs[0].dims4()?;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let (bi, ci, hi, wi) = x.dims4()?;
        if (bi, hi, wi) != (b, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", xs[0].shape(), x.shape()),
            ));
        }
        channels.push(ci);
    }
    let ctot: usize = channels.iter().sum();
    let mut out = vec![E::zero(); b * ctot * h * w];
    let hw = h * w;
    for bi in 0..b {
        let mut coff = 0usize;
        for (x, &ci) in xs.iter().zip(&channels) {
            let xd = x.data();
            let src = &xd[bi * ci * hw..(bi + 1) * ci * hw];
            out[(bi * ctot + coff) * hw..(bi * ctot + coff + ci) * hw].copy_from_slice(src);
            coff += ci;
        }
    }
    let parents: Vec<Tensor<E>> = xs.iter().map(|x| (*x).clone()).collect();
    let handles = parents.clone();
    let channels_c = channels.clone();
    Ok(Tensor::from_op(
        "concat_channels",
        vec![b, ctot, h, w],
        out,
        parents,
        Box::new(move |g| {
            for bi in 0..b {
                let mut coff = 0usize;
                for (x, &ci) in handles.iter().zip(&channels_c) {
                    if x.participates() {
                        let src = &g[(bi * ctot + coff) * hw..(bi * ctot + coff + ci) * hw];
                        x.accum_grad_with(|dst| {
                            let block = &mut dst[bi * ci * hw..(bi + 1) * ci * hw];
                            for (d, &s) in block.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        });
                    }
                    coff += ci;
                }
            }
        }),
    ))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_raw<E: Element>(src: &[E], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<E>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let permuted_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel: usize = shape.iter().product();
    let mut out = vec![E::zero(); numel];
    let mut idx = vec![0usize; out_shape.len()];
    for o in out.iter_mut() {
        let mut src_off = 0usize;
        for (i, &ix) in idx.iter().enumerate() {
            src_off += ix * permuted_strides[i];
        }
        *o = src[src_off];
        // odometer increment over out_shape
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// Reorders axes; `axes` is a permutation of `0..ndim`.
pub fn permute<E: Element>(x: &Tensor<E>, axes: &[usize]) -> Result<Tensor<E>> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::InvalidArg(format!(
            "permute: {axes:?} is not a permutation of 0..{nd}"
        )));
    }
    let (out_shape, out) = permute_raw(&x.data(), x.shape(), axes);
    let px = x.clone();
    let mut inverse = vec![0usize; nd];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    let fwd_shape = out_shape.clone();
    Ok(Tensor::from_op(
        "permute",
        out_shape,
        out,
        vec![x.clone()],
        Box::new(move |g| {
            if px.participates() {
                let (_, gsrc) = permute_raw(g, &fwd_shape, &inverse);
                px.accum_grad(&gsrc);
            }
        }),
    ))
}

/// Reinterprets the data with a new shape of equal element count.
pub fn reshape<E: Element>(x: &Tensor<E>, shape: &[usize]) -> Result<Tensor<E>> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() {
        return Err(Error::shape(
            "reshape",
            format!("{:?} -> {:?}", x.shape(), shape),
        ));
    }
    let px = x.clone();
    Ok(Tensor::from_op(
        "reshape",
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(move |g| {
            if px.participates() {
                px.accum_grad(g);
            }
        }),
    ))
}
