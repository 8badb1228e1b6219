//! 2-d convolution, lowered to im2col + matrix multiply.

use super::matmul::{mm_acc, mm_nt_acc, mm_tn_acc};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    dilation: (usize, usize),
    oh: usize,
    ow: usize,
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let padded = size + 2 * pad;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Gathers one image's receptive fields into `cols[cin*kh*kw, oh*ow]`.
fn im2col<E: Element>(x: &[E], g: &ConvGeom, cols: &mut [E]) {
    let l = g.oh * g.ow;
    debug_assert_eq!(cols.len(), g.cin * g.kh * g.kw * l);
    let mut row = 0usize;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride.0 + ki * g.dilation.0) as isize - g.pad.0 as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        for v in drow.iter_mut() {
                            *v = E::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride.1 + kj * g.dilation.1) as isize - g.pad.1 as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            E::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds column gradients back onto one image (transpose of im2col).
fn col2im_acc<E: Element>(cols: &[E], g: &ConvGeom, dx: &mut [E]) {
    let l = g.oh * g.ow;
    let mut row = 0usize;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride.0 + ki * g.dilation.0) as isize - g.pad.0 as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * g.stride.1 + kj * g.dilation.1) as isize - g.pad.1 as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-d convolution with square stride/pad/dilation, gradients for input,
/// weight and bias.
///
/// Output extent is `(H + 2·pad − dilation·(kh−1) − 1)/stride + 1` and
/// analogously for width.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Result<Tensor<E>> {
    conv2d_ext(
        input,
        weight,
        bias,
        (stride, stride),
        (pad, pad),
        (dilation, dilation),
    )
}

/// Convolution with per-axis stride/pad/dilation (needed by the 1×k / k×1
/// separable stacks of the encoder).
pub fn conv2d_ext<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: (usize, usize),
    pad: (usize, usize),
    dilation: (usize, usize),
) -> Result<Tensor<E>> {
    let (batch, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input channels {:?} do not match weight {:?}",
                input.shape(),
                weight.shape()
            ),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias {:?} must be [{cout}]", bias.shape()),
        ));
    }
    if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
        return Err(Error::InvalidArg(
            "conv2d: stride and dilation must be >= 1".into(),
        ));
    }
    let oh = out_extent(h, kh, stride.0, pad.0, dilation.0);
    let ow = out_extent(w, kw, stride.1, pad.1, dilation.1);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {:?} does not fit input {:?} with pad {pad:?} dilation {dilation:?}",
                    weight.shape(),
                    input.shape()
                ),
            ))
        }
    };
    let geom = ConvGeom {
        batch,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad,
        dilation,
        oh,
        ow,
    };

    // Point-wise convolutions are a plain per-pixel channel mix; skip the
    // im2col roundtrip entirely.
    if kh == 1 && kw == 1 && stride == (1, 1) && pad == (0, 0) {
        return conv1x1(input, weight, bias, geom);
    }

    let ckk = cin * kh * kw;
    let l = oh * ow;
    let mut out = vec![E::zero(); batch * cout * l];
    {
        let x = input.data();
        let wm = weight.data();
        let bv = bias.data();
        let mut cols = vec![E::zero(); ckk * l];
        for b in 0..batch {
            im2col(&x[b * cin * h * w..(b + 1) * cin * h * w], &geom, &mut cols);
            let dst = &mut out[b * cout * l..(b + 1) * cout * l];
            mm_acc(&wm, &cols, dst, cout, ckk, l);
            for co in 0..cout {
                let bias_v = bv[co];
                for v in dst[co * l..(co + 1) * l].iter_mut() {
                    *v = *v + bias_v;
                }
            }
        }
    }

    // The record holds operand values by handle; im2col is recomputed in the
    // backward pass instead of caching the (potentially large) column matrix.
    let (pi, pw, pb) = (input.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        "conv2d",
        vec![batch, cout, oh, ow],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            let need_dx = pi.participates();
            let need_dw = pw.participates();
            if pb.participates() {
                pb.accum_grad_with(|db| {
                    for gb in g.chunks(geom.cout * l) {
                        for co in 0..geom.cout {
                            let mut s = E::zero();
                            for &v in &gb[co * l..(co + 1) * l] {
                                s = s + v;
                            }
                            db[co] = db[co] + s;
                        }
                    }
                });
            }
            if !need_dx && !need_dw {
                return;
            }
            let x = pi.data();
            let wm = pw.data();
            let mut cols = vec![E::zero(); ckk * l];
            let mut dw_acc = if need_dw { vec![E::zero(); geom.cout * ckk] } else { Vec::new() };
            let mut dx_acc = if need_dx {
                vec![E::zero(); geom.batch * geom.cin * geom.h * geom.w]
            } else {
                Vec::new()
            };
            let mut dcols = if need_dx { vec![E::zero(); ckk * l] } else { Vec::new() };
            for b in 0..geom.batch {
                let gb = &g[b * geom.cout * l..(b + 1) * geom.cout * l];
                if need_dw {
                    im2col(&x[b * geom.cin * geom.h * geom.w..], &geom, &mut cols);
                    mm_nt_acc(gb, &cols, &mut dw_acc, geom.cout, l, ckk);
                } else if need_dx {
                    // cols unused in this branch
                }
                if need_dx {
                    for v in dcols.iter_mut() {
                        *v = E::zero();
                    }
                    mm_tn_acc(&wm, gb, &mut dcols, ckk, geom.cout, l);
                    col2im_acc(
                        &dcols,
                        &geom,
                        &mut dx_acc[b * geom.cin * geom.h * geom.w
                            ..(b + 1) * geom.cin * geom.h * geom.w],
                    );
                }
            }
            drop(x);
            drop(wm);
            if need_dw {
                pw.accum_grad(&dw_acc);
            }
            if need_dx {
                pi.accum_grad(&dx_acc);
            }
        }),
    ))
}

/// 1×1 convolution as a direct `[Cout,Cin] · [Cin,HW]` product per image.
fn conv1x1<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    geom: ConvGeom,
) -> Result<Tensor<E>> {
    let (b, cin, cout) = (geom.batch, geom.cin, geom.cout);
    let hw = geom.h * geom.w;
    let mut out = vec![E::zero(); b * cout * hw];
    {
        let x = input.data();
        let wm = weight.data();
        let bv = bias.data();
        for bi in 0..b {
            let dst = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
            mm_acc(&wm, &x[bi * cin * hw..(bi + 1) * cin * hw], dst, cout, cin, hw);
            for co in 0..cout {
                let bias_v = bv[co];
                for v in dst[co * hw..(co + 1) * hw].iter_mut() {
                    *v = *v + bias_v;
                }
            }
        }
    }
    let (pi, pw, pb) = (input.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(
        "conv2d",
        vec![b, cout, geom.h, geom.w],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |g| {
            if pb.participates() {
                pb.accum_grad_with(|db| {
                    for gb in g.chunks(cout * hw) {
                        for co in 0..cout {
                            let mut s = E::zero();
                            for &v in &gb[co * hw..(co + 1) * hw] {
                                s = s + v;
                            }
                            db[co] = db[co] + s;
                        }
                    }
                });
            }
            let need_dx = pi.participates();
            let need_dw = pw.participates();
            if !need_dx && !need_dw {
                return;
            }
            let x = pi.data();
            let wm = pw.data();
            if need_dw {
                pw.accum_grad_with(|dw| {
                    for bi in 0..b {
                        // dW += G_b · X_bᵀ
                        mm_nt_acc(
                            &g[bi * cout * hw..(bi + 1) * cout * hw],
                            &x[bi * cin * hw..(bi + 1) * cin * hw],
                            dw,
                            cout,
                            hw,
                            cin,
                        );
                    }
                });
            }
            if need_dx {
                pi.accum_grad_with(|dx| {
                    for bi in 0..b {
                        // dX = Wᵀ · G_b
                        mm_tn_acc(
                            &wm,
                            &g[bi * cout * hw..(bi + 1) * cout * hw],
                            &mut dx[bi * cin * hw..(bi + 1) * cin * hw],
                            cin,
                            cout,
                            hw,
                        );
                    }
                });
            }
        }),
    ))
}
