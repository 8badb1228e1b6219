//! Differentiable tensor operations.
//!
//! Broadcasting is deliberately restricted to scalar-against-tensor; two
//! tensor operands must agree on shape exactly. Subgradients at the kinks of
//! `relu`/`abs`/`scalar_max`/`clamp` are fixed to 0 so tests are exact.

mod conv;
mod matmul;
mod norm;
mod spatial;

pub use conv::{conv2d, conv2d_ext};
pub use matmul::matmul;
pub use norm::{group_norm, softmax_last_axis, softmax_over};
pub use spatial::{bilinear_resize, concat_channels, permute, reshape};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_same_shape<E: Element>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Element-wise sum of two same-shape tensors.
pub fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_same_shape("add", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.participates() {
                pa.accum_grad(g);
            }
            if pb.participates() {
                pb.accum_grad(g);
            }
        }),
    ))
}

/// Element-wise difference `a - b`.
pub fn sub<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_same_shape("sub", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x - y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        "sub",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.participates() {
                pa.accum_grad(g);
            }
            if pb.participates() {
                pb.accum_grad_with(|dst| {
                    for (d, &gi) in dst.iter_mut().zip(g) {
                        *d = *d - gi;
                    }
                });
            }
        }),
    ))
}

/// Element-wise product of two same-shape tensors.
pub fn mul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_same_shape("mul", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x * y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    let (va, vb) = (a.to_vec(), b.to_vec());
    Ok(Tensor::from_op(
        "mul",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.participates() {
                pa.accum_grad_with(|dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + g[i] * vb[i];
                    }
                });
            }
            if pb.participates() {
                pb.accum_grad_with(|dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + g[i] * va[i];
                    }
                });
            }
        }),
    ))
}

/// Element-wise quotient `a / b`; caller guards against zero denominators.
pub fn div<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    check_same_shape("div", a, b)?;
    let data: Vec<E> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x / y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    let (va, vb) = (a.to_vec(), b.to_vec());
    Ok(Tensor::from_op(
        "div",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.participates() {
                pa.accum_grad_with(|dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + g[i] / vb[i];
                    }
                });
            }
            if pb.participates() {
                pb.accum_grad_with(|dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] - g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
        }),
    ))
}

fn unary<E: Element>(
    op: &'static str,
    x: &Tensor<E>,
    fwd: impl Fn(E) -> E,
    // local derivative as a function of (input, output)
    dfdx: impl Fn(E, E) -> E + 'static,
) -> Tensor<E> {
    let data: Vec<E> = x.data().iter().map(|&v| fwd(v)).collect();
    let px = x.clone();
    let vx = x.to_vec();
    let vy = data.clone();
    Tensor::from_op(
        op,
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g| {
            if px.participates() {
                px.accum_grad_with(|dst| {
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + g[i] * dfdx(vx[i], vy[i]);
                    }
                });
            }
        }),
    )
}

/// Adds a scalar to every element.
pub fn add_scalar<E: Element>(x: &Tensor<E>, c: E) -> Tensor<E> {
    unary("add_scalar", x, |v| v + c, |_, _| E::one())
}

/// Multiplies every element by a scalar.
pub fn mul_scalar<E: Element>(x: &Tensor<E>, c: E) -> Tensor<E> {
    unary("mul_scalar", x, |v| v * c, move |_, _| c)
}

pub fn neg<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    mul_scalar(x, -E::one())
}

/// `max(x, 0)` with subgradient 0 at the kink.
pub fn relu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    unary(
        "relu",
        x,
        |v| if v > E::zero() { v } else { E::zero() },
        |v, _| if v > E::zero() { E::one() } else { E::zero() },
    )
}

/// Element-wise `max(x, c)` against a scalar; subgradient 0 at `x == c`.
pub fn scalar_max<E: Element>(x: &Tensor<E>, c: E) -> Tensor<E> {
    unary(
        "scalar_max",
        x,
        move |v| if v > c { v } else { c },
        move |v, _| if v > c { E::one() } else { E::zero() },
    )
}

/// Element-wise absolute value; subgradient 0 at 0.
pub fn abs<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    unary(
        "abs",
        x,
        |v| v.abs(),
        |v, _| {
            if v > E::zero() {
                E::one()
            } else if v < E::zero() {
                -E::one()
            } else {
                E::zero()
            }
        },
    )
}

/// Clamps into `[lo, hi]`; gradient passes only strictly inside the range.
pub fn clamp<E: Element>(x: &Tensor<E>, lo: E, hi: E) -> Tensor<E> {
    unary(
        "clamp",
        x,
        move |v| v.max(lo).min(hi),
        move |v, _| {
            if v > lo && v < hi {
                E::one()
            } else {
                E::zero()
            }
        },
    )
}

/// Natural logarithm.
pub fn ln<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    unary("ln", x, |v| v.ln(), |v, _| E::one() / v)
}

/// Exponential.
pub fn exp<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    unary("exp", x, |v| v.exp(), |_, y| y)
}

/// Numerically stable logistic sigmoid; backward uses σ'(x) = σ(x)(1−σ(x)).
pub fn sigmoid<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    unary(
        "sigmoid",
        x,
        |v| {
            if v >= E::zero() {
                E::one() / (E::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (E::one() + e)
            }
        },
        |_, y| y * (E::one() - y),
    )
}

/// Sum of all elements as a `[1]`-shaped tensor.
pub fn sum_all<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let total: E = x.data().iter().copied().sum();
    let px = x.clone();
    Tensor::from_op(
        "sum_all",
        vec![1],
        vec![total],
        vec![x.clone()],
        Box::new(move |g| {
            if px.participates() {
                let gi = g[0];
                px.accum_grad_with(|dst| {
                    for d in dst.iter_mut() {
                        *d = *d + gi;
                    }
                });
            }
        }),
    )
}

/// Mean of all elements as a `[1]`-shaped tensor.
pub fn mean_all<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let n = E::from_f64(x.numel() as f64);
    let total: E = x.data().iter().copied().sum();
    let px = x.clone();
    Tensor::from_op(
        "mean_all",
        vec![1],
        vec![total / n],
        vec![x.clone()],
        Box::new(move |g| {
            if px.participates() {
                let gi = g[0] / n;
                px.accum_grad_with(|dst| {
                    for d in dst.iter_mut() {
                        *d = *d + gi;
                    }
                });
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn scalar_max_at_zero() {
        let y = scalar_max(&t(&[-1.0, 0.0, 2.0]), 0.0);
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn abs_is_symmetric() {
        let y = abs(&t(&[-0.3, 0.3]));
        assert_eq!(y.to_vec(), vec![0.3, 0.3]);
    }

    #[test]
    fn add_backward_passes_upstream_to_both() {
        let a = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        let b = Tensor::param(vec![3.0f64, 4.0], &[2]).unwrap();
        let loss = sum_all(&mul_scalar(&add(&a, &b).unwrap(), 2.0));
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = t(&[1.0, 2.0]);
        let b = Tensor::from_vec(vec![1.0], &[1]).unwrap();
        let err = add(&a, &b).unwrap_err();
        assert!(err.to_string().contains("[2]") && err.to_string().contains("[1]"));
    }

    #[test]
    fn sigmoid_reference_points() {
        let y = sigmoid(&t(&[0.0, -50.0, 3.0f64.ln()]));
        let v = y.to_vec();
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!(v[1] >= 0.0 && v[1] < 1e-20 && v[1].is_finite());
        assert!((v[2] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let x = Tensor::param(vec![-1.0f64, 0.5, 2.0], &[3]).unwrap();
        let loss = sum_all(&clamp(&x, 0.0, 1.0));
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }
}
