//! Batched matrix multiplication.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `c += a · b` for row-major `a: [m,k]`, `b: [k,n]`. Fixed i-k-j loop order:
/// deterministic and cache-friendly on the row-major operands.
pub(crate) fn mm_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j] + av * b_row[j];
            }
        }
    }
}

/// `c += a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
pub(crate) fn mm_nt_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for p in 0..k {
                acc = acc + a_row[p] * b_row[p];
            }
            c_row[j] = c_row[j] + acc;
        }
    }
}

/// `c += aᵀ · b` for `a: [k,m]`, `b: [k,n]`.
pub(crate) fn mm_tn_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a_row[i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j] + av * b_row[j];
            }
        }
    }
}

/// Leading (batch) extents of both operands aligned to a common rank.
/// Each extent must match or be 1 on one side.
fn batch_layout(
    a_shape: &[usize],
    b_shape: &[usize],
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let ra = &a_shape[..a_shape.len() - 2];
    let rb = &b_shape[..b_shape.len() - 2];
    let rank = ra.len().max(rb.len());
    let mut batch = vec![1usize; rank];
    let mut pa = vec![1usize; rank];
    let mut pb = vec![1usize; rank];
    for i in 0..rank {
        let da = if i < rank - ra.len() { 1 } else { ra[i - (rank - ra.len())] };
        let db = if i < rank - rb.len() { 1 } else { rb[i - (rank - rb.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::shape(
                "matmul",
                format!("batch extents {a_shape:?} vs {b_shape:?}"),
            ));
        }
        batch[i] = da.max(db);
        pa[i] = da;
        pb[i] = db;
    }
    Ok((batch, pa, pb))
}

/// Flat offset of batch index `idx` into an operand whose padded batch shape
/// is `dims` (extent-1 dims broadcast, i.e. contribute stride 0).
fn batch_offset(idx: &[usize], dims: &[usize], mat_len: usize) -> usize {
    let mut off = 0usize;
    for (i, (&ix, &d)) in idx.iter().zip(dims).enumerate() {
        let _ = i;
        off = off * d + if d == 1 { 0 } else { ix };
    }
    off * mat_len
}

/// Batched contraction `[.., M, K] · [.., K, N] -> [.., M, N]`.
///
/// Leading extents must agree or broadcast from 1; gradients of a broadcast
/// operand are summed over the broadcast batch dimensions.
pub fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let a_shape = a.shape().to_vec();
    let b_shape = b.shape().to_vec();
    if a_shape.len() < 2 || b_shape.len() < 2 {
        return Err(Error::shape(
            "matmul",
            format!("operands must be at least 2-d, got {a_shape:?} and {b_shape:?}"),
        ));
    }
    let (m, ka) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
    let (kb, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
    if ka != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner extents disagree: {a_shape:?} vs {b_shape:?}"),
        ));
    }
    let k = ka;
    let (batch, pa, pb) = batch_layout(&a_shape, &b_shape)?;
    let nbatch: usize = batch.iter().product();

    let mut out_shape = batch.clone();
    out_shape.push(m);
    out_shape.push(n);
    let mut data = vec![E::zero(); nbatch * m * n];

    let a_data = a.data();
    let b_data = b.data();
    let mut idx = vec![0usize; batch.len()];
    for (bi, chunk) in data.chunks_mut(m * n).enumerate() {
        decode_index(bi, &batch, &mut idx);
        let ao = batch_offset(&idx, &pa, m * k);
        let bo = batch_offset(&idx, &pb, k * n);
        mm_acc(&a_data[ao..ao + m * k], &b_data[bo..bo + k * n], chunk, m, k, n);
    }
    drop(a_data);
    drop(b_data);

    let (pa_t, pb_t) = (a.clone(), b.clone());
    let (va, vb) = (a.to_vec(), b.to_vec());
    let batch_c = batch.clone();
    let (pa_c, pb_c) = (pa.clone(), pb.clone());
    Ok(Tensor::from_op(
        "matmul",
        out_shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let mut idx = vec![0usize; batch_c.len()];
            if pa_t.participates() {
                pa_t.accum_grad_with(|da| {
                    for (bi, gchunk) in g.chunks(m * n).enumerate() {
                        decode_index(bi, &batch_c, &mut idx);
                        let ao = batch_offset(&idx, &pa_c, m * k);
                        let bo = batch_offset(&idx, &pb_c, k * n);
                        // dA = G · Bᵀ
                        mm_nt_acc(gchunk, &vb[bo..bo + k * n], &mut da[ao..ao + m * k], m, n, k);
                    }
                });
            }
            if pb_t.participates() {
                pb_t.accum_grad_with(|db| {
                    for (bi, gchunk) in g.chunks(m * n).enumerate() {
                        decode_index(bi, &batch_c, &mut idx);
                        let ao = batch_offset(&idx, &pa_c, m * k);
                        let bo = batch_offset(&idx, &pb_c, k * n);
                        // dB = Aᵀ · G, contraction over m
                        mm_tn_acc(&va[ao..ao + m * k], gchunk, &mut db[bo..bo + k * n], k, m, n);
                    }
                });
            }
        }),
    ))
}

fn decode_index(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for i in (0..dims.len()).rev() {
        out[i] = flat % dims[i];
        flat /= dims[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::{mul_scalar, sum_all};

    #[test]
    fn identity_times_matrix() {
        let i2 = Tensor::from_vec(vec![1.0f64, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let m = Tensor::from_vec(vec![3.0f64, -1.0, 7.5, 2.0], &[2, 2]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap().to_vec(), m.to_vec());
    }

    #[test]
    fn hand_computed_product() {
        let a = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::from_vec(vec![5.0f64, 6.0], &[2, 1]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().to_vec(), vec![17.0, 39.0]);
    }

    #[test]
    fn grad_of_sum_is_transpose_broadcast() {
        // loss = sum(a·b) => da = ones·bᵀ, i.e. row sums of b per column.
        let a = Tensor::param(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::from_vec(vec![5.0f64, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        sum_all(&matmul(&a, &b).unwrap()).backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
    }

    #[test]
    fn inner_extent_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn batched_with_broadcast_from_one() {
        // a: [2,1,2] broadcast against b: [2,2,1] over batch dim 0? Here the
        // batch ranks differ: a [2, M=1, K=2] batched 2, b [K=2, N=1] unbatched.
        let a = Tensor::param(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 1, 2]).unwrap();
        let b = Tensor::param(vec![10.0f64, 100.0], &[2, 1]).unwrap();
        let y = matmul(&a, &b).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.to_vec(), vec![210.0, 430.0]);
        sum_all(&mul_scalar(&y, 1.0)).backward().unwrap();
        // b used by both batch items: grads sum over the broadcast dim.
        assert_eq!(b.grad().unwrap(), vec![1.0 + 3.0, 2.0 + 4.0]);
        assert_eq!(a.grad().unwrap(), vec![10.0, 100.0, 10.0, 100.0]);
    }
}
