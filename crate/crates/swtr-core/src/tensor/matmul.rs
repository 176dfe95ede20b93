//! Batched matrix multiplication.
//!
//! Contractions always run k-ascending per output element; parallelism is
//! over output rows (disjoint), so results do not depend on thread count.

use super::shape::{broadcast_batch, broadcast_src_index};
use super::{Scalar, Tensor};
use crate::error::{Result, SwtrError};
use rayon::prelude::*;

const PAR_FLOPS: usize = 1 << 15;

/// c[m,n] += a[m,k] · b[k,n]
pub(crate) fn mm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let body = |i: usize, crow: &mut [T]| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if 2 * m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| body(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            body(i, crow);
        }
    }
}

/// c[m,n] += a[m,k] · b[n,k]ᵀ (dot products of rows)
pub(crate) fn mm_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let body = |i: usize, crow: &mut [T]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s = s + x * y;
            }
            *cv = *cv + s;
        }
    };
    if 2 * m * k * n >= PAR_FLOPS && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| body(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            body(i, crow);
        }
    }
}

/// c[k,n] += a[m,k]ᵀ · b[m,n]
pub(crate) fn mm_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let body = |p: usize, crow: &mut [T]| {
        for i in 0..m {
            let av = a[i * k + p];
            let brow = &b[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if 2 * m * k * n >= PAR_FLOPS && k > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(p, crow)| body(p, crow));
    } else {
        for (p, crow) in c.chunks_mut(n).enumerate() {
            body(p, crow);
        }
    }
}

enum TransB {
    No,
    Yes,
}

fn batched_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_b: TransB) -> Result<Tensor<T>> {
    let (op, an, bn): (&'static str, _, _) = match trans_b {
        TransB::No => ("matmul", a.rank(), b.rank()),
        TransB::Yes => ("matmul_transb", a.rank(), b.rank()),
    };
    if an < 2 || bn < 2 {
        return Err(SwtrError::DimMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, ka) = (a.shape()[an - 2], a.shape()[an - 1]);
    let (kb, n) = match trans_b {
        TransB::No => (b.shape()[bn - 2], b.shape()[bn - 1]),
        TransB::Yes => (b.shape()[bn - 1], b.shape()[bn - 2]),
    };
    if ka != kb {
        return Err(SwtrError::DimMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let batch = broadcast_batch(a.shape(), b.shape(), 2).ok_or_else(|| SwtrError::DimMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let nbatch: usize = batch.iter().product();
    let a_batch: Vec<usize> = a.shape()[..an - 2].to_vec();
    let b_batch: Vec<usize> = b.shape()[..bn - 2].to_vec();
    let k = ka;

    let mut out_shape = batch.clone();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = vec![T::zero(); nbatch * m * n];

    {
        let ag = a.data();
        let bg = b.data();
        let ad: &[T] = &ag;
        let bd: &[T] = &bg;
        let run = |bi: usize, cslab: &mut [T]| {
            let ai = broadcast_src_index(bi, &batch, &a_batch);
            let bj = broadcast_src_index(bi, &batch, &b_batch);
            let aslab = &ad[ai * m * k..(ai + 1) * m * k];
            let bslab = match trans_b {
                TransB::No => &bd[bj * k * n..(bj + 1) * k * n],
                TransB::Yes => &bd[bj * n * k..(bj + 1) * n * k],
            };
            match trans_b {
                TransB::No => mm_acc(aslab, bslab, cslab, m, k, n),
                TransB::Yes => mm_nt_acc(aslab, bslab, cslab, m, k, n),
            }
        };
        if nbatch > 1 {
            out.par_chunks_mut(m * n).enumerate().for_each(|(bi, c)| run(bi, c));
        } else {
            run(0, &mut out);
        }
    }

    let ac = a.clone();
    let bc = b.clone();
    let a_numel = a.numel();
    let b_numel = b.numel();
    let nt = matches!(trans_b, TransB::Yes);
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ad = ac.data();
            let bd = bc.data();
            let mut ga = vec![T::zero(); a_numel];
            let mut gb = vec![T::zero(); b_numel];
            // Sequential over batches: broadcast operands accumulate across
            // batch indices, so order must stay fixed.
            for bi in 0..nbatch {
                let ai = broadcast_src_index(bi, &batch, &a_batch);
                let bj = broadcast_src_index(bi, &batch, &b_batch);
                let gslab = &g[bi * m * n..(bi + 1) * m * n];
                let aslab = &ad[ai * m * k..(ai + 1) * m * k];
                let ga_slab = &mut ga[ai * m * k..(ai + 1) * m * k];
                if nt {
                    let bslab = &bd[bj * n * k..(bj + 1) * n * k];
                    let gb_slab = &mut gb[bj * n * k..(bj + 1) * n * k];
                    // dA += dC · B ; dB += dCᵀ · A
                    mm_acc(gslab, bslab, ga_slab, m, n, k);
                    mm_tn_acc(gslab, aslab, gb_slab, m, n, k);
                } else {
                    let bslab = &bd[bj * k * n..(bj + 1) * k * n];
                    let gb_slab = &mut gb[bj * k * n..(bj + 1) * k * n];
                    // dA += dC · Bᵀ ; dB += Aᵀ · dC
                    mm_nt_acc(gslab, bslab, ga_slab, m, n, k);
                    mm_tn_acc(aslab, gslab, gb_slab, m, k, n);
                }
            }
            vec![Some(ga), Some(gb)]
        }),
    ))
}

impl<T: Scalar> Tensor<T> {
    /// `[.., m, k] · [.., k, n] -> [.., m, n]`, leading dims broadcastable.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        batched_matmul(self, rhs, TransB::No)
    }

    /// `[.., m, k] · [.., n, k]ᵀ -> [.., m, n]` without materializing the
    /// transpose (attention score path).
    pub fn matmul_transb(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        batched_matmul(self, rhs, TransB::Yes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn identity_times_identity() {
        let i2 = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let r = i2.matmul(&i2).unwrap();
        assert_eq!(r.to_vec(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_times_identity_is_exact() {
        let a = t(&[2, 2], vec![1.25, -3.5, 0.0625, 7.0]);
        let i2 = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&i2).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn hand_contraction() {
        // [[1,2],[3,4]] · [[1],[1]] = [[3],[7]]
        let a = t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], vec![1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn grad_of_sum_is_ones_times_transpose() {
        // loss = sum(a·b) -> dA = 1 · bᵀ
        let a = Tensor::<f64>::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = t(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        a.matmul(&b).unwrap().sum_all().backward().unwrap();
        // ones(2,2)·bᵀ: each row = [5+6, 7+8]
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"));
    }

    #[test]
    fn batched_broadcast_rhs() {
        // a: [2,1,2] (two batches), b: [2,3] shared
        let a = t(&[2, 1, 2], vec![1.0, 0.0, 0.0, 2.0]);
        let b = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = a.matmul(&b).unwrap();
        assert_eq!(r.shape(), &[2, 1, 3]);
        assert_eq!(r.to_vec(), vec![1.0, 2.0, 3.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn transb_matches_explicit_transpose() {
        let a = t(&[3, 4], (0..12).map(|x| x as f64 * 0.5).collect());
        let b = t(&[2, 4], (0..8).map(|x| (x as f64).sin()).collect());
        let r1 = a.matmul_transb(&b).unwrap();
        let bt = b.permute(&[1, 0]).unwrap();
        let r2 = a.matmul(&bt).unwrap();
        assert_eq!(r1.to_vec(), r2.to_vec());
    }
}
