//! Elementwise and data-movement ops.

use super::shape::{contiguous_strides, unravel};
use super::{c, Scalar, Tensor};
use crate::error::{Result, SwtrError};
use rayon::prelude::*;
use std::rc::Rc;

/// Below this many elements the sequential path avoids rayon overhead.
/// (Elementwise maps are order-free, so the threshold cannot change results.)
const PAR_MIN: usize = 1 << 14;

fn map2<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T + Sync) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    if a.len() >= PAR_MIN {
        out.par_iter_mut()
            .zip(a.par_iter().zip(b.par_iter()))
            .for_each(|(o, (x, y))| *o = f(*x, *y));
    } else {
        for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b.iter())) {
            *o = f(*x, *y);
        }
    }
    out
}

fn map1<T: Scalar>(a: &[T], f: impl Fn(T) -> T + Sync) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    if a.len() >= PAR_MIN {
        out.par_iter_mut().zip(a.par_iter()).for_each(|(o, x)| *o = f(*x));
    } else {
        for (o, x) in out.iter_mut().zip(a.iter()) {
            *o = f(*x);
        }
    }
    out
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SwtrError::DimMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, rhs)?;
        let out = map2(&self.data(), &rhs.data(), |x, y| x + y);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, rhs)?;
        let out = map2(&self.data(), &rhs.data(), |x, y| x - y);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g| {
                vec![
                    Some(g.to_vec()),
                    Some(g.iter().map(|v| -*v).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, rhs)?;
        let out = map2(&self.data(), &rhs.data(), |x, y| x * y);
        let a = self.clone();
        let b = rhs.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let av = a.data();
                let bv = b.data();
                vec![
                    Some(map2(g, &bv, |gv, y| gv * y)),
                    Some(map2(g, &av, |gv, x| gv * x)),
                ]
            }),
        ))
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", self, rhs)?;
        let out = map2(&self.data(), &rhs.data(), |x, y| x / y);
        let a = self.clone();
        let b = rhs.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let av = a.data();
                let bv = b.data();
                let ga = g
                    .iter()
                    .zip(bv.iter())
                    .map(|(gv, y)| *gv / *y)
                    .collect::<Vec<_>>();
                let gb = g
                    .iter()
                    .zip(av.iter().zip(bv.iter()))
                    .map(|(gv, (x, y))| -*gv * *x / (*y * *y))
                    .collect::<Vec<_>>();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn neg(&self) -> Tensor<T> {
        let out = map1(&self.data(), |x| -x);
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.iter().map(|v| -*v).collect())]),
        )
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        let out = map1(&self.data(), |x| x + s);
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    pub fn mul_scalar(&self, s: T) -> Tensor<T> {
        let out = map1(&self.data(), |x| x * s);
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|v| *v * s).collect())]),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        let out = map1(&self.data(), |x| x.exp());
        let y = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().zip(&y).map(|(gv, yv)| *gv * *yv).collect())]),
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        let out = map1(&self.data(), |x| x.ln());
        let a = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let av = a.data();
                vec![Some(g.iter().zip(av.iter()).map(|(gv, x)| *gv / *x).collect())]
            }),
        )
    }

    pub fn sqrt_elem(&self) -> Tensor<T> {
        let out = map1(&self.data(), |x| x.sqrt());
        let y = out.clone();
        let half = c::<T>(0.5);
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                vec![Some(
                    g.iter().zip(&y).map(|(gv, yv)| *gv * half / *yv).collect(),
                )]
            }),
        )
    }

    /// Clamp with zero gradient outside the open interval.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let out = map1(&self.data(), |x| x.max(lo).min(hi));
        let a = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let av = a.data();
                vec![Some(
                    g.iter()
                        .zip(av.iter())
                        .map(|(gv, x)| if *x > lo && *x < hi { *gv } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    // ── Shape movement ──────────────────────────────────────────────

    /// Zero-copy reshape (row-major layouts agree).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(SwtrError::BadShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("cannot view {:?} ({} elements)", self.shape(), self.numel()),
            });
        }
        Ok(Tensor::view_op(
            shape.to_vec(),
            self,
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Materialized axis permutation.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(SwtrError::BadShape {
                op: "permute",
                shape: self.shape().to_vec(),
                reason: format!("invalid permutation {perm:?}"),
            });
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let out = permute_copy(&self.data(), &in_shape, perm);
        // Inverse permutation for the backward gather.
        let mut inv = vec![0usize; rank];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let out_shape_b = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| vec![Some(permute_copy(g, &out_shape_b, &inv))]),
        ))
    }

    /// Expand axes of size 1 (and/or prepend leading axes) to `shape`.
    /// Backward sums over the expanded axes in fixed input order.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let src = self.shape().to_vec();
        if shape.len() < src.len() {
            return Err(SwtrError::DimMismatch {
                op: "broadcast_to",
                lhs: src,
                rhs: shape.to_vec(),
            });
        }
        let offset = shape.len() - src.len();
        for (i, &s) in src.iter().enumerate() {
            if s != shape[offset + i] && s != 1 {
                return Err(SwtrError::DimMismatch {
                    op: "broadcast_to",
                    lhs: src.clone(),
                    rhs: shape.to_vec(),
                });
            }
        }
        let out_shape = shape.to_vec();
        let n: usize = out_shape.iter().product();
        let src_strides = contiguous_strides(&src);
        let src_b = src.clone();
        let out_shape_c = out_shape.clone();
        let gather_idx = move |lin: usize| -> usize {
            let mut rem = lin;
            let mut idx = 0usize;
            for d in (0..out_shape_c.len()).rev() {
                let coord = rem % out_shape_c[d];
                rem /= out_shape_c[d];
                if d >= offset {
                    let sd = d - offset;
                    if src_b[sd] != 1 {
                        idx += coord * src_strides[sd];
                    }
                }
            }
            idx
        };
        let guard = self.data();
        let data: &[T] = &guard;
        let mut out = vec![T::zero(); n];
        if n >= PAR_MIN {
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = data[gather_idx(i)]);
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = data[gather_idx(i)];
            }
        }
        drop(guard);
        let src_numel = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                // Sequential scatter-sum keeps accumulation order fixed.
                let mut gi = vec![T::zero(); src_numel];
                for (i, gv) in g.iter().enumerate() {
                    let idx = gather_idx(i);
                    gi[idx] = gi[idx] + *gv;
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Concatenate along `axis`. All other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| SwtrError::BadShape {
            op: "concat",
            shape: vec![],
            reason: "empty input list".into(),
        })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(SwtrError::BadShape {
                op: "concat",
                shape: first.shape().to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0usize;
        for p in parts {
            if p.rank() != rank
                || p.shape()
                    .iter()
                    .enumerate()
                    .any(|(d, &s)| d != axis && s != first.shape()[d])
            {
                return Err(SwtrError::DimMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            axis_total += p.shape()[axis];
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = axis_total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();

        let mut out = vec![T::zero(); out_shape.iter().product()];
        let mut offset = 0usize;
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            let pa = p.shape()[axis];
            let data = p.data();
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                let src = o * pa * inner;
                out[dst..dst + pa * inner].copy_from_slice(&data[src..src + pa * inner]);
            }
            spans.push((offset, pa));
            offset += pa;
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            parts.to_vec(),
            Box::new(move |g| {
                spans
                    .iter()
                    .map(|&(off, pa)| {
                        let mut pg = vec![T::zero(); outer * pa * inner];
                        for o in 0..outer {
                            let src = (o * axis_total + off) * inner;
                            let dst = o * pa * inner;
                            pg[dst..dst + pa * inner].copy_from_slice(&g[src..src + pa * inner]);
                        }
                        Some(pg)
                    })
                    .collect()
            }),
        ))
    }

    /// Re-index the middle axis of a `[batch, rows, width]` tensor through a
    /// row map. `None` rows read as zeros. `inv` must be the exact inverse
    /// partial map (the map is injective), so both directions are gathers.
    pub fn remap_rows(
        &self,
        map: &Rc<Vec<Option<usize>>>,
        inv: &Rc<Vec<Option<usize>>>,
    ) -> Result<Tensor<T>> {
        if self.rank() != 3 {
            return Err(SwtrError::BadShape {
                op: "remap_rows",
                shape: self.shape().to_vec(),
                reason: "expected [batch, rows, width]".into(),
            });
        }
        let (b, n, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        if inv.len() != n {
            return Err(SwtrError::BadShape {
                op: "remap_rows",
                shape: self.shape().to_vec(),
                reason: format!("inverse map covers {} rows, tensor has {n}", inv.len()),
            });
        }
        let m = map.len();
        let guard = self.data();
        let data: &[T] = &guard;
        let map_s: &[Option<usize>] = map;
        let mut out = vec![T::zero(); b * m * w];
        let do_batch = |out_b: &mut [T], src_b: &[T]| {
            for (r, mr) in map_s.iter().enumerate() {
                if let Some(src_row) = mr {
                    out_b[r * w..(r + 1) * w].copy_from_slice(&src_b[src_row * w..(src_row + 1) * w]);
                }
            }
        };
        if b > 1 && b * m * w >= PAR_MIN {
            out.par_chunks_mut(m * w)
                .zip(data.par_chunks(n * w))
                .for_each(|(ob, sb)| do_batch(ob, sb));
        } else {
            for (ob, sb) in out.chunks_mut(m * w).zip(data.chunks(n * w)) {
                do_batch(ob, sb);
            }
        }
        drop(guard);
        let inv = Rc::clone(inv);
        Ok(Tensor::from_op(
            vec![b, m, w],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![T::zero(); b * n * w];
                for (gb, ob) in gi.chunks_mut(n * w).zip(g.chunks(m * w)) {
                    for (r, ir) in inv.iter().enumerate() {
                        if let Some(out_row) = ir {
                            gb[r * w..(r + 1) * w]
                                .copy_from_slice(&ob[out_row * w..(out_row + 1) * w]);
                        }
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Gather arbitrary elements of a flat table: `out[i] = self[idx[i]]`.
    /// Backward scatter-adds sequentially (the map may repeat indices).
    pub fn gather_elems(&self, idx: &Rc<Vec<u32>>, out_shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = out_shape.iter().product();
        if n != idx.len() {
            return Err(SwtrError::BadShape {
                op: "gather_elems",
                shape: out_shape.to_vec(),
                reason: format!("index list has {} entries", idx.len()),
            });
        }
        let numel = self.numel();
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= numel) {
            return Err(SwtrError::BadShape {
                op: "gather_elems",
                shape: self.shape().to_vec(),
                reason: format!("index {bad} out of bounds"),
            });
        }
        let data = self.data();
        let out: Vec<T> = idx.iter().map(|&i| data[i as usize]).collect();
        drop(data);
        let idx_b = Rc::clone(idx);
        Ok(Tensor::from_op(
            out_shape.to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![T::zero(); numel];
                for (&i, gv) in idx_b.iter().zip(g) {
                    gi[i as usize] = gi[i as usize] + *gv;
                }
                vec![Some(gi)]
            }),
        ))
    }
}

fn permute_copy<T: Scalar>(data: &[T], in_shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = contiguous_strides(in_shape);
    let out_strides_src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = vec![T::zero(); n];
    let fill = |chunk: &mut [T], start: usize| {
        let mut coords = vec![0usize; rank];
        for (k, o) in chunk.iter_mut().enumerate() {
            unravel(start + k, &out_shape, &mut coords);
            let src: usize = coords
                .iter()
                .zip(&out_strides_src)
                .map(|(c, s)| c * s)
                .sum();
            *o = data[src];
        }
    };
    if n >= PAR_MIN {
        let chunk = 1 << 12;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(ci, c)| fill(c, ci * chunk));
    } else {
        fill(&mut out, 0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_shape_error_names_both() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3, 2]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"));
    }

    #[test]
    fn permute_roundtrip() {
        let a = Tensor::<f32>::from_vec(&[2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let t = a.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = t.permute(&[1, 0]).unwrap();
        assert_eq!(back.to_vec(), a.to_vec());
    }

    #[test]
    fn broadcast_and_reduce_grad() {
        let a = Tensor::<f64>::param(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = a.broadcast_to(&[4, 3]).unwrap();
        assert_eq!(b.shape(), &[4, 3]);
        let loss = b.sum_all();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![4.0, 4.0, 4.0]);
    }

    #[test]
    fn concat_splits_grad() {
        let a = Tensor::<f64>::param(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let cat = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(cat.shape(), &[2, 3]);
        assert_eq!(cat.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        cat.mul_scalar(2.0).sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0; 4]);
    }

    #[test]
    fn remap_rows_gathers_and_zero_fills() {
        let x = Tensor::<f64>::param(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let map = Rc::new(vec![Some(1), None, Some(0)]);
        let inv = Rc::new(vec![Some(2), Some(0)]);
        let y = x.remap_rows(&map, &inv).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.to_vec(), vec![3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }
}
