//! Activation, normalization, and classification-head ops.

use super::{c, Scalar, Tensor};
use crate::error::{Result, SwtrError};
use rayon::prelude::*;
use std::rc::Rc;

const PAR_MIN: usize = 1 << 14;

/// GELU tanh approximation:
/// 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let k = c::<T>(0.797_884_560_802_865_4); // √(2/π)
    let a = c::<T>(0.044715);
    let half = c::<T>(0.5);
    let inner = k * (x + a * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = c::<T>(0.797_884_560_802_865_4);
    let a = c::<T>(0.044715);
    let half = c::<T>(0.5);
    let three = c::<T>(3.0);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * k * (T::one() + three * a * x * x)
}

/// Run `f` on every (outer, inner) lane along `axis`.
/// Lanes are disjoint, so parallelism is safe and order-free.
fn for_each_lane<T: Scalar>(
    shape: &[usize],
    axis: usize,
    input: &[T],
    output: &mut [T],
    f: impl Fn(LaneRef<'_, T>, &mut [T]) + Sync,
) {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let lanes = outer * inner;
    let run = |lane: usize, buf: &mut [T]| {
        let o = lane / inner;
        let i = lane % inner;
        let base = o * axis_len * inner + i;
        let src = LaneRef {
            data: input,
            base,
            stride: inner,
            len: axis_len,
        };
        f(src, buf);
        // write back
        // (buf holds the lane values contiguously)
    };
    if input.len() >= PAR_MIN && lanes > 1 {
        let results: Vec<Vec<T>> = (0..lanes)
            .into_par_iter()
            .map(|lane| {
                let mut buf = vec![T::zero(); axis_len];
                run(lane, &mut buf);
                buf
            })
            .collect();
        for (lane, buf) in results.iter().enumerate() {
            let o = lane / inner;
            let i = lane % inner;
            let base = o * axis_len * inner + i;
            for (j, &v) in buf.iter().enumerate() {
                output[base + j * inner] = v;
            }
        }
    } else {
        let mut buf = vec![T::zero(); axis_len];
        for lane in 0..lanes {
            run(lane, &mut buf);
            let o = lane / inner;
            let i = lane % inner;
            let base = o * axis_len * inner + i;
            for (j, &v) in buf.iter().enumerate() {
                output[base + j * inner] = v;
            }
        }
    }
}

struct LaneRef<'a, T> {
    data: &'a [T],
    base: usize,
    stride: usize,
    len: usize,
}

impl<T: Copy> LaneRef<'_, T> {
    fn get(&self, j: usize) -> T {
        self.data[self.base + j * self.stride]
    }
    fn len(&self) -> usize {
        self.len
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn relu(&self) -> Tensor<T> {
        let data = self.data();
        let out: Vec<T> = data.iter().map(|&x| x.max(T::zero())).collect();
        drop(data);
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
                        .map(|(gv, x)| if *x > T::zero() { *gv } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    pub fn gelu(&self) -> Tensor<T> {
        let data = self.data();
        let out: Vec<T> = if data.len() >= PAR_MIN {
            data.par_iter().map(|&x| gelu_scalar(x)).collect()
        } else {
            data.iter().map(|&x| gelu_scalar(x)).collect()
        };
        drop(data);
        let a = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let av = a.data();
                let gi: Vec<T> = if g.len() >= PAR_MIN {
                    g.par_iter()
                        .zip(av.par_iter())
                        .map(|(gv, x)| *gv * gelu_grad(*x))
                        .collect()
                } else {
                    g.iter()
                        .zip(av.iter())
                        .map(|(gv, x)| *gv * gelu_grad(*x))
                        .collect()
                };
                vec![Some(gi)]
            }),
        )
    }

    /// Max-subtracted softmax along `axis`. Outputs are in (0, 1] and each
    /// lane sums to 1 up to rounding.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        self.check_axis("softmax", axis)?;
        let shape = self.shape().to_vec();
        let mut out = vec![T::zero(); self.numel()];
        {
            let data = self.data();
            for_each_lane(&shape, axis, &data, &mut out, |lane, buf| {
                let mut mx = lane.get(0);
                for j in 1..lane.len() {
                    mx = mx.max(lane.get(j));
                }
                let mut denom = T::zero();
                for j in 0..lane.len() {
                    let e = (lane.get(j) - mx).exp();
                    buf[j] = e;
                    denom = denom + e;
                }
                for v in buf.iter_mut() {
                    *v = *v / denom;
                }
            });
        }
        let yv = Rc::new(out.clone());
        let shape_b = shape.clone();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let yv_s: &[T] = &yv;
                let mut gi = vec![T::zero(); g.len()];
                for_each_lane(&shape_b, axis, g, &mut gi, |lane, buf| {
                    // dot = Σ dy·y over the lane (ascending), dx = y(dy − dot)
                    let mut dot = T::zero();
                    for j in 0..lane.len() {
                        dot = dot + lane.get(j) * yv_s[lane.base + j * lane.stride];
                    }
                    for (j, b) in buf.iter_mut().enumerate() {
                        let yj = yv_s[lane.base + j * lane.stride];
                        *b = yj * (lane.get(j) - dot);
                    }
                });
                vec![Some(gi)]
            }),
        ))
    }

    /// Numerically stabilized log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        self.check_axis("log_softmax", axis)?;
        let shape = self.shape().to_vec();
        let mut out = vec![T::zero(); self.numel()];
        {
            let data = self.data();
            for_each_lane(&shape, axis, &data, &mut out, |lane, buf| {
                let mut mx = lane.get(0);
                for j in 1..lane.len() {
                    mx = mx.max(lane.get(j));
                }
                let mut denom = T::zero();
                for j in 0..lane.len() {
                    denom = denom + (lane.get(j) - mx).exp();
                }
                let lse = mx + denom.ln();
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = lane.get(j) - lse;
                }
            });
        }
        let yv = Rc::new(out.clone());
        let shape_b = shape.clone();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let yv_s: &[T] = &yv;
                let mut gi = vec![T::zero(); g.len()];
                for_each_lane(&shape_b, axis, g, &mut gi, |lane, buf| {
                    let mut gsum = T::zero();
                    for j in 0..lane.len() {
                        gsum = gsum + lane.get(j);
                    }
                    for (j, b) in buf.iter_mut().enumerate() {
                        let yj = yv_s[lane.base + j * lane.stride];
                        *b = lane.get(j) - yj.exp() * gsum;
                    }
                });
                vec![Some(gi)]
            }),
        ))
    }

    /// Layer normalization over the last axis with affine parameters.
    /// Population variance plus `eps` under the square root.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let rank = self.rank();
        if rank == 0 {
            return Err(SwtrError::BadShape {
                op: "layer_norm",
                shape: vec![],
                reason: "rank-0 input".into(),
            });
        }
        let d = self.shape()[rank - 1];
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(SwtrError::DimMismatch {
                op: "layer_norm",
                lhs: vec![d],
                rhs: gamma.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(SwtrError::Config("layer_norm eps must be > 0".into()));
        }
        let rows = self.numel() / d;
        let mut out = vec![T::zero(); self.numel()];
        let mut xhat = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); rows];
        {
            let xg = self.data();
            let gmg = gamma.data();
            let btg = beta.data();
            let x: &[T] = &xg;
            let gm: &[T] = &gmg;
            let bt: &[T] = &btg;
            let epsv = c::<T>(eps);
            let dn = c::<T>(1.0 / d as f64);
            let body = |r: usize, orow: &mut [T], hrow: &mut [T], is: &mut T| {
                let xrow = &x[r * d..(r + 1) * d];
                let mut mean = T::zero();
                for &v in xrow {
                    mean = mean + v;
                }
                mean = mean * dn;
                let mut var = T::zero();
                for &v in xrow {
                    let dm = v - mean;
                    var = var + dm * dm;
                }
                var = var * dn;
                let istd = T::one() / (var + epsv).sqrt();
                *is = istd;
                for (j, (&v, (o, h))) in xrow
                    .iter()
                    .zip(orow.iter_mut().zip(hrow.iter_mut()))
                    .enumerate()
                {
                    let hv = (v - mean) * istd;
                    *h = hv;
                    *o = gm[j] * hv + bt[j];
                }
            };
            if self.numel() >= PAR_MIN && rows > 1 {
                out.par_chunks_mut(d)
                    .zip(xhat.par_chunks_mut(d).zip(inv_std.par_iter_mut()))
                    .enumerate()
                    .for_each(|(r, (orow, (hrow, is)))| body(r, orow, hrow, is));
            } else {
                for (r, (orow, (hrow, is))) in out
                    .chunks_mut(d)
                    .zip(xhat.chunks_mut(d).zip(inv_std.iter_mut()))
                    .enumerate()
                {
                    body(r, orow, hrow, is);
                }
            }
        }
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let gamma_c = gamma.clone();
        let shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let gmg = gamma_c.data();
                let gm: &[T] = &gmg;
                let xhat_s: &[T] = &xhat;
                let inv_std_s: &[T] = &inv_std;
                let dn = c::<T>(1.0 / d as f64);
                let mut gx = vec![T::zero(); g.len()];
                // dgamma/dbeta: per-column sums, rows ascending.
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for r in 0..rows {
                    let grow = &g[r * d..(r + 1) * d];
                    let hrow = &xhat_s[r * d..(r + 1) * d];
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + grow[j] * hrow[j];
                        dbeta[j] = dbeta[j] + grow[j];
                    }
                }
                let body = |r: usize, gxrow: &mut [T]| {
                    let grow = &g[r * d..(r + 1) * d];
                    let hrow = &xhat_s[r * d..(r + 1) * d];
                    let istd = inv_std_s[r];
                    // dxhat = dy·gamma; dx = istd·(dxhat − mean(dxhat) − xhat·mean(dxhat·xhat))
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        let dh = grow[j] * gm[j];
                        m1 = m1 + dh;
                        m2 = m2 + dh * hrow[j];
                    }
                    m1 = m1 * dn;
                    m2 = m2 * dn;
                    for (j, gx) in gxrow.iter_mut().enumerate() {
                        let dh = grow[j] * gm[j];
                        *gx = istd * (dh - m1 - hrow[j] * m2);
                    }
                };
                if g.len() >= PAR_MIN && rows > 1 {
                    gx.par_chunks_mut(d).enumerate().for_each(|(r, gxrow)| body(r, gxrow));
                } else {
                    for (r, gxrow) in gx.chunks_mut(d).enumerate() {
                        body(r, gxrow);
                    }
                }
                vec![Some(gx), Some(dgamma), Some(dbeta)]
            }),
        ))
    }

    /// Mean negative log-likelihood of `labels` under log-probabilities laid
    /// out `[batch, classes, spatial..]`. Labels index the class axis.
    pub fn nll_from_log_probs(&self, labels: &Rc<Vec<u8>>) -> Result<Tensor<T>> {
        if self.rank() < 2 {
            return Err(SwtrError::BadShape {
                op: "nll_from_log_probs",
                shape: self.shape().to_vec(),
                reason: "expected [batch, classes, ..]".into(),
            });
        }
        let b = self.shape()[0];
        let classes = self.shape()[1];
        let spatial: usize = self.shape()[2..].iter().product();
        if labels.len() != b * spatial {
            return Err(SwtrError::BadShape {
                op: "nll_from_log_probs",
                shape: self.shape().to_vec(),
                reason: format!("{} labels for {} positions", labels.len(), b * spatial),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= classes) {
            return Err(SwtrError::BadShape {
                op: "nll_from_log_probs",
                shape: self.shape().to_vec(),
                reason: format!("label {bad} out of range for {classes} classes"),
            });
        }
        let n = b * spatial;
        let mut total = T::zero();
        {
            let lp = self.data();
            for (pos, &lab) in labels.iter().enumerate() {
                let bi = pos / spatial;
                let sp = pos % spatial;
                total = total - lp[bi * classes * spatial + (lab as usize) * spatial + sp];
            }
        }
        let mean = total * c::<T>(1.0 / n as f64);
        let labels_b = Rc::clone(labels);
        let numel = self.numel();
        Ok(Tensor::from_op(
            vec![],
            vec![mean],
            vec![self.clone()],
            Box::new(move |g| {
                let scale = g[0] * c::<T>(1.0 / n as f64);
                let mut gi = vec![T::zero(); numel];
                for (pos, &lab) in labels_b.iter().enumerate() {
                    let bi = pos / spatial;
                    let sp = pos % spatial;
                    gi[bi * classes * spatial + (lab as usize) * spatial + sp] = -scale;
                }
                vec![Some(gi)]
            }),
        ))
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(SwtrError::BadShape {
                op,
                shape: self.shape().to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry_and_stability() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let hot = Tensor::<f64>::from_vec(&[2], vec![1000.0, 0.0]).unwrap();
        let y = hot.softmax(0).unwrap().to_vec();
        assert!(y[0] > 1.0 - 1e-9 && y[1] < 1e-9);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::stream(1, &[1]);
        let x = Tensor::<f64>::randn(&[5, 7], 3.0, &mut rng);
        let y = x.softmax(1).unwrap();
        let v = y.to_vec();
        for r in 0..5 {
            let s: f64 = v[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(v[r * 7..(r + 1) * 7].iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::<f64>::from_vec(&[1, 4], vec![5.0; 4]).unwrap();
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        for v in y.to_vec() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        // x=[1,3]: mean 2, centered ±1; eps→0 gives [-1, 1]
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 3.0]).unwrap();
        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        let y = x.layer_norm(&g, &b, 1e-12).unwrap().to_vec();
        assert!((y[0] + 1.0).abs() < 1e-5 && (y[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gelu_points() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        let x = Tensor::<f64>::from_vec(&[2], vec![-5.0, 5.0]).unwrap();
        let y = x.relu().to_vec();
        assert_eq!(y, vec![0.0, 5.0]);
    }

    #[test]
    fn log_softmax_uniform_is_ln_classes() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2]);
        let lp = x.log_softmax(1).unwrap();
        let labels = Rc::new(vec![0u8, 1]);
        let loss = lp.nll_from_log_probs(&labels).unwrap();
        assert!((loss.item().unwrap() - 3.0f64.ln()).abs() < 1e-12);
    }
}
