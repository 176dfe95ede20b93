//! 2D image ops: cross-correlation conv, max pooling, bilinear upsampling.

use super::matmul::{mm_acc, mm_nt_acc, mm_tn_acc};
use super::{c, Scalar, Tensor};
use crate::error::{Result, SwtrError};
use rayon::prelude::*;
use std::rc::Rc;

fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// im2col for one batch element: out[(c·kh·kw), (oh·ow)].
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let mut row = 0usize;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for v in &mut dst[oy * ow..(oy + 1) * ow] {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        dst[oy * ow + ox] = if ix < 0 || ix >= w as isize {
                            T::zero()
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

/// Scatter column gradients back onto the input plane stack.
fn col2im<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    gx: &mut [T],
) {
    let mut row = 0usize;
    for ci in 0..cin {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let p = iy as usize * w + ix as usize;
                        plane[p] = plane[p] + src[oy * ow + ox];
                    }
                }
                row += 1;
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// 2D cross-correlation. `self: [b, cin, h, w]`, `kernel: [cout, cin, kh, kw]`,
    /// optional `bias: [cout]`. Symmetric zero padding.
    pub fn conv2d(
        &self,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        if self.rank() != 4 || kernel.rank() != 4 || self.shape()[1] != kernel.shape()[1] {
            return Err(SwtrError::DimMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(SwtrError::Config("conv2d stride must be >= 1".into()));
        }
        let (b, cin, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (cout, _, kh, kw) = (
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        );
        let (oh, ow) = match (
            conv_out_extent(h, kh, stride, pad),
            conv_out_extent(w, kw, stride, pad),
        ) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => {
                return Err(SwtrError::BadShape {
                    op: "conv2d",
                    shape: self.shape().to_vec(),
                    reason: format!("non-positive output extent for kernel {kh}x{kw} stride {stride} pad {pad}"),
                })
            }
        };
        if let Some(bt) = bias {
            if bt.shape() != [cout] {
                return Err(SwtrError::DimMismatch {
                    op: "conv2d",
                    lhs: vec![cout],
                    rhs: bt.shape().to_vec(),
                });
            }
        }
        let krows = cin * kh * kw;
        let mut out = vec![T::zero(); b * cout * oh * ow];
        {
            let xg = self.data();
            let kg = kernel.data();
            let x: &[T] = &xg;
            let kd: &[T] = &kg;
            let bd = bias.map(|bt| bt.to_vec());
            let run = |bi: usize, out_b: &mut [T]| {
                let mut cols = vec![T::zero(); krows * oh * ow];
                im2col(
                    &x[bi * cin * h * w..(bi + 1) * cin * h * w],
                    cin,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                    &mut cols,
                );
                mm_acc(&kd, &cols, out_b, cout, krows, oh * ow);
                if let Some(bv) = &bd {
                    for (co, bias_v) in bv.iter().enumerate() {
                        for v in &mut out_b[co * oh * ow..(co + 1) * oh * ow] {
                            *v = *v + *bias_v;
                        }
                    }
                }
            };
            if b > 1 {
                out.par_chunks_mut(cout * oh * ow)
                    .enumerate()
                    .for_each(|(bi, ob)| run(bi, ob));
            } else {
                run(0, &mut out);
            }
        }

        let xc = self.clone();
        let kc = kernel.clone();
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), kernel.clone()];
        if let Some(bt) = bias {
            parents.push(bt.clone());
        }
        Ok(Tensor::from_op(
            vec![b, cout, oh, ow],
            out,
            parents,
            Box::new(move |g| {
                let xg = xc.data();
                let kg = kc.data();
                let x: &[T] = &xg;
                let kd: &[T] = &kg;
                let mut gk = vec![T::zero(); kd.len()];
                let mut gx = vec![T::zero(); x.len()];
                // dX per batch is disjoint -> parallel; dW accumulates over
                // batches -> sequential loop below.
                gx.par_chunks_mut(cin * h * w).enumerate().for_each(|(bi, gx_b)| {
                    let g_b = &g[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
                    let mut gcols = vec![T::zero(); krows * oh * ow];
                    mm_tn_acc(&kd, g_b, &mut gcols, cout, krows, oh * ow);
                    col2im(&gcols, cin, h, w, kh, kw, stride, pad, oh, ow, gx_b);
                });
                for bi in 0..b {
                    let g_b = &g[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
                    let mut cols = vec![T::zero(); krows * oh * ow];
                    im2col(
                        &x[bi * cin * h * w..(bi + 1) * cin * h * w],
                        cin,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        pad,
                        oh,
                        ow,
                        &mut cols,
                    );
                    mm_nt_acc(g_b, &cols, &mut gk, cout, oh * ow, krows);
                }
                let mut grads = vec![Some(gx), Some(gk)];
                if has_bias {
                    let mut gb = vec![T::zero(); cout];
                    for bi in 0..b {
                        for co in 0..cout {
                            let s = &g[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                            let mut acc = T::zero();
                            for &v in s {
                                acc = acc + v;
                            }
                            gb[co] = gb[co] + acc;
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }

    /// Max pooling with symmetric zero-ignoring padding (padded cells never
    /// win). Ties break toward the first candidate in scan order.
    pub fn maxpool2d(&self, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(SwtrError::BadShape {
                op: "maxpool2d",
                shape: self.shape().to_vec(),
                reason: "expected [b, c, h, w]".into(),
            });
        }
        let (b, cn, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (oh, ow) = match (
            conv_out_extent(h, k, stride, pad),
            conv_out_extent(w, k, stride, pad),
        ) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => {
                return Err(SwtrError::BadShape {
                    op: "maxpool2d",
                    shape: self.shape().to_vec(),
                    reason: "non-positive output extent".into(),
                })
            }
        };
        let planes = b * cn;
        let mut out = vec![T::zero(); planes * oh * ow];
        let mut argmax = vec![0u32; planes * oh * ow];
        {
            let xg = self.data();
            let x: &[T] = &xg;
            out.par_chunks_mut(oh * ow)
                .zip(argmax.par_chunks_mut(oh * ow))
                .enumerate()
                .for_each(|(p, (ob, ab))| {
                    let plane = &x[p * h * w..(p + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = T::neg_infinity();
                            let mut best_idx = 0u32;
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let v = plane[iy as usize * w + ix as usize];
                                    if v > best {
                                        best = v;
                                        best_idx = (iy as usize * w + ix as usize) as u32;
                                    }
                                }
                            }
                            ob[oy * ow + ox] = best;
                            ab[oy * ow + ox] = best_idx;
                        }
                    }
                });
        }
        let argmax = Rc::new(argmax);
        let in_numel = self.numel();
        Ok(Tensor::from_op(
            vec![b, cn, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let amax_s: &[u32] = &argmax;
                let mut gx = vec![T::zero(); in_numel];
                gx.par_chunks_mut(h * w).enumerate().for_each(|(p, gplane)| {
                    let gout = &g[p * oh * ow..(p + 1) * oh * ow];
                    let amax = &amax_s[p * oh * ow..(p + 1) * oh * ow];
                    for (gv, &ai) in gout.iter().zip(amax) {
                        gplane[ai as usize] = gplane[ai as usize] + *gv;
                    }
                });
                vec![Some(gx)]
            }),
        ))
    }

    /// Bilinear 2x upsampling with the align-corners=false convention:
    /// source coordinate = (dst + 0.5)/2 − 0.5, edges clamped.
    pub fn upsample2x(&self) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(SwtrError::BadShape {
                op: "upsample2x",
                shape: self.shape().to_vec(),
                reason: "expected [b, c, h, w]".into(),
            });
        }
        let (b, cn, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (oh, ow) = (h * 2, w * 2);
        // Per-axis taps: (lo index, hi index, hi weight). Same for y and x.
        let taps = |n: usize, o: usize| -> (usize, usize, f64) {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let lo = src.floor();
            let t = src - lo;
            let i0 = lo.max(0.0) as usize;
            let i1 = ((lo as isize + 1).clamp(0, n as isize - 1)) as usize;
            (i0.min(n - 1), i1, t)
        };
        let ytaps: Vec<(usize, usize, f64)> = (0..oh).map(|o| taps(h, o)).collect();
        let xtaps: Vec<(usize, usize, f64)> = (0..ow).map(|o| taps(w, o)).collect();
        let planes = b * cn;
        let mut out = vec![T::zero(); planes * oh * ow];
        {
            let xg = self.data();
            let x: &[T] = &xg;
            out.par_chunks_mut(oh * ow).enumerate().for_each(|(p, ob)| {
                let plane = &x[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, ty)) in ytaps.iter().enumerate() {
                    for (ox, &(x0, x1, tx)) in xtaps.iter().enumerate() {
                        let v00 = plane[y0 * w + x0].to_f64c();
                        let v01 = plane[y0 * w + x1].to_f64c();
                        let v10 = plane[y1 * w + x0].to_f64c();
                        let v11 = plane[y1 * w + x1].to_f64c();
                        let top = v00 * (1.0 - tx) + v01 * tx;
                        let bot = v10 * (1.0 - tx) + v11 * tx;
                        ob[oy * ow + ox] = c::<T>(top * (1.0 - ty) + bot * ty);
                    }
                }
            });
        }
        let ytaps = Rc::new(ytaps);
        let xtaps = Rc::new(xtaps);
        let in_numel = self.numel();
        Ok(Tensor::from_op(
            vec![b, cn, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let yt: &[(usize, usize, f64)] = &ytaps;
                let xt: &[(usize, usize, f64)] = &xtaps;
                let mut gx = vec![T::zero(); in_numel];
                gx.par_chunks_mut(h * w).enumerate().for_each(|(p, gplane)| {
                    let gout = &g[p * oh * ow..(p + 1) * oh * ow];
                    // Sequential scatter within the plane keeps order fixed.
                    for (oy, &(y0, y1, ty)) in yt.iter().enumerate() {
                        for (ox, &(x0, x1, tx)) in xt.iter().enumerate() {
                            let gv = gout[oy * ow + ox].to_f64c();
                            let add = |gp: &mut [T], idx: usize, wgt: f64| {
                                gp[idx] = gp[idx] + c::<T>(gv * wgt);
                            };
                            add(gplane, y0 * w + x0, (1.0 - ty) * (1.0 - tx));
                            add(gplane, y0 * w + x1, (1.0 - ty) * tx);
                            add(gplane, y1 * w + x0, ty * (1.0 - tx));
                            add(gplane, y1 * w + x1, ty * tx);
                        }
                    }
                });
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_kernel_is_channel_map() {
        // 1x1 kernel with weights [[2.0]] doubles the single channel.
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = x.conv2d(&k, None, 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn averaging_kernel_on_constant_keeps_interior_constant() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 5, 5], vec![3.0; 25]).unwrap();
        let k = Tensor::<f64>::from_vec(&[1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let y = x.conv2d(&k, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        let v = y.to_vec();
        // interior of same-padded output stays the same constant
        for iy in 1..4 {
            for ix in 1..4 {
                assert!((v[iy * 5 + ix] - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_degenerate_output() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        assert!(x.conv2d(&k, None, 1, 0).is_err());
    }

    #[test]
    fn maxpool_routes_gradient_to_max() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1.0, 5.0, 2.0, 3.0]).unwrap();
        let y = x.maxpool2d(2, 2, 0).unwrap();
        assert_eq!(y.to_vec(), vec![5.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_doubles_and_preserves_constant() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 3], vec![2.0; 6]).unwrap();
        let y = x.upsample2x().unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 6]);
        for v in y.to_vec() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_grad_mass_is_conserved() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.upsample2x().unwrap();
        y.sum_all().backward().unwrap();
        let g = x.grad().unwrap();
        let total: f64 = g.iter().sum();
        assert!((total - 16.0).abs() < 1e-9); // 4x as many output cells
    }
}
