//! Reductions. All sums walk the input in row-major order.

use super::shape::contiguous_strides;
use super::{c, Scalar, Tensor};
use crate::error::{Result, SwtrError};

impl<T: Scalar> Tensor<T> {
    /// Sum of all elements into a 0-d tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let mut s = T::zero();
        for &v in self.data().iter() {
            s = s + v;
        }
        let n = self.numel();
        Tensor::from_op(
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    /// Arithmetic mean of all elements.
    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().mul_scalar(c::<T>(1.0 / n as f64))
    }

    /// Sum over the given axes (removed from the output shape).
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut reduce = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(SwtrError::BadShape {
                    op: "sum_axes",
                    shape: self.shape().to_vec(),
                    reason: format!("axis {a} out of range"),
                });
            }
            reduce[a] = true;
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = in_shape
            .iter()
            .zip(&reduce)
            .filter(|(_, r)| !**r)
            .map(|(s, _)| *s)
            .collect();
        // Stride of each input axis in the output index space (0 if reduced).
        let out_strides_full = {
            let kept: Vec<usize> = in_shape
                .iter()
                .zip(&reduce)
                .map(|(s, r)| if *r { 1 } else { *s })
                .collect();
            let mut strides = contiguous_strides(&kept);
            for (st, r) in strides.iter_mut().zip(&reduce) {
                if *r {
                    *st = 0;
                }
            }
            strides
        };
        let out_numel: usize = out_shape.iter().product::<usize>().max(1);
        let mut out = vec![T::zero(); out_numel];
        {
            let data = self.data();
            let mut coords = vec![0usize; rank];
            for &v in data.iter() {
                let mut oi = 0usize;
                for (d, &co) in coords.iter().enumerate() {
                    oi += co * out_strides_full[d];
                }
                out[oi] = out[oi] + v;
                // row-major increment
                for d in (0..rank).rev() {
                    coords[d] += 1;
                    if coords[d] < in_shape[d] {
                        break;
                    }
                    coords[d] = 0;
                }
            }
        }
        let in_numel = self.numel();
        let in_shape_b = in_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut gi = vec![T::zero(); in_numel];
                let rank = in_shape_b.len();
                let mut coords = vec![0usize; rank];
                for gv in gi.iter_mut() {
                    let mut oi = 0usize;
                    for (d, &co) in coords.iter().enumerate() {
                        oi += co * out_strides_full[d];
                    }
                    *gv = g[oi];
                    for d in (0..rank).rev() {
                        coords[d] += 1;
                        if coords[d] < in_shape_b[d] {
                            break;
                        }
                        coords[d] = 0;
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axes_per_class() {
        // [2,3] summed over axis 0 -> [3]
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        let s = x.sum_axes(&[0]).unwrap();
        assert_eq!(s.shape(), &[3]);
        assert_eq!(s.to_vec(), vec![11.0, 22.0, 33.0]);
    }

    #[test]
    fn sum_axes_multi() {
        // [2,2,2] summed over axes {0,2} -> [2]
        let x = Tensor::<f64>::from_vec(&[2, 2, 2], (1..=8).map(|v| v as f64).collect()).unwrap();
        let s = x.sum_axes(&[0, 2]).unwrap();
        assert_eq!(s.to_vec(), vec![1.0 + 2.0 + 5.0 + 6.0, 3.0 + 4.0 + 7.0 + 8.0]);
    }

    #[test]
    fn sum_axes_grad_broadcasts_back() {
        let x = Tensor::<f64>::param(&[2, 3], vec![0.0; 6]).unwrap();
        let s = x.sum_axes(&[0]).unwrap();
        let w = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        s.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn mean_all_scales() {
        let x = Tensor::<f32>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((x.mean_all().item().unwrap() - 2.5).abs() < 1e-6);
    }
}
