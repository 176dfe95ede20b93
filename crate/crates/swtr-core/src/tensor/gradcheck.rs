//! Finite-difference gradient verification.

use super::{Scalar, Tensor};
use crate::error::{Result, SwtrError};

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − central| / max(1, |analytic|)
    pub max_rel_err: f64,
    /// coordinate attaining the maximum
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Compare the analytic gradient of a scalar-valued `f` at `x` against
/// central finite differences with step `eps`. Coordinates may be limited
/// to `coords` (all when `None`). Non-finite intermediates are reported as
/// an error naming the coordinate.
pub fn grad_check<T: Scalar>(
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    x: &Tensor<T>,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-2).contains(&eps) {
        return Err(SwtrError::Config(format!(
            "grad_check eps {eps} outside [1e-7, 1e-2]"
        )));
    }
    let base = x.to_vec();
    let probe = Tensor::<T>::param(x.shape(), base.clone())?;
    let loss = f(&probe)?;
    if loss.numel() != 1 {
        return Err(SwtrError::Grad(format!(
            "grad_check target must be scalar, got {:?}",
            loss.shape()
        )));
    }
    loss.backward()?;
    let analytic = probe
        .grad()
        .ok_or_else(|| SwtrError::Grad("no gradient reached the probe input".into()))?;

    let eval = |values: &[T]| -> Result<f64> {
        let t = Tensor::<T>::from_vec(x.shape(), values.to_vec())?;
        let y = f(&t)?.item()?;
        Ok(y.to_f64c())
    };

    let all: Vec<usize>;
    let coords = match coords {
        Some(cs) => cs,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    let mut bumped = base.clone();
    for &i in coords {
        let orig = base[i].to_f64c();
        bumped[i] = T::from_f64c(orig + eps);
        let up = eval(&bumped)?;
        bumped[i] = T::from_f64c(orig - eps);
        let down = eval(&bumped)?;
        bumped[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i].to_f64c();
        if !numeric.is_finite() || !a.is_finite() {
            return Err(SwtrError::Grad(format!(
                "non-finite gradient at coordinate {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn linear_function_is_machine_exact() {
        let x = Tensor::<f64>::from_vec(&[4], vec![0.3, -0.7, 1.1, 0.0]).unwrap();
        let r = grad_check(|t| Ok(t.mul_scalar(3.0).sum_all()), &x, 1e-5, None).unwrap();
        assert!(r.max_rel_err < 1e-9, "rel err {}", r.max_rel_err);
    }

    #[test]
    fn layer_norm_checks_below_1e6() {
        let mut rng = stream(11, &[0]);
        let x = Tensor::<f64>::randn(&[4, 8], 1.0, &mut rng);
        let g = Tensor::<f64>::randn(&[8], 0.5, &mut rng).add_scalar(1.0);
        let b = Tensor::<f64>::randn(&[8], 0.5, &mut rng);
        let r = grad_check(
            |t| Ok(t.layer_norm(&g, &b, 1e-5)?.mul(&t.layer_norm(&g, &b, 1e-5)?)?.sum_all()),
            &x,
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "rel err {}", r.max_rel_err);
    }

    #[test]
    fn step_discontinuity_is_flagged() {
        // Hard step (saturated clamp): analytic grad is 0, FD straddles the
        // jump, so the reported error must dwarf any sane tolerance.
        let x = Tensor::<f64>::from_vec(&[1], vec![1e-6]).unwrap();
        let r = grad_check(
            |t| Ok(t.mul_scalar(1e9).clamp(0.0, 1.0).sum_all()),
            &x,
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_err > 1.0, "expected failure, got {}", r.max_rel_err);
    }

    #[test]
    fn eps_is_validated() {
        let x = Tensor::<f64>::zeros(&[1]);
        assert!(grad_check(|t| Ok(t.sum_all()), &x, 1e-8, None).is_err());
    }
}
