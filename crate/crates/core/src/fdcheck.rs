//! Central-difference gradient verification.
//!
//! The numeric side evaluates the checked function on non-recording tapes, so
//! it stays independent of the backward implementation it is checking.

use crate::error::TensorError;
use crate::par;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Relative disagreement guarded against tiny denominators.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn eval_scalar<F>(f: &F, point: &Tensor) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor, TensorError>,
{
    let mut tape = Tape::eval();
    let x = tape.leaf(point);
    let out = f(&mut tape, &x)?;
    if out.numel() != 1 {
        return Err(TensorError::Backward(format!(
            "checked function must be scalar-valued, got shape {:?}",
            out.shape()
        )));
    }
    Ok(out.item())
}

/// Maximum over the given coordinates of the relative error between the
/// analytic gradient of `f` at `point` and a central finite difference.
pub fn finite_difference_check_coords<F>(
    f: F,
    point: &Tensor,
    eps: f64,
    coords: &[usize],
) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor, TensorError> + Sync,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point);
    let out = f(&mut tape, &x)?;
    if out.numel() != 1 {
        return Err(TensorError::Backward(format!(
            "checked function must be scalar-valued, got shape {:?}",
            out.shape()
        )));
    }
    tape.backward(&out)?;
    let analytic = tape.grad(&x).expect("leaf gradient").to_vec();

    let errs = par::try_map_indexed(coords, |_, &i| -> Result<f64, TensorError> {
        let bump = |delta: f64| {
            let mut v = point.values().to_vec();
            v[i] += delta;
            Tensor::new(point.shape(), v)
        };
        let plus = eval_scalar(&f, &bump(eps)?)?;
        let minus = eval_scalar(&f, &bump(-eps)?)?;
        let numeric = (plus - minus) / (2.0 * eps);
        Ok(rel_err(analytic[i], numeric))
    })?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Checks every coordinate of `point`.
pub fn finite_difference_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor, TensorError> + Sync,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    finite_difference_check_coords(f, point, eps, &coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn sum_of_squares_is_tight() {
        let point = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = finite_difference_check(
            |tape, x| {
                let sq = ops::mul(tape, x, x)?;
                ops::sum(tape, &sq)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "error {err}");
    }

    #[test]
    fn linear_function_is_exact_for_central_differences() {
        let point = Tensor::new(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let err = finite_difference_check(
            |tape, x| {
                let y = ops::scale(tape, x, 3.25)?;
                ops::sum(tape, &y)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "error {err}");
    }

    #[test]
    fn sine_chain() {
        let point = Tensor::new(&[4], vec![0.3, -0.7, 1.1, 0.2]).unwrap();
        let err = finite_difference_check(
            |tape, x| {
                let a = Tensor::scalar(1.5);
                let w = Tensor::scalar(2.5);
                let s1 = ops::sine(tape, x, &a, &w)?;
                let s2 = ops::sine(tape, &s1, &a, &w)?;
                ops::sum(tape, &s2)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "error {err}");
    }
}
