//! Pooling over height-width-channel tensors.

use crate::error::TensorError;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorData};

fn hwc(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match t.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(TensorError::shape(op, format!("expected [H,W,C], got {other:?}"))),
    }
}

/// Window maximum. Backward routes the gradient to the argmax position; ties
/// go to the first maximum in row-major order.
pub fn max_pool2d(
    tape: &mut Tape,
    input: &Tensor,
    kernel: usize,
    stride: usize,
) -> Result<Tensor, TensorError> {
    let (h, w, c) = hwc("max_pool2d", input)?;
    if kernel == 0 || stride == 0 {
        return Err(TensorError::arg("max_pool2d", "kernel and stride must be positive"));
    }
    if kernel > h || kernel > w {
        return Err(TensorError::arg(
            "max_pool2d",
            format!("kernel {kernel} exceeds input {h}x{w}"),
        ));
    }
    let out_h = (h - kernel) / stride + 1;
    let out_w = (w - kernel) / stride + 1;
    let iv = input.values();
    let mut values = Vec::with_capacity(out_h * out_w * c);
    let mut argmax = Vec::with_capacity(out_h * out_w * c);
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if iv[idx] > best {
                            best = iv[idx];
                            best_idx = idx;
                        }
                    }
                }
                values.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let n = iv.len();
    let data = TensorData::new(&[out_h, out_w, c], values)?;
    tape.record("max_pool2d", data, &[input], move |d, sink| {
        let mut dx = vec![0.0; n];
        for (&idx, g) in argmax.iter().zip(d) {
            dx[idx] += g;
        }
        sink.add(0, dx);
    })
}

/// Mean over non-overlapping k x k patches per channel: `[H,W,C] -> [H/k,W/k,C]`.
pub fn patch_average_pool(tape: &mut Tape, input: &Tensor, k: usize) -> Result<Tensor, TensorError> {
    let (h, w, c) = hwc("patch_average_pool", input)?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(TensorError::arg(
            "patch_average_pool",
            format!("extents {h}x{w} not divisible by patch size {k}"),
        ));
    }
    let (ph, pw) = (h / k, w / k);
    let iv = input.values();
    let denom = (k * k) as f64;
    let mut values = vec![0.0; ph * pw * c];
    for y in 0..h {
        for x in 0..w {
            let orow = &mut values[((y / k) * pw + x / k) * c..][..c];
            let irow = &iv[(y * w + x) * c..][..c];
            for (o, v) in orow.iter_mut().zip(irow) {
                *o += v;
            }
        }
    }
    for v in &mut values {
        *v /= denom;
    }
    let data = TensorData::new(&[ph, pw, c], values)?;
    tape.record("patch_average_pool", data, &[input], move |d, sink| {
        let mut dx = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                let drow = &d[((y / k) * pw + x / k) * c..][..c];
                let xrow = &mut dx[(y * w + x) * c..][..c];
                for (o, g) in xrow.iter_mut().zip(drow) {
                    *o = g / denom;
                }
            }
        }
        sink.add(0, dx);
    })
}

/// Per-channel mean over every non-channel position: `[.., C] -> [C]`.
/// Channels are the last axis; at least one spatial element is required.
pub fn global_average_pool(tape: &mut Tape, input: &Tensor) -> Result<Tensor, TensorError> {
    if input.rank() < 2 {
        return Err(TensorError::shape(
            "global_average_pool",
            format!("expected rank >= 2 with trailing channels, got {:?}", input.shape()),
        ));
    }
    let c = *input.shape().last().expect("rank checked");
    let spatial = input.numel() / c;
    let mut values = vec![0.0; c];
    for pos in input.values().chunks_exact(c) {
        for (acc, v) in values.iter_mut().zip(pos) {
            *acc += v;
        }
    }
    for v in &mut values {
        *v /= spatial as f64;
    }
    let data = TensorData::new(&[c], values)?;
    tape.record("global_average_pool", data, &[input], move |d, sink| {
        let scale = 1.0 / spatial as f64;
        let mut dx = Vec::with_capacity(spatial * c);
        for _ in 0..spatial {
            dx.extend(d.iter().map(|g| g * scale));
        }
        sink.add(0, dx);
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn max_pool_forced_arithmetic() {
        let mut tape = Tape::eval();
        let out = max_pool2d(&mut tape, &t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.values(), &[4.0]);
    }

    #[test]
    fn max_pool_constant_input() {
        let mut tape = Tape::eval();
        let out = max_pool2d(&mut tape, &Tensor::filled(&[4, 4, 2], 7.5), 2, 2).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.values().iter().all(|v| *v == 7.5));
    }

    #[test]
    fn max_pool_shape_rule() {
        let mut tape = Tape::eval();
        let out = max_pool2d(&mut tape, &Tensor::zeros(&[8, 8, 3]), 2, 2).unwrap();
        assert_eq!(out.shape(), &[4, 4, 3]);
    }

    #[test]
    fn max_pool_tie_routes_to_first_in_row_major() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 2, 1], &[5.0, 5.0, 5.0, 5.0]));
        let y = max_pool2d(&mut tape, &x, 2, 2).unwrap();
        let loss = sum(&mut tape, &y).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn patch_average_examples() {
        let mut tape = Tape::eval();
        let constant = patch_average_pool(&mut tape, &Tensor::filled(&[6, 6, 2], 5.0), 3).unwrap();
        assert!(constant.values().iter().all(|v| *v == 5.0));
        let tiny = patch_average_pool(&mut tape, &t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(tiny.values(), &[2.5]);
        let shaped = patch_average_pool(&mut tape, &Tensor::zeros(&[8, 8, 3]), 2).unwrap();
        assert_eq!(shaped.shape(), &[4, 4, 3]);
    }

    #[test]
    fn patch_average_rejects_non_divisible() {
        let mut tape = Tape::eval();
        assert!(patch_average_pool(&mut tape, &Tensor::zeros(&[6, 6, 1]), 4).is_err());
    }

    #[test]
    fn gap_mean_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = global_average_pool(&mut tape, &x).unwrap();
        assert_eq!(y.values(), &[2.5]);
        let loss = sum(&mut tape, &y).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[0.25, 0.25, 0.25, 0.25]);
    }
}
