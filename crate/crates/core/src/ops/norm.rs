//! Normalizations and the classification loss.

use crate::error::TensorError;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorData};

const NORM_EPS: f64 = 1e-5;

/// Iterates strided lanes along `axis`: calls `f(base, stride)` once per lane.
fn lanes(shape: &[usize], axis: usize) -> impl Iterator<Item = (usize, usize)> {
    let ext = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    (0..outer).flat_map(move |o| (0..inner).map(move |i| (o * ext * inner + i, inner)))
}

/// Softmax along `axis`; every lane sums to one.
pub fn softmax(tape: &mut Tape, x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    if axis >= x.rank() {
        return Err(TensorError::arg(
            "softmax",
            format!("axis {axis} out of range for rank {}", x.rank()),
        ));
    }
    let shape = x.shape().to_vec();
    let ext = shape[axis];
    let mut values = x.values().to_vec();
    for (base, stride) in lanes(&shape, axis) {
        let mut max = f64::NEG_INFINITY;
        for j in 0..ext {
            max = max.max(values[base + j * stride]);
        }
        let mut total = 0.0;
        for j in 0..ext {
            let e = (values[base + j * stride] - max).exp();
            values[base + j * stride] = e;
            total += e;
        }
        for j in 0..ext {
            values[base + j * stride] /= total;
        }
    }
    let data = TensorData::new(&shape, values.clone())?;
    tape.record("softmax", data, &[x], move |d, sink| {
        let mut dx = vec![0.0; d.len()];
        for (base, stride) in lanes(&shape, axis) {
            let mut dot = 0.0;
            for j in 0..ext {
                let i = base + j * stride;
                dot += d[i] * values[i];
            }
            for j in 0..ext {
                let i = base + j * stride;
                dx[i] = values[i] * (d[i] - dot);
            }
        }
        sink.add(0, dx);
    })
}

/// Normalizes each lane of the last axis to zero mean and unit variance.
pub fn layer_normalize(tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
    if x.rank() == 0 {
        return Err(TensorError::arg("layer_normalize", "rank-0 input"));
    }
    let n = *x.shape().last().expect("rank checked");
    let mut normed = Vec::with_capacity(x.numel());
    let mut inv_sigma = Vec::with_capacity(x.numel() / n);
    for lane in x.values().chunks_exact(n) {
        let mean = lane.iter().sum::<f64>() / n as f64;
        let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let s = 1.0 / (var + NORM_EPS).sqrt();
        inv_sigma.push(s);
        normed.extend(lane.iter().map(|v| (v - mean) * s));
    }
    let data = TensorData::new(x.shape(), normed.clone())?;
    tape.record("layer_normalize", data, &[x], move |d, sink| {
        let mut dx = vec![0.0; d.len()];
        for (lane_idx, s) in inv_sigma.iter().enumerate() {
            let o = lane_idx * n;
            let (dl, yl) = (&d[o..o + n], &normed[o..o + n]);
            let mean_d = dl.iter().sum::<f64>() / n as f64;
            let mean_dy = dl.iter().zip(yl).map(|(g, y)| g * y).sum::<f64>() / n as f64;
            for j in 0..n {
                dx[o + j] = s * (dl[j] - mean_d - yl[j] * mean_dy);
            }
        }
        sink.add(0, dx);
    })
}

/// Per-channel normalization over all spatial positions with learned scale
/// and shift. Channels are the last axis; statistics are computed per channel
/// across everything else, so results are independent of batch composition.
pub fn channel_norm(
    tape: &mut Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<Tensor, TensorError> {
    if x.rank() < 2 {
        return Err(TensorError::arg("channel_norm", "input must have rank >= 2"));
    }
    let c = *x.shape().last().expect("rank checked");
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [c] {
            return Err(TensorError::shape(
                "channel_norm",
                format!("{name} shape {:?} does not match channel count {c}", t.shape()),
            ));
        }
    }
    let spatial = x.numel() / c;
    let xv = x.values();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for pos in xv.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(pos) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= spatial as f64;
    }
    for pos in xv.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(pos).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_sigma: Vec<f64> =
        var.iter().map(|s| 1.0 / (s / spatial as f64 + NORM_EPS).sqrt()).collect();
    let mut normed = Vec::with_capacity(x.numel());
    for pos in xv.chunks_exact(c) {
        for ch in 0..c {
            normed.push((pos[ch] - mean[ch]) * inv_sigma[ch]);
        }
    }
    let values = normed
        .chunks_exact(c)
        .flat_map(|pos| {
            pos.iter()
                .zip(gamma.values())
                .zip(beta.values())
                .map(|((y, g), b)| y * g + b)
        })
        .collect();
    let data = TensorData::new(x.shape(), values)?;
    let gv = gamma.data.clone();
    tape.record("channel_norm", data, &[x, gamma, beta], move |d, sink| {
        if sink.wants(1) {
            let mut dg = vec![0.0; c];
            for (pos, y) in d.chunks_exact(c).zip(normed.chunks_exact(c)) {
                for ((acc, g), yv) in dg.iter_mut().zip(pos).zip(y) {
                    *acc += g * yv;
                }
            }
            sink.add(1, dg);
        }
        if sink.wants(2) {
            let mut db = vec![0.0; c];
            for pos in d.chunks_exact(c) {
                for (acc, g) in db.iter_mut().zip(pos) {
                    *acc += g;
                }
            }
            sink.add(2, db);
        }
        if sink.wants(0) {
            // Gradient through the normalized value: dy = d * gamma, then the
            // usual mean/variance correction per channel lane.
            let g = gv.values();
            let mut mean_dy = vec![0.0; c];
            let mut mean_dyy = vec![0.0; c];
            for (pos, y) in d.chunks_exact(c).zip(normed.chunks_exact(c)) {
                for ch in 0..c {
                    let dy = pos[ch] * g[ch];
                    mean_dy[ch] += dy;
                    mean_dyy[ch] += dy * y[ch];
                }
            }
            for ch in 0..c {
                mean_dy[ch] /= spatial as f64;
                mean_dyy[ch] /= spatial as f64;
            }
            let mut dx = vec![0.0; d.len()];
            for (p, (pos, y)) in d.chunks_exact(c).zip(normed.chunks_exact(c)).enumerate() {
                for ch in 0..c {
                    let dy = pos[ch] * g[ch];
                    dx[p * c + ch] = inv_sigma[ch] * (dy - mean_dy[ch] - y[ch] * mean_dyy[ch]);
                }
            }
            sink.add(0, dx);
        }
    })
}

/// Negative log-likelihood of `label` under softmax of rank-1 logits,
/// computed in the numerically stable fused form.
pub fn cross_entropy(tape: &mut Tape, logits: &Tensor, label: usize) -> Result<Tensor, TensorError> {
    let k = match logits.shape() {
        [k] => *k,
        other => {
            return Err(TensorError::shape(
                "cross_entropy",
                format!("logits must be rank 1, got {other:?}"),
            ))
        }
    };
    if label >= k {
        return Err(TensorError::arg(
            "cross_entropy",
            format!("label {label} out of range for {k} classes"),
        ));
    }
    let lv = logits.values();
    let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = lv.iter().map(|v| (v - max).exp()).sum();
    let loss = max + total.ln() - lv[label];
    let probs: Vec<f64> = lv.iter().map(|v| (v - max).exp() / total).collect();
    let data = TensorData::new(&[], vec![loss])?;
    tape.record("cross_entropy", data, &[logits], move |d, sink| {
        let mut dl: Vec<f64> = probs.iter().map(|p| p * d[0]).collect();
        dl[label] -= d[0];
        sink.add(0, dl);
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_constant_vector_is_uniform() {
        let mut tape = Tape::eval();
        let x = t(&[1, 5], &[3.0; 5]);
        let y = softmax(&mut tape, &x, 1).unwrap();
        for v in y.values() {
            assert_relative_eq!(*v, 0.2, max_relative = 1e-12);
        }
    }

    #[test]
    fn softmax_axis_zero() {
        let mut tape = Tape::eval();
        let x = t(&[2, 2], &[0.0, 10.0, 0.0, 10.0]);
        let y = softmax(&mut tape, &x, 0).unwrap();
        assert_relative_eq!(y.values()[0] + y.values()[2], 1.0, epsilon = 1e-12);
        assert_relative_eq!(y.values()[1] + y.values()[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::eval();
        let k = 10;
        let loss = cross_entropy(&mut tape, &t(&[k], &vec![1.3; k]), 3).unwrap();
        assert_relative_eq!(loss.item(), (k as f64).ln(), max_relative = 1e-12);
    }

    #[test]
    fn cross_entropy_saturates_when_correct_logit_dominates() {
        let mut tape = Tape::eval();
        let mut logits = vec![0.0; 4];
        logits[2] = 30.0;
        let loss = cross_entropy(&mut tape, &t(&[4], &logits), 2).unwrap();
        assert!(loss.item() <= 1e-12, "loss {} not saturated", loss.item());
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::eval();
        assert!(cross_entropy(&mut tape, &t(&[3], &[0.0; 3]), 3).is_err());
    }

    #[test]
    fn layer_normalize_zero_mean_unit_variance() {
        let mut tape = Tape::eval();
        let y = layer_normalize(&mut tape, &t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0]))
            .unwrap();
        for lane in y.values().chunks_exact(4) {
            let mean = lane.iter().sum::<f64>() / 4.0;
            let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
            assert_relative_eq!(var, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn channel_norm_identity_at_unit_affine_on_normalized_input() {
        let mut tape = Tape::eval();
        let x = t(&[2, 2, 2], &[1.0, -3.0, -1.0, 3.0, 2.0, 1.0, -2.0, -1.0]);
        let y =
            channel_norm(&mut tape, &x, &t(&[2], &[1.0, 1.0]), &t(&[2], &[0.0, 0.0])).unwrap();
        // Channel means become 0.
        let c0: f64 = y.values().iter().step_by(2).sum();
        let c1: f64 = y.values().iter().skip(1).step_by(2).sum();
        assert_relative_eq!(c0, 0.0, epsilon = 1e-10);
        assert_relative_eq!(c1, 0.0, epsilon = 1e-10);
    }
}
