//! Elementwise and reduction primitives.

use crate::error::TensorError;
use crate::tape::Tape;
use crate::tensor::{same_shape, Tensor, TensorData};

pub fn add(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    same_shape("add", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    let data = TensorData::new(a.shape(), values)?;
    tape.record("add", data, &[a, b], move |d, sink| {
        sink.add(0, d.to_vec());
        sink.add(1, d.to_vec());
    })
}

/// Sum of an arbitrary number of same-shape tensors.
pub fn add_n(tape: &mut Tape, terms: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = *terms
        .first()
        .ok_or_else(|| TensorError::arg("add_n", "empty term list"))?;
    let mut values = first.values().to_vec();
    for t in &terms[1..] {
        same_shape("add_n", first, t)?;
        for (v, x) in values.iter_mut().zip(t.values()) {
            *v += x;
        }
    }
    let n = terms.len();
    let data = TensorData::new(first.shape(), values)?;
    tape.record("add_n", data, terms, move |d, sink| {
        for slot in 0..n {
            sink.add(slot, d.to_vec());
        }
    })
}

/// Hadamard product.
pub fn mul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    same_shape("mul", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    let data = TensorData::new(a.shape(), values)?;
    let (ad, bd) = (a.data.clone(), b.data.clone());
    tape.record("mul", data, &[a, b], move |d, sink| {
        if sink.wants(0) {
            sink.add(0, d.iter().zip(bd.values()).map(|(g, y)| g * y).collect());
        }
        if sink.wants(1) {
            sink.add(1, d.iter().zip(ad.values()).map(|(g, x)| g * x).collect());
        }
    })
}

pub fn scale(tape: &mut Tape, x: &Tensor, c: f64) -> Result<Tensor, TensorError> {
    let values = x.values().iter().map(|v| c * v).collect();
    let data = TensorData::new(x.shape(), values)?;
    tape.record("scale", data, &[x], move |d, sink| {
        sink.add(0, d.iter().map(|g| c * g).collect());
    })
}

/// Sum over all elements, producing a scalar.
pub fn sum(tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
    let total: f64 = x.values().iter().sum();
    let n = x.numel();
    let data = TensorData::new(&[], vec![total])?;
    tape.record("sum", data, &[x], move |d, sink| {
        sink.add(0, vec![d[0]; n]);
    })
}

pub fn relu(tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
    let values = x.values().iter().map(|v| v.max(0.0)).collect();
    let data = TensorData::new(x.shape(), values)?;
    let xd = x.data.clone();
    tape.record("relu", data, &[x], move |d, sink| {
        sink.add(
            0,
            d.iter()
                .zip(xd.values())
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect(),
        );
    })
}

pub fn sigmoid(tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
    let values: Vec<f64> = x.values().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    let data = TensorData::new(x.shape(), values.clone())?;
    tape.record("sigmoid", data, &[x], move |d, sink| {
        sink.add(0, d.iter().zip(&values).map(|(g, y)| g * y * (1.0 - y)).collect());
    })
}

/// Sine activation `a * sin(w * x)` with scalar amplitude and frequency,
/// differentiable with respect to `x`, `a`, and `w`.
pub fn sine(tape: &mut Tape, x: &Tensor, a: &Tensor, w: &Tensor) -> Result<Tensor, TensorError> {
    for (name, t) in [("amplitude", a), ("frequency", w)] {
        if t.numel() != 1 {
            return Err(TensorError::arg("sine", format!("{name} must be scalar")));
        }
    }
    let (av, wv) = (a.item(), w.item());
    let values = x.values().iter().map(|v| av * (wv * v).sin()).collect();
    let data = TensorData::new(x.shape(), values)?;
    let xd = x.data.clone();
    tape.record("sine", data, &[x, a, w], move |d, sink| {
        if sink.wants(0) {
            sink.add(
                0,
                d.iter()
                    .zip(xd.values())
                    .map(|(g, v)| g * av * wv * (wv * v).cos())
                    .collect(),
            );
        }
        if sink.wants(1) {
            let da = d.iter().zip(xd.values()).map(|(g, v)| g * (wv * v).sin()).sum();
            sink.add(1, vec![da]);
        }
        if sink.wants(2) {
            let dw = d
                .iter()
                .zip(xd.values())
                .map(|(g, v)| g * av * v * (wv * v).cos())
                .sum();
            sink.add(2, vec![dw]);
        }
    })
}

/// Multiplies by a constant 0/1 (or arbitrary) mask. The mask is data, not a
/// tracked operand: backward is a hard mask on the upstream gradient.
pub fn mul_mask(tape: &mut Tape, x: &Tensor, mask: &[f64]) -> Result<Tensor, TensorError> {
    if mask.len() != x.numel() {
        return Err(TensorError::shape(
            "mul_mask",
            format!("mask has {} entries, tensor has {}", mask.len(), x.numel()),
        ));
    }
    let values = x.values().iter().zip(mask).map(|(v, m)| v * m).collect();
    let data = TensorData::new(x.shape(), values)?;
    let mask = mask.to_vec();
    tape.record("mul_mask", data, &[x], move |d, sink| {
        sink.add(0, d.iter().zip(&mask).map(|(g, m)| g * m).collect());
    })
}

/// Replaces the forward values of `x` while passing gradients through
/// unchanged: the straight-through estimator for hard decisions such as
/// binarization. `values` must match the shape of `x`.
pub fn straight_through(
    tape: &mut Tape,
    x: &Tensor,
    values: Vec<f64>,
) -> Result<Tensor, TensorError> {
    if values.len() != x.numel() {
        return Err(TensorError::shape(
            "straight_through",
            format!("{} replacement values for {} elements", values.len(), x.numel()),
        ));
    }
    let data = TensorData::new(x.shape(), values)?;
    tape.record("straight_through", data, &[x], move |d, sink| {
        sink.add(0, d.to_vec());
    })
}
