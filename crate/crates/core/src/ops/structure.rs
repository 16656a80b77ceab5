//! Spatial structure helpers that do not fit the dense linear-algebra mold.

use crate::error::TensorError;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorData};

/// Multiplies every channel of `[H,W,C]` by a spatial map `[H,W]`. Both
/// operands are differentiable; the map gradient sums over channels.
pub fn mul_bcast_spatial(
    tape: &mut Tape,
    input: &Tensor,
    map: &Tensor,
) -> Result<Tensor, TensorError> {
    let (h, w, c) = match input.shape() {
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(TensorError::shape(
                "mul_bcast_spatial",
                format!("input must be [H,W,C], got {other:?}"),
            ))
        }
    };
    if map.shape() != [h, w] {
        return Err(TensorError::shape(
            "mul_bcast_spatial",
            format!("map shape {:?} does not match spatial extents {h}x{w}", map.shape()),
        ));
    }
    let mut values = Vec::with_capacity(h * w * c);
    for (pos, &m) in input.values().chunks_exact(c).zip(map.values()) {
        values.extend(pos.iter().map(|v| v * m));
    }
    let data = TensorData::new(&[h, w, c], values)?;
    let (id, md) = (input.data.clone(), map.data.clone());
    tape.record("mul_bcast_spatial", data, &[input, map], move |d, sink| {
        if sink.wants(0) {
            let mut di = Vec::with_capacity(d.len());
            for (pos, &m) in d.chunks_exact(c).zip(md.values()) {
                di.extend(pos.iter().map(|g| g * m));
            }
            sink.add(0, di);
        }
        if sink.wants(1) {
            let dm = d
                .chunks_exact(c)
                .zip(id.values().chunks_exact(c))
                .map(|(gs, vs)| gs.iter().zip(vs).map(|(g, v)| g * v).sum())
                .collect();
            sink.add(1, dm);
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;

    #[test]
    fn broadcast_multiply_and_gradients() {
        let mut tape = Tape::new();
        let f = tape.leaf(&Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = tape.leaf(&Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap());
        let out = mul_bcast_spatial(&mut tape, &f, &m).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0, 3.0, 4.0]);
        let loss = sum(&mut tape, &out).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&f).unwrap(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(tape.grad(&m).unwrap(), &[3.0, 7.0]);
    }
}
