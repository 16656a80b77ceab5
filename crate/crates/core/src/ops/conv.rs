//! 2-D convolution over height-width-channel tensors.
//!
//! Layout puts channels innermost, so the hot loops are contiguous
//! multiply-accumulates over the output channel axis.

use crate::error::TensorError;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorData};

pub(crate) struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv_geometry(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry, TensorError> {
    let [h, w, c_in] = match input.shape() {
        [h, w, c] => [*h, *w, *c],
        other => {
            return Err(TensorError::shape(
                op,
                format!("input must be [H,W,C], got {other:?}"),
            ))
        }
    };
    let [kh, kw, wc_in, c_out] = match weight.shape() {
        [a, b, c, d] => [*a, *b, *c, *d],
        other => {
            return Err(TensorError::shape(
                op,
                format!("weight must be [kh,kw,C_in,C_out], got {other:?}"),
            ))
        }
    };
    if wc_in != c_in {
        return Err(TensorError::shape(
            op,
            format!("weight axis 2 (C_in) is {wc_in}, input axis 2 is {c_in}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(TensorError::shape(
            op,
            format!("bias shape {:?} does not match C_out {c_out}", bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(TensorError::arg(op, "stride must be positive"));
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(TensorError::arg(
            op,
            format!(
                "kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ),
        ));
    }
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;
    Ok(ConvGeometry { h, w, c_in, kh, kw, c_out, stride, padding, out_h, out_w })
}

fn conv_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.out_h * g.out_w * g.c_out);
    for _ in 0..g.out_h * g.out_w {
        out.extend_from_slice(bias);
    }
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let orow = &mut out[(oy * g.out_w + ox) * g.c_out..][..g.c_out];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let irow = &input[((iy as usize) * g.w + ix as usize) * g.c_in..][..g.c_in];
                    let wbase = (ky * g.kw + kx) * g.c_in * g.c_out;
                    for (ic, &x) in irow.iter().enumerate() {
                        let wrow = &weight[wbase + ic * g.c_out..][..g.c_out];
                        for (o, wv) in orow.iter_mut().zip(wrow) {
                            *o += x * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

struct ConvGrads {
    d_input: Option<Vec<f64>>,
    d_weight: Option<Vec<f64>>,
    d_bias: Option<Vec<f64>>,
}

/// Weight reindexed as [kh, kw, C_out, C_in], so the input-gradient inner
/// loop runs contiguously over C_in.
fn transpose_weight(g: &ConvGeometry, weight: &[f64]) -> Vec<f64> {
    let mut wt = vec![0.0; weight.len()];
    for tap in 0..g.kh * g.kw {
        let base = tap * g.c_in * g.c_out;
        for ic in 0..g.c_in {
            for oc in 0..g.c_out {
                wt[base + oc * g.c_in + ic] = weight[base + ic * g.c_out + oc];
            }
        }
    }
    wt
}

fn conv_backward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> ConvGrads {
    let mut d_input = want_input.then(|| vec![0.0; input.len()]);
    let mut d_weight = want_weight.then(|| vec![0.0; weight.len()]);
    let mut d_bias = want_bias.then(|| vec![0.0; g.c_out]);
    let wt = if want_input { transpose_weight(g, weight) } else { Vec::new() };
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let drow = &d_out[(oy * g.out_w + ox) * g.c_out..][..g.c_out];
            if let Some(db) = &mut d_bias {
                for (acc, gr) in db.iter_mut().zip(drow) {
                    *acc += gr;
                }
            }
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let ibase = ((iy as usize) * g.w + ix as usize) * g.c_in;
                    let wbase = (ky * g.kw + kx) * g.c_in * g.c_out;
                    if let Some(dw) = &mut d_weight {
                        for ic in 0..g.c_in {
                            let x = input[ibase + ic];
                            let row = &mut dw[wbase + ic * g.c_out..][..g.c_out];
                            for (acc, gr) in row.iter_mut().zip(drow) {
                                *acc += x * gr;
                            }
                        }
                    }
                    if let Some(di) = &mut d_input {
                        let irow = &mut di[ibase..ibase + g.c_in];
                        for (oc, &gr) in drow.iter().enumerate() {
                            let wrow = &wt[wbase + oc * g.c_in..][..g.c_in];
                            for (acc, w) in irow.iter_mut().zip(wrow) {
                                *acc += gr * w;
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { d_input, d_weight, d_bias }
}

/// Standard convolution with zero padding.
pub fn conv2d(
    tape: &mut Tape,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let g = conv_geometry("conv2d", input, weight, bias, stride, padding)?;
    let values = conv_forward(&g, input.values(), weight.values(), bias.values());
    let data = TensorData::new(&[g.out_h, g.out_w, g.c_out], values)?;
    let (id, wd) = (input.data.clone(), weight.data.clone());
    tape.record("conv2d", data, &[input, weight, bias], move |d, sink| {
        let grads = conv_backward(
            &g,
            id.values(),
            wd.values(),
            d,
            sink.wants(0),
            sink.wants(1),
            sink.wants(2),
        );
        if let Some(di) = grads.d_input {
            sink.add(0, di);
        }
        if let Some(dw) = grads.d_weight {
            sink.add(1, dw);
        }
        if let Some(db) = grads.d_bias {
            sink.add(2, db);
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn all_ones_three_by_three() {
        let mut tape = Tape::eval();
        let input = t(&[3, 3, 1], &[1.0; 9]);
        let weight = t(&[2, 2, 1, 1], &[1.0; 4]);
        let bias = t(&[1], &[0.0]);
        let out = conv2d(&mut tape, &input, &weight, &bias, 1, 0).unwrap();
        assert_eq!(out.shape(), &[2, 2, 1]);
        assert!(out.values().iter().all(|v| *v == 4.0));
    }

    #[test]
    fn identity_one_by_one_kernel_is_bit_exact() {
        let mut tape = Tape::eval();
        let input = Tensor::from_fn(&[5, 4, 1], |i| (i as f64).sin() * 1e3);
        let weight = t(&[1, 1, 1, 1], &[1.0]);
        let bias = t(&[1], &[0.0]);
        let out = conv2d(&mut tape, &input, &weight, &bias, 1, 0).unwrap();
        assert_eq!(out.values(), input.values());
    }

    #[test]
    fn stride_and_padding_shape_rule() {
        let mut tape = Tape::eval();
        let input = t(&[8, 8, 2], &[0.5; 128]);
        let weight = t(&[3, 3, 2, 4], &[0.1; 72]);
        let bias = t(&[4], &[0.0; 4]);
        let out = conv2d(&mut tape, &input, &weight, &bias, 2, 1).unwrap();
        assert_eq!(out.shape(), &[4, 4, 4]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut tape = Tape::eval();
        let input = t(&[4, 4, 3], &[0.0; 48]);
        let weight = t(&[3, 3, 2, 4], &[0.0; 72]);
        let bias = t(&[4], &[0.0; 4]);
        let err = conv2d(&mut tape, &input, &weight, &bias, 1, 1).unwrap_err();
        assert!(err.to_string().contains("axis 2"), "got: {err}");
    }

    #[test]
    fn oversized_kernel_rejected() {
        let mut tape = Tape::eval();
        let input = t(&[2, 2, 1], &[0.0; 4]);
        let weight = t(&[3, 3, 1, 1], &[0.0; 9]);
        let bias = t(&[1], &[0.0]);
        assert!(conv2d(&mut tape, &input, &weight, &bias, 1, 0).is_err());
    }
}
