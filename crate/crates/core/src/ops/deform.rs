//! Deformable convolution: kernel taps sample the input at learned fractional
//! offsets via bilinear interpolation. Positions outside the input plane read
//! as zeros, matching the zero-padding convention of `conv2d`.

use crate::error::TensorError;
use crate::ops::conv::{conv2d, conv_geometry};
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorData};

/// One bilinear sampling site: corner indices (spatial, `usize::MAX` when the
/// corner falls outside), corner weights, and fractional residuals.
struct Tap {
    corner: [usize; 4],
    weight: [f64; 4],
}

fn tap(h: usize, w: usize, y: f64, x: f64) -> Option<Tap> {
    if !(y > -1.0 && y < h as f64 && x > -1.0 && x < w as f64) {
        return None;
    }
    let ylo = y.floor();
    let xlo = x.floor();
    let ly = y - ylo;
    let lx = x - xlo;
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    let idx = |cy: f64, cx: f64| -> usize {
        if cy >= 0.0 && (cy as usize) < h && cx >= 0.0 && (cx as usize) < w {
            cy as usize * w + cx as usize
        } else {
            usize::MAX
        }
    };
    Some(Tap {
        corner: [
            idx(ylo, xlo),
            idx(ylo, xlo + 1.0),
            idx(ylo + 1.0, xlo),
            idx(ylo + 1.0, xlo + 1.0),
        ],
        weight: [hy * hx, hy * lx, ly * hx, ly * lx],
    })
}

fn sample(input: &[f64], c_in: usize, t: &Tap, out: &mut [f64]) {
    out.fill(0.0);
    for (idx, wgt) in t.corner.iter().zip(t.weight) {
        if *idx == usize::MAX || wgt == 0.0 {
            continue;
        }
        let row = &input[idx * c_in..][..c_in];
        for (o, v) in out.iter_mut().zip(row) {
            *o += wgt * v;
        }
    }
}

/// d(sample)/dy and d(sample)/dx per channel, from corner values.
fn sample_derivs(input: &[f64], c_in: usize, t: &Tap, dy: &mut [f64], dx: &mut [f64]) {
    let corner_val = |k: usize, ic: usize| -> f64 {
        if t.corner[k] == usize::MAX {
            0.0
        } else {
            input[t.corner[k] * c_in + ic]
        }
    };
    // weight = [hy*hx, hy*lx, ly*hx, ly*lx]; recover hx/lx/hy/ly pairs.
    let hx = t.weight[0] + t.weight[2];
    let lx = t.weight[1] + t.weight[3];
    let hy = t.weight[0] + t.weight[1];
    let ly = t.weight[2] + t.weight[3];
    for ic in 0..c_in {
        let (v1, v2, v3, v4) =
            (corner_val(0, ic), corner_val(1, ic), corner_val(2, ic), corner_val(3, ic));
        dy[ic] = (v3 - v1) * hx + (v4 - v2) * lx;
        dx[ic] = (v2 - v1) * hy + (v4 - v3) * ly;
    }
}

/// Deformable convolution against an explicit per-position offset field of
/// shape `[out_h, out_w, 2*kh*kw]` ((dy, dx) per kernel tap). Differentiable
/// with respect to input, weight, bias, and offsets.
pub fn deform_conv2d_sampled(
    tape: &mut Tape,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    offsets: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let g = conv_geometry("deform_conv2d", input, weight, bias, stride, padding)?;
    let off_c = 2 * g.kh * g.kw;
    if offsets.shape() != [g.out_h, g.out_w, off_c] {
        return Err(TensorError::shape(
            "deform_conv2d",
            format!(
                "offsets shape {:?}, expected [{}, {}, {off_c}]",
                offsets.shape(),
                g.out_h,
                g.out_w
            ),
        ));
    }
    let (iv, wv, ov) = (input.values(), weight.values(), offsets.values());
    let mut out = Vec::with_capacity(g.out_h * g.out_w * g.c_out);
    let mut samp = vec![0.0; g.c_in];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let start = out.len();
            out.extend_from_slice(bias.values());
            let orow = &mut out[start..];
            let obase = (oy * g.out_w + ox) * off_c;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let k = ky * g.kw + kx;
                    let y = (oy * g.stride + ky) as f64 - g.padding as f64 + ov[obase + 2 * k];
                    let x =
                        (ox * g.stride + kx) as f64 - g.padding as f64 + ov[obase + 2 * k + 1];
                    let Some(t) = tap(g.h, g.w, y, x) else { continue };
                    sample(iv, g.c_in, &t, &mut samp);
                    let wbase = k * g.c_in * g.c_out;
                    for (ic, &s) in samp.iter().enumerate() {
                        if s == 0.0 {
                            continue;
                        }
                        let wrow = &wv[wbase + ic * g.c_out..][..g.c_out];
                        for (o, w) in orow.iter_mut().zip(wrow) {
                            *o += s * w;
                        }
                    }
                }
            }
        }
    }
    let data = TensorData::new(&[g.out_h, g.out_w, g.c_out], out)?;
    let (id, wd, od) = (input.data.clone(), weight.data.clone(), offsets.data.clone());
    tape.record("deform_conv2d", data, &[input, weight, bias, offsets], move |d, sink| {
        let (iv, wv, ov) = (id.values(), wd.values(), od.values());
        let mut d_input = sink.wants(0).then(|| vec![0.0; iv.len()]);
        let mut d_weight = sink.wants(1).then(|| vec![0.0; wv.len()]);
        let mut d_bias = sink.wants(2).then(|| vec![0.0; g.c_out]);
        let mut d_off = sink.wants(3).then(|| vec![0.0; ov.len()]);
        // Weight reindexed [tap, C_out, C_in] so the upstream-gradient
        // projection runs as contiguous axpy rows.
        let needs_projection = d_input.is_some() || d_off.is_some();
        let wt: Vec<f64> = if needs_projection {
            let mut wt = vec![0.0; wv.len()];
            for tap in 0..g.kh * g.kw {
                let base = tap * g.c_in * g.c_out;
                for ic in 0..g.c_in {
                    for oc in 0..g.c_out {
                        wt[base + oc * g.c_in + ic] = wv[base + ic * g.c_out + oc];
                    }
                }
            }
            wt
        } else {
            Vec::new()
        };
        let mut samp = vec![0.0; g.c_in];
        let mut sdy = vec![0.0; g.c_in];
        let mut sdx = vec![0.0; g.c_in];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let drow = &d[(oy * g.out_w + ox) * g.c_out..][..g.c_out];
                if let Some(db) = &mut d_bias {
                    for (acc, gr) in db.iter_mut().zip(drow) {
                        *acc += gr;
                    }
                }
                let obase = (oy * g.out_w + ox) * off_c;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let k = ky * g.kw + kx;
                        let y =
                            (oy * g.stride + ky) as f64 - g.padding as f64 + ov[obase + 2 * k];
                        let x = (ox * g.stride + kx) as f64 - g.padding as f64
                            + ov[obase + 2 * k + 1];
                        let Some(t) = tap(g.h, g.w, y, x) else { continue };
                        let wbase = k * g.c_in * g.c_out;
                        if let Some(dw) = &mut d_weight {
                            sample(iv, g.c_in, &t, &mut samp);
                            for (ic, &s) in samp.iter().enumerate() {
                                if s == 0.0 {
                                    continue;
                                }
                                let row = &mut dw[wbase + ic * g.c_out..][..g.c_out];
                                for (acc, gr) in row.iter_mut().zip(drow) {
                                    *acc += s * gr;
                                }
                            }
                        }
                        if needs_projection {
                            // Per-channel upstream gradient through the sample.
                            samp.fill(0.0);
                            for (oc, &gr) in drow.iter().enumerate() {
                                let wrow = &wt[wbase + oc * g.c_in..][..g.c_in];
                                for (acc, w) in samp.iter_mut().zip(wrow) {
                                    *acc += gr * w;
                                }
                            }
                            if let Some(di) = &mut d_input {
                                for (idx, wgt) in t.corner.iter().zip(t.weight) {
                                    if *idx == usize::MAX || wgt == 0.0 {
                                        continue;
                                    }
                                    let row = &mut di[idx * g.c_in..][..g.c_in];
                                    for (acc, gch) in row.iter_mut().zip(&samp) {
                                        *acc += wgt * gch;
                                    }
                                }
                            }
                            if let Some(doff) = &mut d_off {
                                sample_derivs(iv, g.c_in, &t, &mut sdy, &mut sdx);
                                let gy: f64 = samp.iter().zip(&sdy).map(|(g, d)| g * d).sum();
                                let gx: f64 = samp.iter().zip(&sdx).map(|(g, d)| g * d).sum();
                                doff[obase + 2 * k] += gy;
                                doff[obase + 2 * k + 1] += gx;
                            }
                        }
                    }
                }
            }
        }
        if let Some(di) = d_input {
            sink.add(0, di);
        }
        if let Some(dw) = d_weight {
            sink.add(1, dw);
        }
        if let Some(db) = d_bias {
            sink.add(2, db);
        }
        if let Some(doff) = d_off {
            sink.add(3, doff);
        }
    })
}

/// Deformable convolution with a learned offset predictor: a standard
/// convolution over the same input emits `2*kh*kw` offset channels per output
/// location, which then steer the sampled convolution.
#[allow(clippy::too_many_arguments)]
pub fn deformable_conv2d(
    tape: &mut Tape,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    offset_weight: &Tensor,
    offset_bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let g = conv_geometry("deformable_conv2d", input, weight, bias, stride, padding)?;
    let expected = 2 * g.kh * g.kw;
    if offset_weight.shape().last() != Some(&expected) {
        return Err(TensorError::shape(
            "deformable_conv2d",
            format!(
                "offset predictor emits {:?} channels on axis 3, expected {expected}",
                offset_weight.shape().last()
            ),
        ));
    }
    let offsets = conv2d(tape, input, offset_weight, offset_bias, stride, padding)?;
    deform_conv2d_sampled(tape, input, weight, bias, &offsets, stride, padding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_offsets_reduce_to_standard_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::eval();
        let input = Tensor::from_fn(&[6, 6, 3], |_| rng.gen_range(-1.0..1.0));
        let weight = Tensor::from_fn(&[3, 3, 3, 4], |_| rng.gen_range(-1.0..1.0));
        let bias = Tensor::from_fn(&[4], |_| rng.gen_range(-1.0..1.0));
        let off_w = Tensor::zeros(&[3, 3, 3, 18]);
        let off_b = Tensor::zeros(&[18]);
        let plain = conv2d(&mut tape, &input, &weight, &bias, 1, 1).unwrap();
        let deform =
            deformable_conv2d(&mut tape, &input, &weight, &bias, &off_w, &off_b, 1, 1).unwrap();
        for (a, b) in plain.values().iter().zip(deform.values()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn doubles_channels_at_same_scale() {
        let mut tape = Tape::eval();
        let c = 4;
        let input = Tensor::filled(&[8, 8, c], 0.3);
        let weight = Tensor::filled(&[3, 3, c, 2 * c], 0.1);
        let bias = Tensor::zeros(&[2 * c]);
        let off_w = Tensor::zeros(&[3, 3, c, 18]);
        let off_b = Tensor::zeros(&[18]);
        let out =
            deformable_conv2d(&mut tape, &input, &weight, &bias, &off_w, &off_b, 1, 1).unwrap();
        assert_eq!(out.shape(), &[8, 8, 2 * c]);
    }

    #[test]
    fn out_of_plane_samples_read_zero() {
        let mut tape = Tape::eval();
        let input = t(&[2, 2, 1], &[1.0, 1.0, 1.0, 1.0]);
        let weight = t(&[1, 1, 1, 1], &[1.0]);
        let bias = t(&[1], &[0.0]);
        // Push every sample far outside the plane.
        let offsets = Tensor::filled(&[2, 2, 2], 100.0);
        let out =
            deform_conv2d_sampled(&mut tape, &input, &weight, &bias, &offsets, 1, 0).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fractional_offset_interpolates() {
        let mut tape = Tape::eval();
        let input = t(&[1, 2, 1], &[2.0, 4.0]);
        let weight = t(&[1, 1, 1, 1], &[1.0]);
        let bias = t(&[1], &[0.0]);
        // Sample halfway between the two pixels.
        let offsets = t(&[1, 2, 2], &[0.0, 0.5, 0.0, 0.0]);
        let out =
            deform_conv2d_sampled(&mut tape, &input, &weight, &bias, &offsets, 1, 0).unwrap();
        assert!((out.values()[0] - 3.0).abs() < 1e-12);
        assert!((out.values()[1] - 4.0).abs() < 1e-12);
    }
}
