//! Matrix and sequence primitives: products, transposes, row/column
//! restructuring, and index-map gathers.

use crate::error::TensorError;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorData};

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(TensorError::shape(op, format!("expected rank 2, got {other:?}"))),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, w) in orow.iter_mut().zip(brow) {
                *o += x * w;
            }
        }
    }
    out
}

/// `a^T @ b` where a is stored `[m,k]` and b `[m,n]`: row-axpy accumulation.
fn matmul_tn_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &x) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// `a [m,k] @ b [k,n] -> [m,n]`.
pub fn matmul(tape: &mut Tape, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(TensorError::shape(
            "matmul",
            format!("inner axis differs: lhs axis 1 is {k}, rhs axis 0 is {k2}"),
        ));
    }
    let values = matmul_raw(a.values(), b.values(), m, k, n);
    let data = TensorData::new(&[m, n], values)?;
    let (ad, bd) = (a.data.clone(), b.data.clone());
    tape.record("matmul", data, &[a, b], move |d, sink| {
        if sink.wants(0) {
            // d_a = d @ b^T; transposing b keeps the inner loop an axpy.
            let bt = transpose_raw(bd.values(), k, n);
            sink.add(0, matmul_raw(d, &bt, m, n, k));
        }
        if sink.wants(1) {
            // d_b = a^T @ d
            sink.add(1, matmul_tn_raw(ad.values(), d, m, k, n));
        }
    })
}

pub fn transpose(tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = dims2("transpose", x)?;
    let data = TensorData::new(&[n, m], transpose_raw(x.values(), m, n))?;
    tape.record("transpose", data, &[x], move |d, sink| {
        sink.add(0, transpose_raw(d, n, m));
    })
}

/// Adds a length-`n` bias to every row of an `[m,n]` matrix.
pub fn add_row_bias(tape: &mut Tape, x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = dims2("add_row_bias", x)?;
    if bias.shape() != [n] {
        return Err(TensorError::shape(
            "add_row_bias",
            format!("bias shape {:?} does not match row width {n}", bias.shape()),
        ));
    }
    let values = x
        .values()
        .chunks_exact(n)
        .flat_map(|row| row.iter().zip(bias.values()).map(|(v, b)| v + b))
        .collect();
    let data = TensorData::new(&[m, n], values)?;
    tape.record("add_row_bias", data, &[x, bias], move |d, sink| {
        sink.add(0, d.to_vec());
        if sink.wants(1) {
            let mut db = vec![0.0; n];
            for row in d.chunks_exact(n) {
                for (acc, g) in db.iter_mut().zip(row) {
                    *acc += g;
                }
            }
            sink.add(1, db);
        }
    })
}

/// Column slice `[m, c1-c0]` of an `[m,n]` matrix.
pub fn slice_cols(
    tape: &mut Tape,
    x: &Tensor,
    c0: usize,
    c1: usize,
) -> Result<Tensor, TensorError> {
    let (m, n) = dims2("slice_cols", x)?;
    if c0 >= c1 || c1 > n {
        return Err(TensorError::arg("slice_cols", format!("range {c0}..{c1} of width {n}")));
    }
    let w = c1 - c0;
    let values = x
        .values()
        .chunks_exact(n)
        .flat_map(|row| row[c0..c1].iter().copied())
        .collect();
    let data = TensorData::new(&[m, w], values)?;
    tape.record("slice_cols", data, &[x], move |d, sink| {
        let mut dx = vec![0.0; m * n];
        for (r, row) in d.chunks_exact(w).enumerate() {
            dx[r * n + c0..r * n + c1].copy_from_slice(row);
        }
        sink.add(0, dx);
    })
}

/// Concatenates matrices with equal row counts along the column axis.
pub fn concat_cols(tape: &mut Tape, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::arg("concat_cols", "empty part list"));
    }
    let (m, _) = dims2("concat_cols", parts[0])?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pm, pn) = dims2("concat_cols", p)?;
        if pm != m {
            return Err(TensorError::shape(
                "concat_cols",
                format!("axis 0 differs: {pm} vs {m}"),
            ));
        }
        widths.push(pn);
    }
    let total: usize = widths.iter().sum();
    let mut values = Vec::with_capacity(m * total);
    for r in 0..m {
        for (p, &w) in parts.iter().zip(&widths) {
            values.extend_from_slice(&p.values()[r * w..(r + 1) * w]);
        }
    }
    let data = TensorData::new(&[m, total], values)?;
    let widths_bk = widths.clone();
    tape.record("concat_cols", data, parts, move |d, sink| {
        let mut offset = 0;
        for (slot, &w) in widths_bk.iter().enumerate() {
            if sink.wants(slot) {
                let mut part = Vec::with_capacity(m * w);
                for r in 0..m {
                    part.extend_from_slice(&d[r * total + offset..r * total + offset + w]);
                }
                sink.add(slot, part);
            }
            offset += w;
        }
    })
}

/// Concatenates matrices with equal column counts along the row axis.
pub fn concat_rows(tape: &mut Tape, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::arg("concat_rows", "empty part list"));
    }
    let (_, n) = dims2("concat_rows", parts[0])?;
    let mut heights = Vec::with_capacity(parts.len());
    let mut values = Vec::new();
    for p in parts {
        let (pm, pn) = dims2("concat_rows", p)?;
        if pn != n {
            return Err(TensorError::shape(
                "concat_rows",
                format!("axis 1 differs: {pn} vs {n}"),
            ));
        }
        heights.push(pm);
        values.extend_from_slice(p.values());
    }
    let total: usize = heights.iter().sum();
    let data = TensorData::new(&[total, n], values)?;
    tape.record("concat_rows", data, parts, move |d, sink| {
        let mut offset = 0;
        for (slot, &h) in heights.iter().enumerate() {
            if sink.wants(slot) {
                sink.add(slot, d[offset * n..(offset + h) * n].to_vec());
            }
            offset += h;
        }
    })
}

/// Selects rows of an `[m,n]` matrix by index, in the given order. Indices
/// may repeat; backward scatter-adds.
pub fn gather_rows(tape: &mut Tape, x: &Tensor, rows: &[usize]) -> Result<Tensor, TensorError> {
    let (m, n) = dims2("gather_rows", x)?;
    if rows.is_empty() {
        return Err(TensorError::arg("gather_rows", "empty row selection"));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
        return Err(TensorError::arg("gather_rows", format!("row {bad} out of {m}")));
    }
    let mut values = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        values.extend_from_slice(&x.values()[r * n..(r + 1) * n]);
    }
    let data = TensorData::new(&[rows.len(), n], values)?;
    let rows = rows.to_vec();
    tape.record("gather_rows", data, &[x], move |d, sink| {
        let mut dx = vec![0.0; m * n];
        for (out_r, &r) in rows.iter().enumerate() {
            for (acc, g) in dx[r * n..(r + 1) * n].iter_mut().zip(&d[out_r * n..(out_r + 1) * n])
            {
                *acc += g;
            }
        }
        sink.add(0, dx);
    })
}

/// Arbitrary element gather: `out[i] = x[map[i]]`, with `usize::MAX` entries
/// producing zeros. Covers patch tiling, nearest-neighbor upsampling, and
/// grid scatter/gather; backward scatter-adds through the map.
pub fn gather_map(
    tape: &mut Tape,
    x: &Tensor,
    map: &[usize],
    out_shape: &[usize],
) -> Result<Tensor, TensorError> {
    let out_len: usize = out_shape.iter().product();
    if map.len() != out_len {
        return Err(TensorError::shape(
            "gather_map",
            format!("map has {} entries, output needs {out_len}", map.len()),
        ));
    }
    let n = x.numel();
    if let Some(&bad) = map.iter().find(|&&i| i != usize::MAX && i >= n) {
        return Err(TensorError::arg("gather_map", format!("source index {bad} out of {n}")));
    }
    let xv = x.values();
    let values = map
        .iter()
        .map(|&i| if i == usize::MAX { 0.0 } else { xv[i] })
        .collect();
    let data = TensorData::new(out_shape, values)?;
    let map = map.to_vec();
    tape.record("gather_map", data, &[x], move |d, sink| {
        let mut dx = vec![0.0; n];
        for (&i, g) in map.iter().zip(d) {
            if i != usize::MAX {
                dx[i] += g;
            }
        }
        sink.add(0, dx);
    })
}

/// Reinterprets the value order under a new shape with the same element count.
pub fn reshape(tape: &mut Tape, x: &Tensor, shape: &[usize]) -> Result<Tensor, TensorError> {
    let out_len: usize = shape.iter().product();
    if out_len != x.numel() {
        return Err(TensorError::shape(
            "reshape",
            format!("{:?} ({} values) to {:?} ({out_len})", x.shape(), x.numel(), shape),
        ));
    }
    let data = TensorData::new(shape, x.values().to_vec())?;
    tape.record("reshape", data, &[x], move |d, sink| {
        sink.add(0, d.to_vec());
    })
}
