//! Gaze shift: decomposes a stage feature map into a downsampled focal
//! feature (spatial organization of the focus patches) and a context
//! impression embedding (cross attention of focal queries over context
//! keys/values), steered by the stage's saliency map.

use expnet_core::{ops, Tape, Tensor};

use crate::error::ModelError;
use crate::nefirf::{nefirf_forward, spatial_attention_saliency, SaliencyMap};
use crate::params::{AttnParams, Conv, DeformParams, GazeShiftParams, SaliencyParams};

/// Which map steers the focus branch. Training and inference binarize with
/// the straight-through estimator; gradient checks use the smooth scores so
/// the finite-difference oracle sees the differentiable path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyMode {
    Hard,
    Soft,
}

/// Feature map tiled into flattened patches: row r of `tokens` is the k x k x C
/// tile of patch r in row-major patch order.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub tokens: Tensor,
    pub p: usize,
    pub k: usize,
    pub channels: usize,
}

/// Token rows with their originating patch positions (row-major patch ids).
#[derive(Debug, Clone)]
pub struct TokenSet {
    pub tokens: Tensor,
    pub positions: Vec<usize>,
}

/// Output triple of one gaze shift.
#[derive(Debug)]
pub struct StageOutput {
    /// Next-stage feature: half the spatial extent, double the channels.
    pub focal_next: Tensor,
    /// Context impression embedding; absent when the context branch is off.
    pub impression: Option<Tensor>,
    pub saliency: SaliencyMap,
}

fn square_extent(op: &str, f: &Tensor) -> Result<(usize, usize), ModelError> {
    match f.shape() {
        [h, w, c] if h == w => Ok((*h, *c)),
        other => Err(ModelError::invalid(format!(
            "{op}: feature must be square [H,H,C], got {other:?}"
        ))),
    }
}

/// Lossless tiling into p^2 patches of size k.
pub fn patchify(tape: &mut Tape, f: &Tensor, k: usize) -> Result<PatchGrid, ModelError> {
    let (h, c) = square_extent("patchify", f)?;
    if k == 0 || h % k != 0 {
        return Err(ModelError::invalid(format!(
            "patchify: extent {h} not divisible by patch size {k}"
        )));
    }
    let p = h / k;
    let mut map = Vec::with_capacity(h * h * c);
    for patch in 0..p * p {
        let (py, px) = (patch / p, patch % p);
        for dy in 0..k {
            for dx in 0..k {
                let (y, x) = (py * k + dy, px * k + dx);
                for ch in 0..c {
                    map.push((y * h + x) * c + ch);
                }
            }
        }
    }
    let tokens = ops::gather_map(tape, f, &map, &[p * p, k * k * c])?;
    Ok(PatchGrid { tokens, p, k, channels: c })
}

/// Inverse of [`patchify`]: reassembles the original feature map bit-exactly.
pub fn reassemble(tape: &mut Tape, grid: &PatchGrid) -> Result<Tensor, ModelError> {
    let (p, k, c) = (grid.p, grid.k, grid.channels);
    let h = p * k;
    let mut map = vec![0usize; h * h * c];
    for patch in 0..p * p {
        let (py, px) = (patch / p, patch % p);
        for dy in 0..k {
            for dx in 0..k {
                let (y, x) = (py * k + dy, px * k + dx);
                let src = (patch * k * k + dy * k + dx) * c;
                let dst = (y * h + x) * c;
                for ch in 0..c {
                    map[dst + ch] = src + ch;
                }
            }
        }
    }
    Ok(ops::gather_map(tape, &grid.tokens, &map, &[h, h, c])?)
}

/// Partitions the patch rows into focus and context sets by the binary map.
pub fn split_patches(
    tape: &mut Tape,
    grid: &PatchGrid,
    saliency: &SaliencyMap,
) -> Result<(TokenSet, TokenSet), ModelError> {
    if saliency.binary.shape() != [grid.p, grid.p] {
        return Err(ModelError::invalid(format!(
            "split_patches: saliency {:?} does not match patch grid {}x{}",
            saliency.binary.shape(),
            grid.p,
            grid.p
        )));
    }
    let flags = saliency.focus_flags();
    let focal: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
    let context: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
    if focal.is_empty() || context.is_empty() {
        return Err(ModelError::invalid(
            "split_patches: degenerate saliency map (one side empty)".to_string(),
        ));
    }
    let focal_tokens = ops::gather_rows(tape, &grid.tokens, &focal)?;
    let context_tokens = ops::gather_rows(tape, &grid.tokens, &context)?;
    Ok((
        TokenSet { tokens: focal_tokens, positions: focal },
        TokenSet { tokens: context_tokens, positions: context },
    ))
}

/// Nearest-neighbor expansion of a p x p map onto the feature plane.
fn upsample_patch_map(
    tape: &mut Tape,
    map2d: &Tensor,
    k: usize,
) -> Result<Tensor, ModelError> {
    let p = map2d.shape()[0];
    let h = p * k;
    let mut map = Vec::with_capacity(h * h);
    for y in 0..h {
        for x in 0..h {
            map.push((y / k) * p + x / k);
        }
    }
    Ok(ops::gather_map(tape, map2d, &map, &[h, h])?)
}

/// The zero-padding step of spatial organization: focus patches stay at
/// their original positions, everything else becomes zero.
pub fn focal_canvas(
    tape: &mut Tape,
    f: &Tensor,
    mask2d: &Tensor,
    k: usize,
) -> Result<Tensor, ModelError> {
    square_extent("focal_canvas", f)?;
    if mask2d.values().iter().all(|v| *v == 0.0) {
        return Err(ModelError::invalid("spatial_organize: empty focal set".to_string()));
    }
    let mask_hw = upsample_patch_map(tape, mask2d, k)?;
    Ok(ops::mul_bcast_spatial(tape, f, &mask_hw)?)
}

/// Re-places the focus patches on a zero-filled canvas at their original
/// positions, downsamples with 2-stride max pooling, and doubles the
/// channels with a deformable convolution.
pub fn spatial_organize(
    tape: &mut Tape,
    f: &Tensor,
    mask2d: &Tensor,
    k: usize,
    deform: &DeformParams,
) -> Result<Tensor, ModelError> {
    let canvas = focal_canvas(tape, f, mask2d, k)?;
    let pooled = ops::max_pool2d(tape, &canvas, 2, 2)?;
    Ok(ops::deformable_conv2d(
        tape,
        &pooled,
        &deform.main.weight,
        &deform.main.bias,
        &deform.offsets.weight,
        &deform.offsets.bias,
        1,
        1,
    )?)
}

/// Conditional position encodings: the focus and context embeddings are
/// scattered back to the patch grid (concatenated as the condition), a 3x3
/// generator convolution produces the encoding map, and each token reads the
/// encoding at its own position.
pub fn conditional_position_encoding(
    tape: &mut Tape,
    focal: &TokenSet,
    context: &TokenSet,
    generator: &Conv,
    p: usize,
) -> Result<(Tensor, Tensor), ModelError> {
    let d = focal.tokens.shape()[1];
    let cat = ops::concat_rows(tape, &[&focal.tokens, &context.tokens])?;
    let mut row_of_cell = vec![usize::MAX; p * p];
    for (row, &pos) in focal.positions.iter().chain(&context.positions).enumerate() {
        row_of_cell[pos] = row;
    }
    let mut map = Vec::with_capacity(p * p * d);
    for cell in 0..p * p {
        let row = row_of_cell[cell];
        for ch in 0..d {
            map.push(if row == usize::MAX { usize::MAX } else { row * d + ch });
        }
    }
    let grid = ops::gather_map(tape, &cat, &map, &[p, p, d])?;
    let enc = generator.apply(tape, &grid, 1, 1)?;
    let enc_rows = ops::reshape(tape, &enc, &[p * p, d])?;
    let focal_pe = ops::gather_rows(tape, &enc_rows, &focal.positions)?;
    let context_pe = ops::gather_rows(tape, &enc_rows, &context.positions)?;
    Ok((focal_pe, context_pe))
}

/// Multi-head scaled dot-product attention with focal queries over context
/// keys/values, output projection, then a mean over the focal axis. No class
/// token is involved.
pub fn cross_attention(
    tape: &mut Tape,
    focal: &Tensor,
    context: &Tensor,
    params: &AttnParams,
) -> Result<Tensor, ModelError> {
    let q = params.query.apply(tape, focal)?;
    let k = params.key.apply(tape, context)?;
    let v = params.value.apply(tape, context)?;
    let hidden = q.shape()[1];
    if hidden % params.heads != 0 {
        return Err(ModelError::invalid(format!(
            "cross_attention: hidden {hidden} not divisible by {} heads",
            params.heads
        )));
    }
    let dh = hidden / params.heads;
    let mut head_outputs = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = ops::slice_cols(tape, &q, lo, hi)?;
        let kh = ops::slice_cols(tape, &k, lo, hi)?;
        let vh = ops::slice_cols(tape, &v, lo, hi)?;
        let kt = ops::transpose(tape, &kh)?;
        let scores = ops::matmul(tape, &qh, &kt)?;
        let scaled = ops::scale(tape, &scores, 1.0 / (dh as f64).sqrt())?;
        let weights = ops::softmax(tape, &scaled, 1)?;
        head_outputs.push(ops::matmul(tape, &weights, &vh)?);
    }
    let refs: Vec<&Tensor> = head_outputs.iter().collect();
    let merged = ops::concat_cols(tape, &refs)?;
    let projected = params.output.apply(tape, &merged)?;
    Ok(ops::global_average_pool(tape, &projected)?)
}

/// Per-head attention weight matrices, for property tests and inspection.
pub fn attention_weights(
    tape: &mut Tape,
    focal: &Tensor,
    context: &Tensor,
    params: &AttnParams,
) -> Result<Vec<Tensor>, ModelError> {
    let q = params.query.apply(tape, focal)?;
    let k = params.key.apply(tape, context)?;
    let hidden = q.shape()[1];
    let dh = hidden / params.heads;
    let mut all = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = ops::slice_cols(tape, &q, lo, hi)?;
        let kh = ops::slice_cols(tape, &k, lo, hi)?;
        let kt = ops::transpose(tape, &kh)?;
        let scores = ops::matmul(tape, &qh, &kt)?;
        let scaled = ops::scale(tape, &scores, 1.0 / (dh as f64).sqrt())?;
        all.push(ops::softmax(tape, &scaled, 1)?);
    }
    Ok(all)
}

/// Full gaze shift over one stage feature map.
pub fn gaze_shift_forward(
    tape: &mut Tape,
    f: &Tensor,
    params: &GazeShiftParams,
    k: usize,
    stage_index: usize,
    mode: SaliencyMode,
    band_pass: bool,
) -> Result<StageOutput, ModelError> {
    let saliency = match &params.saliency {
        SaliencyParams::Field(nf) => nefirf_forward(tape, f, nf, k, stage_index, band_pass)?,
        SaliencyParams::Spatial(head) => {
            spatial_attention_saliency(tape, f, head, k, stage_index)?
        }
    };
    let mask = match mode {
        SaliencyMode::Hard => &saliency.binary,
        SaliencyMode::Soft => &saliency.scores,
    };
    let focal_next = spatial_organize(tape, f, mask, k, &params.deform)?;
    let impression = match &params.context {
        None => None,
        Some(ctx) => {
            let grid = patchify(tape, f, k)?;
            let (focal_set, context_set) = split_patches(tape, &grid, &saliency)?;
            let focal_emb = ctx.token_proj.apply(tape, &focal_set.tokens)?;
            let context_emb = ctx.token_proj.apply(tape, &context_set.tokens)?;
            let (focal_pe, context_pe) = conditional_position_encoding(
                tape,
                &TokenSet { tokens: focal_emb.clone(), positions: focal_set.positions.clone() },
                &TokenSet {
                    tokens: context_emb.clone(),
                    positions: context_set.positions.clone(),
                },
                &ctx.pos_gen,
                grid.p,
            )?;
            let focal_in = ops::add(tape, &focal_emb, &focal_pe)?;
            let context_in = ops::add(tape, &context_emb, &context_pe)?;
            Some(cross_attention(tape, &focal_in, &context_in, &ctx.attn)?)
        }
    };
    Ok(StageOutput { focal_next, impression, saliency })
}
