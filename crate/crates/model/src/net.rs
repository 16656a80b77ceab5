//! The assembled classifier: stem, residual stages interleaved with gaze
//! shifts, global pooling, embedding fusion, and the linear head. Trained
//! end-to-end from image-level labels with cross-entropy.

use expnet_core::{ops, Tape, Tensor};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::gaze::{cross_attention, gaze_shift_forward, SaliencyMode};
use crate::nefirf::SaliencyMap;
use crate::params::{DownsampleParams, ExpNetParams, FuseParams, StageParams};

#[derive(Debug)]
pub struct ExpNetOutput {
    pub logits: Tensor,
    /// Context impressions in stage order; stages-1 entries for the full
    /// model, empty when the context branch or focal separation is off.
    pub impressions: Vec<Tensor>,
    /// Saliency maps in stage order; empty when focal separation is off.
    pub saliency_maps: Vec<SaliencyMap>,
    /// Global average of the final stage feature.
    pub focal_embedding: Tensor,
}

/// Residual stage: pre-activation blocks, spatial extent preserved.
/// Downsampling belongs to the gaze shifts between stages, not the stage.
pub fn residual_stage_forward(
    tape: &mut Tape,
    f: &Tensor,
    stage: &StageParams,
) -> Result<Tensor, ModelError> {
    let mut x = f.clone();
    for block in &stage.blocks {
        let mut t = block.norm1.apply(tape, &x)?;
        t = ops::relu(tape, &t)?;
        t = block.conv1.apply(tape, &t, 1, 1)?;
        t = block.norm2.apply(tape, &t)?;
        t = ops::relu(tape, &t)?;
        t = block.conv2.apply(tape, &t, 1, 1)?;
        x = ops::add(tape, &x, &t)?;
    }
    Ok(x)
}

/// Combines the final focal embedding with the memorized impressions.
pub fn fuse_embeddings(
    tape: &mut Tape,
    focal: &Tensor,
    impressions: &[Tensor],
    fuse: &FuseParams,
) -> Result<Tensor, ModelError> {
    if impressions.is_empty() {
        return Err(ModelError::invalid("fuse_embeddings: empty impression list".to_string()));
    }
    match fuse {
        FuseParams::MlpAdd { adapters } => {
            if adapters.len() != impressions.len() + 1 {
                return Err(ModelError::invalid(format!(
                    "fuse_embeddings: {} adapters for {} sources",
                    adapters.len(),
                    impressions.len() + 1
                )));
            }
            let mut terms = Vec::with_capacity(adapters.len());
            terms.push(adapters[0].apply_vec(tape, focal)?);
            for (adapter, imp) in adapters[1..].iter().zip(impressions) {
                terms.push(adapter.apply_vec(tape, imp)?);
            }
            let refs: Vec<&Tensor> = terms.iter().collect();
            Ok(ops::add_n(tape, &refs)?)
        }
        FuseParams::CrossAttention { focal_proj, attn } => {
            let projected = focal_proj.apply_vec(tape, focal)?;
            let width = projected.numel();
            let query = ops::reshape(tape, &projected, &[1, width])?;
            let rows: Vec<Tensor> = impressions
                .iter()
                .map(|imp| ops::reshape(tape, imp, &[1, imp.numel()]))
                .collect::<Result<_, _>>()?;
            let refs: Vec<&Tensor> = rows.iter().collect();
            let stack = ops::concat_rows(tape, &refs)?;
            let attended = cross_attention(tape, &query, &stack, attn)?;
            Ok(ops::add(tape, &projected, &attended)?)
        }
    }
}

/// Full forward pass.
pub fn expnet_forward(
    tape: &mut Tape,
    image: &Tensor,
    params: &ExpNetParams,
    config: &ModelConfig,
    mode: SaliencyMode,
) -> Result<ExpNetOutput, ModelError> {
    let expected = [config.image_size, config.image_size, 3];
    if image.shape() != expected {
        return Err(ModelError::invalid(format!(
            "image shape {:?} does not match configured {:?}",
            image.shape(),
            expected
        )));
    }
    let mut f = params.stem.apply(tape, image, 1, 1)?;
    let mut impressions = Vec::new();
    let mut saliency_maps = Vec::new();
    for (s, stage) in params.stages.iter().enumerate() {
        f = residual_stage_forward(tape, &f, stage)?;
        if s + 1 < config.stages {
            match &params.shifts[s] {
                DownsampleParams::Gaze(gaze) => {
                    let out = gaze_shift_forward(
                        tape,
                        &f,
                        gaze,
                        config.patch_k(s),
                        s + 1,
                        mode,
                        config.toggles.band_pass,
                    )?;
                    if let Some(imp) = out.impression {
                        impressions.push(imp);
                    }
                    saliency_maps.push(out.saliency);
                    f = out.focal_next;
                }
                DownsampleParams::Plain(conv) => {
                    let pooled = ops::max_pool2d(tape, &f, 2, 2)?;
                    f = conv.apply(tape, &pooled, 1, 1)?;
                }
            }
        }
    }
    let focal_embedding = ops::global_average_pool(tape, &f)?;
    let fused = if impressions.is_empty() {
        // Ablated variants with no context branch classify from the focal
        // embedding alone, through its own adapter.
        match &params.fuse {
            FuseParams::MlpAdd { adapters } => adapters[0].apply_vec(tape, &focal_embedding)?,
            FuseParams::CrossAttention { focal_proj, .. } => {
                focal_proj.apply_vec(tape, &focal_embedding)?
            }
        }
    } else {
        fuse_embeddings(tape, &focal_embedding, &impressions, &params.fuse)?
    };
    let logits = params.head.apply_vec(tape, &fused)?;
    Ok(ExpNetOutput { logits, impressions, saliency_maps, focal_embedding })
}

/// Cross-entropy of the logits against the image-level label. No auxiliary
/// losses.
pub fn training_loss(
    tape: &mut Tape,
    output: &ExpNetOutput,
    label: usize,
) -> Result<Tensor, ModelError> {
    Ok(ops::cross_entropy(tape, &output.logits, label)?)
}
