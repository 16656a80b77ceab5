//! Neural firing fields: a coordinate-conditioned convolutional field whose
//! sine activations are steered by amplitude/frequency scalars pooled from
//! the stage feature map, band-limited per field stage. The sigmoid scores
//! are thresholded at 0.5 into a binary focus/context patch map; gradients
//! reach the scores through a straight-through estimator.

use std::cmp::Ordering;

use expnet_core::{ops, Tape, Tensor};

use crate::error::ModelError;
use crate::params::{Conv, NefirfParams};

/// Band assignment of a field stage's conditioning filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Low,
    Middle,
    High,
}

/// Binary patch decision for one stage, with its pre-threshold scores.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// p x p values in {0, 1}; 1 = focus. Carries straight-through gradient.
    pub binary: Tensor,
    /// p x p sigmoid outputs, strictly inside (0, 1).
    pub scores: Tensor,
    pub stage_index: usize,
}

impl SaliencyMap {
    pub fn p(&self) -> usize {
        self.binary.shape()[0]
    }

    /// Row-major focus flags.
    pub fn focus_flags(&self) -> Vec<bool> {
        self.binary.values().iter().map(|v| *v >= 0.5).collect()
    }

    /// Mean absolute score difference between 4-neighbor patches; a spatial
    /// coherence diagnostic, reported during training but never asserted.
    pub fn coherence(&self) -> f64 {
        let p = self.p();
        let s = self.scores.values();
        let mut total = 0.0;
        let mut count = 0usize;
        for y in 0..p {
            for x in 0..p {
                if x + 1 < p {
                    total += (s[y * p + x] - s[y * p + x + 1]).abs();
                    count += 1;
                }
                if y + 1 < p {
                    total += (s[y * p + x] - s[(y + 1) * p + x]).abs();
                    count += 1;
                }
            }
        }
        total / count.max(1) as f64
    }
}

/// Patch-center coordinate map: entry (i, j) holds (x_j, y_i) with
/// x_j = (2j+1)/p - 1, normalized to the open interval (-1, 1).
pub fn coordinate_grid(p: usize) -> Result<Tensor, ModelError> {
    if p < 2 {
        return Err(ModelError::invalid(format!(
            "coordinate grid needs p >= 2, got {p}"
        )));
    }
    let center = |i: usize| (2 * i + 1) as f64 / p as f64 - 1.0;
    Ok(Tensor::from_fn(&[p, p, 2], |flat| {
        let channel = flat % 2;
        let j = (flat / 2) % p;
        let i = flat / (2 * p);
        if channel == 0 {
            center(j)
        } else {
            center(i)
        }
    }))
}

/// Keep/drop decision per patch for a band filter over frequency values.
/// Ranks ascend by (frequency, row-major index); low drops the top
/// floor(0.2 N), middle drops floor(0.1 N) from each end, high drops the
/// bottom floor(0.2 N).
pub fn bandpass_keep(freq: &[f64], band: Band) -> Vec<bool> {
    let n = freq.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        freq[a].partial_cmp(&freq[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let (drop_low, drop_high) = match band {
        Band::Low => (0, n / 5),
        Band::Middle => (n / 10, n / 10),
        Band::High => (n / 5, 0),
    };
    let mut keep = vec![true; n];
    for &i in &order[..drop_low] {
        keep[i] = false;
    }
    for &i in &order[n - drop_high..] {
        keep[i] = false;
    }
    keep
}

/// Zeroes both channels of the filtered patches of a `[.., 2]` amplitude/
/// frequency map. Gradients flow only through surviving patches.
pub fn bandpass(tape: &mut Tape, ampfreq: &Tensor, band: Band) -> Result<Tensor, ModelError> {
    if ampfreq.shape().last() != Some(&2) {
        return Err(ModelError::invalid(format!(
            "amplitude/frequency map must have 2 trailing channels, got {:?}",
            ampfreq.shape()
        )));
    }
    let freq: Vec<f64> = ampfreq.values().iter().skip(1).step_by(2).copied().collect();
    let keep = bandpass_keep(&freq, band);
    let mut mask = Vec::with_capacity(ampfreq.numel());
    for k in keep {
        let v = if k { 1.0 } else { 0.0 };
        mask.push(v);
        mask.push(v);
    }
    Ok(ops::mul_mask(tape, ampfreq, &mask)?)
}

/// Patch-average pools the feature map to `p x p x C` and encodes it with a
/// 1x1 convolution into per-patch amplitude/frequency channels.
pub fn encode_condition(
    tape: &mut Tape,
    feature: &Tensor,
    k: usize,
    head: &Conv,
) -> Result<Tensor, ModelError> {
    let pooled = ops::patch_average_pool(tape, feature, k)?;
    Ok(head.apply(tape, &pooled, 1, 0)?)
}

/// Global-average pools the filtered map into the two activation scalars
/// (amplitude, frequency). Zeroed patches stay in the mean.
pub fn condition_to_scalars(
    tape: &mut Tape,
    filtered: &Tensor,
) -> Result<(Tensor, Tensor), ModelError> {
    let pooled = ops::global_average_pool(tape, filtered)?;
    let a = ops::gather_map(tape, &pooled, &[0], &[])?;
    let w = ops::gather_map(tape, &pooled, &[1], &[])?;
    Ok((a, w))
}

/// Thresholds scores at 0.5 (0.5 itself is focus) and repairs degenerate
/// maps: an all-focus map flips its lowest score (ties: largest row-major
/// index), an all-context map flips its highest (ties: smallest index).
pub fn binarize_with_repair(scores: &[f64]) -> Vec<f64> {
    let mut binary: Vec<f64> =
        scores.iter().map(|s| if *s >= 0.5 { 1.0 } else { 0.0 }).collect();
    let ones = binary.iter().filter(|v| **v == 1.0).count();
    if ones == binary.len() {
        let mut flip = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s <= scores[flip] {
                flip = i;
            }
        }
        binary[flip] = 0.0;
    } else if ones == 0 {
        let mut flip = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[flip] {
                flip = i;
            }
        }
        binary[flip] = 1.0;
    }
    binary
}

fn scalars_for_site(
    tape: &mut Tape,
    pooled_feature: &Tensor,
    head: &Conv,
    band: Band,
    band_pass: bool,
) -> Result<(Tensor, Tensor), ModelError> {
    let ampfreq = head.apply(tape, pooled_feature, 1, 0)?;
    let filtered = if band_pass { bandpass(tape, &ampfreq, band)? } else { ampfreq };
    condition_to_scalars(tape, &filtered)
}

/// Runs the six-layer field over the coordinate grid: low conv and sine,
/// four middle convs each with their own sine, a skip connection carrying
/// the low output into the high stage, a high-band sine gating the high
/// conv's input, then the high conv, sigmoid, and thresholding. The sines
/// sit between convolutions only: the final logit is unbounded, so scores
/// can actually saturate past the 0.5 threshold as the field trains.
pub fn nefirf_forward(
    tape: &mut Tape,
    feature: &Tensor,
    params: &NefirfParams,
    k: usize,
    stage_index: usize,
    band_pass: bool,
) -> Result<SaliencyMap, ModelError> {
    let [h, w, _c] = match feature.shape() {
        [h, w, c] => [*h, *w, *c],
        other => {
            return Err(ModelError::invalid(format!("feature must be [H,W,C], got {other:?}")))
        }
    };
    if h != w {
        return Err(ModelError::invalid(format!("feature must be square, got {h}x{w}")));
    }
    if k == 0 || h % k != 0 {
        return Err(ModelError::invalid(format!("extent {h} not divisible by patch size {k}")));
    }
    let p = h / k;
    let grid = coordinate_grid(p)?;
    let pooled = ops::patch_average_pool(tape, feature, k)?;

    let band_of = |site: usize| match site {
        0 => Band::Low,
        5 => Band::High,
        _ => Band::Middle,
    };

    let (a0, w0) = scalars_for_site(tape, &pooled, &params.heads[0], band_of(0), band_pass)?;
    let mut x = params.low.apply(tape, &grid, 1, 1)?;
    x = ops::sine(tape, &x, &a0, &w0)?;
    let low_out = x.clone();
    for (i, conv) in params.mid.iter().enumerate() {
        let site = 1 + i;
        let (a, w) = scalars_for_site(tape, &pooled, &params.heads[site], band_of(site), band_pass)?;
        x = conv.apply(tape, &x, 1, 1)?;
        x = ops::sine(tape, &x, &a, &w)?;
    }
    x = ops::add(tape, &x, &low_out)?;
    let (a5, w5) = scalars_for_site(tape, &pooled, &params.heads[5], band_of(5), band_pass)?;
    x = ops::sine(tape, &x, &a5, &w5)?;
    x = params.high.apply(tape, &x, 1, 1)?;
    let scores3 = ops::sigmoid(tape, &x)?;
    let scores = ops::reshape(tape, &scores3, &[p, p])?;
    let binary_values = binarize_with_repair(scores.values());
    let binary = ops::straight_through(tape, &scores, binary_values)?;
    Ok(SaliencyMap { binary, scores, stage_index })
}

/// Plain spatial-attention saliency used when the conditional sine toggle is
/// off: a 1x1 convolution over the pooled feature map, sigmoid, threshold.
pub fn spatial_attention_saliency(
    tape: &mut Tape,
    feature: &Tensor,
    head: &Conv,
    k: usize,
    stage_index: usize,
) -> Result<SaliencyMap, ModelError> {
    let pooled = ops::patch_average_pool(tape, feature, k)?;
    let p = pooled.shape()[0];
    let logits = head.apply(tape, &pooled, 1, 0)?;
    let scores3 = ops::sigmoid(tape, &logits)?;
    let scores = ops::reshape(tape, &scores3, &[p, p])?;
    let binary_values = binarize_with_repair(scores.values());
    let binary = ops::straight_through(tape, &scores, binary_values)?;
    Ok(SaliencyMap { binary, scores, stage_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coordinate_grid_center_rule() {
        let g = coordinate_grid(2).unwrap();
        assert_eq!(g.at(&[0, 0, 0]), -0.5);
        assert_eq!(g.at(&[0, 1, 0]), 0.5);
        let g4 = coordinate_grid(4).unwrap();
        let xs: Vec<f64> = (0..4).map(|j| g4.at(&[0, j, 0])).collect();
        assert_eq!(xs, vec![-0.75, -0.25, 0.25, 0.75]);
        assert!(coordinate_grid(1).is_err());
    }

    #[test]
    fn coordinate_grid_transpose_symmetry() {
        let p = 5;
        let g = coordinate_grid(p).unwrap();
        for i in 0..p {
            for j in 0..p {
                assert_eq!(g.at(&[i, j, 0]), g.at(&[j, i, 1]));
            }
        }
    }

    #[test]
    fn bandpass_twenty_percent_rule() {
        // Frequencies 1..=10: low drops the patches holding 9 and 10.
        let freq: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let keep = bandpass_keep(&freq, Band::Low);
        assert_eq!(keep.iter().filter(|k| **k).count(), 8);
        assert!(!keep[8] && !keep[9]);
    }

    #[test]
    fn bandpass_middle_drops_both_ends() {
        let freq: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let keep = bandpass_keep(&freq, Band::Middle);
        assert!(!keep[0] && !keep[9]);
        assert_eq!(keep.iter().filter(|k| **k).count(), 8);
    }

    #[test]
    fn bandpass_floor_means_small_maps_pass_through() {
        let freq = vec![4.0, 1.0, 3.0, 2.0];
        assert!(bandpass_keep(&freq, Band::Low).iter().all(|k| *k));
    }

    #[test]
    fn bandpass_tie_break_is_row_major() {
        // All equal: the later indices count as higher rank and get dropped
        // by the low filter.
        let freq = vec![1.0; 10];
        let keep = bandpass_keep(&freq, Band::Low);
        assert_eq!(keep, vec![true, true, true, true, true, true, true, true, false, false]);
    }

    #[test]
    fn condition_scalars_include_zeroed_patches_in_mean() {
        let mut tape = Tape::eval();
        // One surviving patch (a=4, w=8), three zeroed.
        let map = Tensor::new(&[2, 2, 2], vec![4.0, 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (a, w) = condition_to_scalars(&mut tape, &map).unwrap();
        assert_relative_eq!(a.item(), 1.0);
        assert_relative_eq!(w.item(), 2.0);
        let zero = Tensor::zeros(&[2, 2, 2]);
        let (a0, w0) = condition_to_scalars(&mut tape, &zero).unwrap();
        assert_eq!((a0.item(), w0.item()), (0.0, 0.0));
    }

    #[test]
    fn repair_flips_largest_index_when_everything_is_focus() {
        let scores = vec![0.5; 9];
        let b = binarize_with_repair(&scores);
        assert_eq!(b.iter().filter(|v| **v == 1.0).count(), 8);
        assert_eq!(b[8], 0.0);
    }

    #[test]
    fn repair_flips_smallest_index_when_everything_is_context() {
        let scores = vec![0.2; 4];
        let b = binarize_with_repair(&scores);
        assert_eq!(b[0], 1.0);
        assert_eq!(b.iter().filter(|v| **v == 1.0).count(), 1);
    }

    #[test]
    fn threshold_is_inclusive_at_half() {
        let b = binarize_with_repair(&[0.5, 0.49]);
        assert_eq!(b, vec![1.0, 0.0]);
    }
}
