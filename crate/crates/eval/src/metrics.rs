//! Localization and segmentation metrics.

use expnet_core::par;

use crate::error::EvalError;
use crate::mask::{mask_to_bbox, BBox, PixelMask};

/// Overlap region of either kind; mixing kinds in one comparison is an error.
#[derive(Debug, Clone)]
pub enum Region {
    Box(BBox),
    Mask(PixelMask),
}

pub fn iou(a: &Region, b: &Region) -> Result<f64, EvalError> {
    match (a, b) {
        (Region::Box(a), Region::Box(b)) => Ok(iou_boxes(a, b)),
        (Region::Mask(a), Region::Mask(b)) => iou_masks(a, b),
        _ => Err(EvalError::invalid("iou of mixed region kinds".to_string())),
    }
}

pub fn iou_boxes(a: &BBox, b: &BBox) -> f64 {
    let ix = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0));
    let iy = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0));
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Mask intersection over union; two empty masks agree perfectly.
pub fn iou_masks(a: &PixelMask, b: &PixelMask) -> Result<f64, EvalError> {
    if !a.same_extents(b) {
        return Err(EvalError::invalid(format!(
            "mask extents differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Dice coefficient; two empty masks agree perfectly.
pub fn dice(a: &PixelMask, b: &PixelMask) -> Result<f64, EvalError> {
    if !a.same_extents(b) {
        return Err(EvalError::invalid(format!(
            "mask extents differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let inter: usize =
        a.pixels().iter().zip(b.pixels()).filter(|(x, y)| **x && **y).count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

fn check_aligned(len_a: usize, len_b: usize, what: &str) -> Result<(), EvalError> {
    if len_a != len_b {
        return Err(EvalError::invalid(format!("{what}: {len_a} vs {len_b} entries")));
    }
    Ok(())
}

/// Fraction of predictions overlapping ground truth at or above the IoU
/// threshold, regardless of predicted class.
pub fn gt_known(preds: &[BBox], gts: &[BBox], iou_threshold: f64) -> Result<f64, EvalError> {
    check_aligned(preds.len(), gts.len(), "gt_known box lists")?;
    if preds.is_empty() {
        return Err(EvalError::invalid("gt_known: empty box lists".to_string()));
    }
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| iou_boxes(p, g) >= iou_threshold)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction that is both correctly classified and localized at the IoU
/// threshold.
pub fn top1_loc(
    preds: &[BBox],
    gts: &[BBox],
    class_preds: &[usize],
    labels: &[usize],
    iou_threshold: f64,
) -> Result<f64, EvalError> {
    check_aligned(preds.len(), gts.len(), "top1_loc box lists")?;
    check_aligned(class_preds.len(), labels.len(), "top1_loc class lists")?;
    check_aligned(preds.len(), class_preds.len(), "top1_loc boxes vs classes")?;
    if preds.is_empty() {
        return Err(EvalError::invalid("top1_loc: empty lists".to_string()));
    }
    let hits = preds
        .iter()
        .zip(gts)
        .zip(class_preds.iter().zip(labels))
        .filter(|((p, g), (c, l))| c == l && iou_boxes(p, g) >= iou_threshold)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxBoxVersion {
    V1,
    V2,
}

/// Largest 4-connected component of a thresholded map; ties resolve to the
/// component discovered first in row-major scan order.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut best_id = usize::MAX;
    let mut best_size = 0usize;
    let mut next = 0usize;
    let mut queue = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let mut size = 0usize;
        queue.push(start);
        label[start] = id;
        while let Some(i) = queue.pop() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut push = |j: usize| {
                if mask[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        if size > best_size {
            best_size = size;
            best_id = id;
        }
    }
    label.iter().map(|&l| l == best_id).collect()
}

/// Threshold-sweep box accuracy over upsampled score maps. At each threshold
/// the foreground becomes a box (whole foreground, or the largest connected
/// component when `use_components`); images whose thresholded mask is empty
/// score zero at that threshold.
pub fn maxbox_acc_with(
    score_maps: &[Vec<f64>],
    gts: &[BBox],
    image_size: usize,
    iou_thresholds: &[f64],
    use_components: bool,
) -> Result<f64, EvalError> {
    check_aligned(score_maps.len(), gts.len(), "maxbox score maps vs boxes")?;
    if score_maps.is_empty() {
        return Err(EvalError::invalid("maxbox: empty inputs".to_string()));
    }
    for (i, m) in score_maps.iter().enumerate() {
        if m.len() != image_size * image_size {
            return Err(EvalError::invalid(format!(
                "score map {i} has {} entries for image size {image_size}",
                m.len()
            )));
        }
    }
    let taus: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    // Per image: IoU with ground truth at every threshold.
    let per_image: Vec<Vec<f64>> = par::map_indexed(score_maps, |i, scores| {
        taus.iter()
            .map(|&tau| {
                let mask: Vec<bool> = scores.iter().map(|s| *s >= tau).collect();
                let selected = if use_components {
                    largest_component(&mask, image_size, image_size)
                } else {
                    mask
                };
                let pm = PixelMask::new(selected, image_size, image_size).expect("sized");
                match mask_to_bbox(&pm) {
                    Ok(bbox) => iou_boxes(&bbox, &gts[i]),
                    Err(_) => -1.0,
                }
            })
            .collect()
    });
    let n = score_maps.len() as f64;
    let mut best = 0.0f64;
    for (ti, _) in taus.iter().enumerate() {
        let mut mean_over_thresholds = 0.0;
        for &t in iou_thresholds {
            let hits = per_image.iter().filter(|ious| ious[ti] >= t).count();
            mean_over_thresholds += hits as f64 / n;
        }
        best = best.max(mean_over_thresholds / iou_thresholds.len() as f64);
    }
    Ok(best)
}

pub fn maxbox_acc(
    score_maps: &[Vec<f64>],
    gts: &[BBox],
    image_size: usize,
    version: MaxBoxVersion,
) -> Result<f64, EvalError> {
    match version {
        MaxBoxVersion::V1 => maxbox_acc_with(score_maps, gts, image_size, &[0.5], false),
        MaxBoxVersion::V2 => {
            maxbox_acc_with(score_maps, gts, image_size, &[0.3, 0.5, 0.7], true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_iou_examples() {
        let a = BBox::new(0, 0, 2, 2).unwrap();
        assert_eq!(iou_boxes(&a, &a), 1.0);
        let b = BBox::new(5, 5, 7, 7).unwrap();
        assert_eq!(iou_boxes(&a, &b), 0.0);
        let c = BBox::new(1, 1, 3, 3).unwrap();
        let got = iou_boxes(&a, &c);
        assert!((got - 1.0 / 7.0).abs() <= 1e-12, "got {got}");
    }

    #[test]
    fn mixed_kinds_rejected() {
        let b = Region::Box(BBox::new(0, 0, 1, 1).unwrap());
        let m = Region::Mask(PixelMask::from_fn(2, 2, |_, _| true));
        assert!(iou(&b, &m).is_err());
    }

    #[test]
    fn dice_examples_and_empty_agreement() {
        let a = PixelMask::from_fn(4, 4, |y, _| y < 2);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = PixelMask::from_fn(4, 4, |y, _| y >= 2);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let empty = PixelMask::from_fn(4, 4, |_, _| false);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou_masks(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn gt_known_boundary_counts_exactly_half() {
        // IoU exactly 0.5: box of area 2 against one of its halves... use
        // [0,0,2,1] vs [0,0,1,1]: inter 1, union 2.
        let pred = BBox::new(0, 0, 2, 1).unwrap();
        let gt = BBox::new(0, 0, 1, 1).unwrap();
        assert_eq!(iou_boxes(&pred, &gt), 0.5);
        let acc = gt_known(&[pred], &[gt], 0.5).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn top1_requires_both_class_and_box() {
        let b = BBox::new(0, 0, 4, 4).unwrap();
        let gtk = gt_known(&[b, b], &[b, b], 0.5).unwrap();
        assert_eq!(gtk, 1.0);
        let t1 = top1_loc(&[b, b], &[b, b], &[0, 1], &[1, 1], 0.5).unwrap();
        assert_eq!(t1, 0.5);
    }

    #[test]
    fn maxbox_perfect_indicator_scores_one() {
        let size = 16;
        let gt = BBox::new(4, 6, 9, 12).unwrap();
        let scores: Vec<f64> = (0..size * size)
            .map(|i| {
                let (y, x) = (i / size, i % size);
                if x >= gt.x0 && x < gt.x1 && y >= gt.y0 && y < gt.y1 {
                    0.9
                } else {
                    0.05
                }
            })
            .collect();
        let v1 = maxbox_acc(&[scores.clone()], &[gt], size, MaxBoxVersion::V1).unwrap();
        let v2 = maxbox_acc(&[scores], &[gt], size, MaxBoxVersion::V2).unwrap();
        assert_eq!(v1, 1.0);
        assert_eq!(v2, 1.0);
    }

    #[test]
    fn maxbox_empty_threshold_scores_zero_for_that_tau() {
        // Uniform low scores: every tau above 0.2 gives an empty mask; the
        // full-image box at low taus decides the score.
        let size = 8;
        let scores = vec![0.2; size * size];
        let gt = BBox::new(0, 0, 8, 4).unwrap();
        // Full-image box IoU = 0.5, counted at threshold 0.5.
        let v1 = maxbox_acc(&[scores], &[gt], size, MaxBoxVersion::V1).unwrap();
        assert_eq!(v1, 1.0);
    }

    #[test]
    fn component_rule_prefers_largest_blob() {
        let size = 8;
        // Two blobs: a 2x2 at top-left, a 3x3 at bottom-right.
        let mut scores = vec![0.0; size * size];
        for y in 0..2 {
            for x in 0..2 {
                scores[y * size + x] = 1.0;
            }
        }
        for y in 5..8 {
            for x in 5..8 {
                scores[y * size + x] = 1.0;
            }
        }
        let gt = BBox::new(5, 5, 8, 8).unwrap();
        let v2 = maxbox_acc_with(&[scores.clone()], &[gt], size, &[0.5], true).unwrap();
        assert_eq!(v2, 1.0, "largest component is the 3x3 blob");
        let v1 = maxbox_acc_with(&[scores], &[gt], size, &[0.5], false).unwrap();
        assert_eq!(v1, 0.0, "whole-foreground hull spans both blobs");
    }
}
