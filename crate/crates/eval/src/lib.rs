//! Scores weakly-supervised localization and segmentation from the
//! classifier's intermediate saliency maps: mask/box extraction, IoU, Dice,
//! GT-Known, Top-1 localization, and threshold-sweep box accuracies.

pub mod error;
pub mod mask;
pub mod metrics;
pub mod report;

pub use error::EvalError;
pub use mask::{mask_to_bbox, upsample_saliency, upsample_scores, BBox, PixelMask};
pub use metrics::{
    dice, gt_known, iou, iou_boxes, iou_masks, maxbox_acc, maxbox_acc_with, top1_loc,
    MaxBoxVersion, Region,
};
