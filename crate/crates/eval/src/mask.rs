//! Pixel masks, bounding boxes, and saliency upsampling.

use expnet_core::Tensor;
use expnet_model::SaliencyMap;

use crate::error::EvalError;

/// Binary mask at image resolution, with its provenance.
#[derive(Debug, Clone)]
pub struct PixelMask {
    data: Vec<bool>,
    height: usize,
    width: usize,
    /// Stage index the mask came from (0 = external ground truth).
    pub stage: usize,
    /// Score threshold that produced it.
    pub threshold: f64,
}

impl PixelMask {
    pub fn new(data: Vec<bool>, height: usize, width: usize) -> Result<Self, EvalError> {
        if data.len() != height * width {
            return Err(EvalError::invalid(format!(
                "mask has {} entries for {height}x{width}",
                data.len()
            )));
        }
        Ok(PixelMask { data, height, width, stage: 0, threshold: 0.5 })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        PixelMask { data, height, width, stage: 0, threshold: 0.5 }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn same_extents(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Axis-aligned box in pixel coordinates, inclusive-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self, EvalError> {
        if x0 >= x1 || y0 >= y1 {
            return Err(EvalError::invalid(format!("degenerate box ({x0},{y0},{x1},{y1})")));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn full_image(size: usize) -> Self {
        BBox { x0: 0, y0: 0, x1: size, y1: size }
    }
}

/// Tight bounding box of the nonzero pixels. Empty masks are an error;
/// callers that need a prediction anyway fall back to the full-image box
/// and record the fallback.
pub fn mask_to_bbox(mask: &PixelMask) -> Result<BBox, EvalError> {
    let (mut x0, mut y0) = (usize::MAX, usize::MAX);
    let (mut x1, mut y1) = (0usize, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(EvalError::EmptyMask);
    }
    Ok(BBox { x0, y0, x1, y1 })
}

fn upsample_factor(p: usize, image_size: usize) -> Result<usize, EvalError> {
    if p == 0 || image_size % p != 0 {
        return Err(EvalError::invalid(format!(
            "image size {image_size} is not a multiple of the patch grid {p}"
        )));
    }
    Ok(image_size / p)
}

/// Nearest-neighbor expansion of a stage's binary saliency map to image
/// resolution: each patch fills its square pixel footprint. The patch grid
/// spans the whole (downsampled) stage feature, so the footprint already
/// accounts for the stage's cumulative spatial reduction.
pub fn upsample_saliency(
    map: &SaliencyMap,
    stage_count: usize,
    image_size: usize,
) -> Result<PixelMask, EvalError> {
    if map.stage_index == 0 || map.stage_index >= stage_count {
        return Err(EvalError::invalid(format!(
            "unknown stage {} for a {stage_count}-stage model",
            map.stage_index
        )));
    }
    let p = map.p();
    let f = upsample_factor(p, image_size)?;
    let flags = map.focus_flags();
    let mut mask = PixelMask::from_fn(image_size, image_size, |y, x| {
        flags[(y / f) * p + x / f]
    });
    mask.stage = map.stage_index;
    Ok(mask)
}

/// Nearest-neighbor expansion of a p x p score map to image resolution.
pub fn upsample_scores(scores: &Tensor, image_size: usize) -> Result<Vec<f64>, EvalError> {
    let p = match scores.shape() {
        [a, b] if a == b => *a,
        other => {
            return Err(EvalError::invalid(format!("score map must be square, got {other:?}")))
        }
    };
    let f = upsample_factor(p, image_size)?;
    let s = scores.values();
    let mut out = Vec::with_capacity(image_size * image_size);
    for y in 0..image_size {
        for x in 0..image_size {
            out.push(s[(y / f) * p + x / f]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_of_single_pixel_is_tight() {
        let mask = PixelMask::from_fn(8, 8, |y, x| y == 3 && x == 5);
        assert_eq!(mask_to_bbox(&mask).unwrap(), BBox { x0: 5, y0: 3, x1: 6, y1: 4 });
    }

    #[test]
    fn bbox_of_full_mask_is_full_image() {
        let mask = PixelMask::from_fn(8, 8, |_, _| true);
        assert_eq!(mask_to_bbox(&mask).unwrap(), BBox::full_image(8));
    }

    #[test]
    fn bbox_hull_of_two_corners() {
        let mask = PixelMask::from_fn(8, 8, |y, x| (y == 0 && x == 0) || (y == 7 && x == 7));
        assert_eq!(mask_to_bbox(&mask).unwrap(), BBox { x0: 0, y0: 0, x1: 8, y1: 8 });
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mask = PixelMask::from_fn(4, 4, |_, _| false);
        assert!(matches!(mask_to_bbox(&mask), Err(EvalError::EmptyMask)));
    }

    #[test]
    fn upsample_is_blockwise() {
        let scores = Tensor::new(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let up = upsample_scores(&scores, 8).unwrap();
        assert_eq!(up.len(), 64);
        assert_eq!(up[0], 0.1);
        assert_eq!(up[7], 0.2);
        assert_eq!(up[8 * 7 + 1], 0.3);
        assert_eq!(up[63], 0.4);
        // Every 4x4 block is constant.
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(up[y * 8 + x], scores.values()[(y / 4) * 2 + x / 4]);
            }
        }
    }
}
