//! Metric properties against brute-force pixel-counting oracles.

use expnet_eval::{
    dice, gt_known, iou_masks, mask_to_bbox, maxbox_acc, maxbox_acc_with, upsample_saliency,
    BBox, MaxBoxVersion, PixelMask,
};
use expnet_core::Tensor;
use expnet_model::SaliencyMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> PixelMask {
    let data = (0..h * w).map(|_| rng.gen_bool(density)).collect();
    PixelMask::new(data, h, w).unwrap()
}

/// Integer-arithmetic oracle for IoU and Dice.
fn count_overlap(a: &PixelMask, b: &PixelMask) -> (usize, usize, usize, usize) {
    let mut inter = 0;
    let mut union = 0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (pa, pb) = (a.get(y, x), b.get(y, x));
            inter += (pa && pb) as usize;
            union += (pa || pb) as usize;
        }
    }
    (inter, union, a.count(), b.count())
}

#[test]
fn iou_and_dice_match_pixel_counting_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for round in 0..1000 {
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let density = rng.gen_range(0.0..1.0);
        let a = random_mask(&mut rng, h, w, density);
        let b = random_mask(&mut rng, h, w, density);
        let (inter, union, ca, cb) = count_overlap(&a, &b);
        let want_iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let want_dice =
            if ca + cb == 0 { 1.0 } else { 2.0 * inter as f64 / (ca + cb) as f64 };
        assert_eq!(iou_masks(&a, &b).unwrap(), want_iou, "round {round}");
        assert_eq!(dice(&a, &b).unwrap(), want_dice, "round {round}");
    }
}

#[test]
fn dice_is_a_function_of_iou() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..100 {
        let a = random_mask(&mut rng, 9, 9, 0.4);
        let b = random_mask(&mut rng, 9, 9, 0.4);
        let i = iou_masks(&a, &b).unwrap();
        let d = dice(&a, &b).unwrap();
        assert!((d - 2.0 * i / (1.0 + i)).abs() <= 1e-12);
    }
}

#[test]
fn gt_known_is_monotone_in_the_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..60 {
        let x0 = rng.gen_range(0..20);
        let y0 = rng.gen_range(0..20);
        preds.push(BBox::new(x0, y0, x0 + rng.gen_range(1..10), y0 + rng.gen_range(1..10)).unwrap());
        let gx0 = rng.gen_range(0..20);
        let gy0 = rng.gen_range(0..20);
        gts.push(BBox::new(gx0, gy0, gx0 + rng.gen_range(1..10), gy0 + rng.gen_range(1..10)).unwrap());
    }
    let mut previous = 1.0f64;
    for t in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
        let acc = gt_known(&preds, &gts, t).unwrap();
        assert!(acc <= previous + 1e-12, "threshold {t}: {acc} > {previous}");
        previous = acc;
    }
}

#[test]
fn upsample_preserves_foreground_ratio_and_inverts_by_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..50 {
        let p = 4;
        let mut flags = vec![0.0; p * p];
        for f in flags.iter_mut() {
            *f = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        }
        if flags.iter().all(|f| *f == 0.0) {
            flags[0] = 1.0;
        }
        if flags.iter().all(|f| *f == 1.0) {
            flags[p * p - 1] = 0.0;
        }
        let scores: Vec<f64> = flags.iter().map(|f| 0.5 + 0.4 * (f - 0.5)).collect();
        let map = SaliencyMap {
            binary: Tensor::new(&[p, p], flags.clone()).unwrap(),
            scores: Tensor::new(&[p, p], scores).unwrap(),
            stage_index: 1,
        };
        let image_size = 32;
        let mask = upsample_saliency(&map, 4, image_size).unwrap();
        let patch_area = (image_size / p) * (image_size / p);
        let want = flags.iter().filter(|f| **f == 1.0).count() * patch_area;
        assert_eq!(mask.count(), want);
        // Pooling each block back recovers the original map exactly.
        for py in 0..p {
            for px in 0..p {
                let f = image_size / p;
                let all: Vec<bool> = (0..f * f)
                    .map(|i| mask.get(py * f + i / f, px * f + i % f))
                    .collect();
                let expect = flags[py * p + px] == 1.0;
                assert!(all.iter().all(|v| *v == expect));
            }
        }
    }
}

#[test]
fn upsample_rejects_unknown_stage() {
    let map = SaliencyMap {
        binary: Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        scores: Tensor::new(&[2, 2], vec![0.9, 0.1, 0.1, 0.9]).unwrap(),
        stage_index: 4,
    };
    assert!(upsample_saliency(&map, 4, 16).is_err());
}

#[test]
fn v2_with_single_threshold_and_no_components_equals_v1() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let size = 16;
    for _ in 0..100 {
        let n = rng.gen_range(1..6);
        let mut maps = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..n {
            maps.push((0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>());
            let x0 = rng.gen_range(0..8);
            let y0 = rng.gen_range(0..8);
            gts.push(
                BBox::new(x0, y0, x0 + rng.gen_range(2..8), y0 + rng.gen_range(2..8)).unwrap(),
            );
        }
        let v1 = maxbox_acc(&maps, &gts, size, MaxBoxVersion::V1).unwrap();
        let v2_as_v1 = maxbox_acc_with(&maps, &gts, size, &[0.5], false).unwrap();
        assert_eq!(v1, v2_as_v1);
    }
}

#[test]
fn uniform_score_map_scores_by_full_image_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let size = 20;
    let mut maps = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..40 {
        maps.push(vec![0.6; size * size]);
        let x0 = rng.gen_range(0..10);
        let y0 = rng.gen_range(0..10);
        gts.push(BBox::new(x0, y0, x0 + rng.gen_range(2..11), y0 + rng.gen_range(2..11)).unwrap());
    }
    // Direct computation of the expected value: the box is the full image at
    // every non-empty threshold, so V1 counts ground truths whose area is at
    // least half the image.
    let want = gts
        .iter()
        .filter(|g| g.area() as f64 / (size * size) as f64 >= 0.5)
        .count() as f64
        / gts.len() as f64;
    let v1 = maxbox_acc(&maps, &gts, size, MaxBoxVersion::V1).unwrap();
    assert_eq!(v1, want);
}

#[test]
fn full_mask_bbox_is_whole_image() {
    let mask = PixelMask::from_fn(10, 10, |_, _| true);
    assert_eq!(mask_to_bbox(&mask).unwrap(), BBox::full_image(10));
}
