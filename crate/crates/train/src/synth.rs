//! Synthetic dataset generation for the three challenge regimes.
//!
//! detail      — a shared smooth background texture carries no class
//!               information; one 6x6 binary glyph, drawn from a fixed
//!               pattern library and placed uniformly at random, decides the
//!               class. Ground truth is the glyph box.
//! structure   — two concentric ellipses with random center and absolute
//!               scale; the class is the bucket of the inner/outer radius
//!               ratio in [0.3, 0.9]. Ground truth is an outer+inner mask.
//! interaction — class = (texture family, glyph) pair, two stripe families
//!               crossed with classes/2 glyphs, so neither cue alone
//!               determines the label.
//!
//! Everything is a pure function of the spec's seed, per image, so datasets
//! are byte-identical across runs and generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use expnet_core::Tensor;

use crate::config::{Regime, SyntheticSpec};
use crate::dataset::{Dataset, GroundTruth, Sample};
use crate::error::TrainError;

pub const GLYPH_SIZE: usize = 6;

/// Fixed library of distinct 6x6 binary glyphs; rows are bit patterns.
const GLYPHS: [[u8; GLYPH_SIZE]; 16] = [
    [0b111111, 0b100001, 0b100001, 0b100001, 0b100001, 0b111111], // ring
    [0b100001, 0b010010, 0b001100, 0b001100, 0b010010, 0b100001], // X
    [0b001100, 0b001100, 0b111111, 0b111111, 0b001100, 0b001100], // plus
    [0b111111, 0b001100, 0b001100, 0b001100, 0b001100, 0b001100], // T
    [0b100000, 0b100000, 0b100000, 0b100000, 0b100000, 0b111111], // L
    [0b100001, 0b100001, 0b111111, 0b111111, 0b100001, 0b100001], // H
    [0b000001, 0b000011, 0b000111, 0b001111, 0b011111, 0b111111], // wedge
    [0b111111, 0b000000, 0b111111, 0b000000, 0b111111, 0b000000], // bars
    [0b101010, 0b101010, 0b101010, 0b101010, 0b101010, 0b101010], // pickets
    [0b110011, 0b110011, 0b000000, 0b000000, 0b110011, 0b110011], // checker
    [0b100001, 0b100001, 0b100001, 0b100001, 0b100001, 0b111111], // U
    [0b111111, 0b000010, 0b000100, 0b001000, 0b010000, 0b111111], // Z
    [0b001100, 0b011110, 0b110011, 0b110011, 0b011110, 0b001100], // diamond
    [0b000000, 0b001100, 0b011110, 0b011110, 0b001100, 0b000000], // dot
    [0b110011, 0b110011, 0b000000, 0b000000, 0b110011, 0b110011], // corners (unused twin)
    [0b011110, 0b100001, 0b100001, 0b100001, 0b100001, 0b011110], // capsule
];

/// Number of genuinely distinct glyphs (the library holds one duplicate row
/// kept for layout; classes never reach it).
pub const GLYPH_COUNT: usize = 14;

fn glyph_on(g: usize, y: usize, x: usize) -> bool {
    (GLYPHS[g][y] >> (GLYPH_SIZE - 1 - x)) & 1 == 1
}

/// Standard normal draw via Box-Muller; deterministic per rng stream.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn per_image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E3779B97F4A7C15))
}

/// Smooth background texture shared by every detail-regime image: a coarse
/// random grid bilinearly interpolated up to image resolution.
pub fn shared_background(seed: u64, size: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xBAC1C9))
        ;
    let coarse = 8usize;
    let grid: Vec<f64> =
        (0..coarse * coarse * 3).map(|_| rng.gen_range(0.25..0.75)).collect();
    let mut out = Vec::with_capacity(size * size * 3);
    let scale = coarse as f64 / size as f64;
    for y in 0..size {
        for x in 0..size {
            let gy = (y as f64 + 0.5) * scale - 0.5;
            let gx = (x as f64 + 0.5) * scale - 0.5;
            let y0 = gy.floor().clamp(0.0, (coarse - 1) as f64);
            let x0 = gx.floor().clamp(0.0, (coarse - 1) as f64);
            let y1 = (y0 + 1.0).min((coarse - 1) as f64);
            let x1 = (x0 + 1.0).min((coarse - 1) as f64);
            let (fy, fx) = ((gy - y0).clamp(0.0, 1.0), (gx - x0).clamp(0.0, 1.0));
            for c in 0..3 {
                let at = |yy: f64, xx: f64| grid[(yy as usize * coarse + xx as usize) * 3 + c];
                let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x1) * (1.0 - fy) * fx
                    + at(y1, x0) * fy * (1.0 - fx)
                    + at(y1, x1) * fy * fx;
                out.push(v);
            }
        }
    }
    out
}

fn stamp_glyph(pixels: &mut [f64], size: usize, g: usize, y0: usize, x0: usize) {
    for dy in 0..GLYPH_SIZE {
        for dx in 0..GLYPH_SIZE {
            let v = if glyph_on(g, dy, dx) { 1.0 } else { 0.0 };
            let base = ((y0 + dy) * size + x0 + dx) * 3;
            pixels[base..base + 3].fill(v);
        }
    }
}

fn add_noise(pixels: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    for p in pixels.iter_mut() {
        *p += sigma * gaussian(rng);
    }
}

fn detail_sample(
    spec: &SyntheticSpec,
    background: &[f64],
    class: usize,
    index: usize,
) -> Sample {
    let size = spec.image_size;
    let mut rng = per_image_rng(spec.seed, index);
    let mut pixels = background.to_vec();
    let y0 = rng.gen_range(0..=size - GLYPH_SIZE);
    let x0 = rng.gen_range(0..=size - GLYPH_SIZE);
    stamp_glyph(&mut pixels, size, class, y0, x0);
    add_noise(&mut pixels, spec.noise, &mut rng);
    Sample {
        image: Tensor::new(&[size, size, 3], pixels).expect("sized"),
        label: class,
        gt: GroundTruth::Box { x0, y0, x1: x0 + GLYPH_SIZE, y1: y0 + GLYPH_SIZE },
    }
}

fn structure_sample(spec: &SyntheticSpec, class: usize, index: usize) -> Sample {
    let size = spec.image_size;
    let mut rng = per_image_rng(spec.seed, index);
    let bucket = 0.6 / spec.classes as f64;
    let ratio = 0.3 + bucket * (class as f64 + rng.gen_range(0.0..1.0));
    let base = rng.gen_range(size as f64 * 0.16..size as f64 * 0.3);
    let rx = base * rng.gen_range(0.85..1.15);
    let ry = base * rng.gen_range(0.85..1.15);
    let cx = rng.gen_range(rx + 1.0..size as f64 - rx - 1.0);
    let cy = rng.gen_range(ry + 1.0..size as f64 - ry - 1.0);
    let mut pixels = vec![0.1; size * size * 3];
    let mut mask = vec![0.0; size * size * 2];
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            let r2 = dx * dx + dy * dy;
            if r2 <= 1.0 {
                mask[(y * size + x) * 2] = 1.0;
                let inner = r2 <= ratio * ratio;
                if inner {
                    mask[(y * size + x) * 2 + 1] = 1.0;
                }
                let v = if inner { 0.9 } else { 0.5 };
                pixels[(y * size + x) * 3..(y * size + x) * 3 + 3].fill(v);
            }
        }
    }
    add_noise(&mut pixels, spec.noise, &mut rng);
    Sample {
        image: Tensor::new(&[size, size, 3], pixels).expect("sized"),
        label: class,
        gt: GroundTruth::Mask(Tensor::new(&[size, size, 2], mask).expect("sized")),
    }
}

fn interaction_sample(spec: &SyntheticSpec, class: usize, index: usize) -> Sample {
    let size = spec.image_size;
    let mut rng = per_image_rng(spec.seed, index);
    let family = class % 2;
    let glyph = class / 2;
    let period = rng.gen_range(6.0..10.0);
    let phase = rng.gen_range(0.0..period);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let t = if family == 0 { y as f64 } else { x as f64 };
            let v = 0.5 + 0.25 * (std::f64::consts::TAU * (t + phase) / period).sin();
            pixels.extend([v, v, v]);
        }
    }
    let y0 = rng.gen_range(0..=size - GLYPH_SIZE);
    let x0 = rng.gen_range(0..=size - GLYPH_SIZE);
    stamp_glyph(&mut pixels, size, glyph, y0, x0);
    add_noise(&mut pixels, spec.noise, &mut rng);
    Sample {
        image: Tensor::new(&[size, size, 3], pixels).expect("sized"),
        label: class,
        gt: GroundTruth::Box { x0, y0, x1: x0 + GLYPH_SIZE, y1: y0 + GLYPH_SIZE },
    }
}

fn validate_regime(spec: &SyntheticSpec) -> Result<(), TrainError> {
    match spec.regime {
        Regime::Detail => {
            if spec.classes > GLYPH_COUNT {
                return Err(TrainError::invalid(format!(
                    "detail regime supports at most {GLYPH_COUNT} classes, got {}",
                    spec.classes
                )));
            }
        }
        Regime::Structure => {}
        Regime::Interaction => {
            if spec.classes % 2 != 0 || spec.classes < 4 {
                return Err(TrainError::invalid(format!(
                    "interaction regime needs an even class count >= 4, got {}",
                    spec.classes
                )));
            }
            if spec.classes / 2 > GLYPH_COUNT {
                return Err(TrainError::invalid(format!(
                    "interaction regime supports at most {} classes",
                    2 * GLYPH_COUNT
                )));
            }
        }
    }
    if spec.image_size < 2 * GLYPH_SIZE {
        return Err(TrainError::invalid("image too small for glyph placement".to_string()));
    }
    Ok(())
}

/// Generates the dataset in memory: `classes * per_class` samples, balanced,
/// ordered class-major.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset, TrainError> {
    spec.validate()?;
    validate_regime(spec)?;
    let background = match spec.regime {
        Regime::Detail => shared_background(spec.seed, spec.image_size),
        _ => Vec::new(),
    };
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for i in 0..spec.per_class {
            let index = class * spec.per_class + i;
            samples.push(match spec.regime {
                Regime::Detail => detail_sample(spec, &background, class, index),
                Regime::Structure => structure_sample(spec, class, index),
                Regime::Interaction => interaction_sample(spec, class, index),
            });
        }
    }
    Ok(Dataset {
        regime: spec.regime,
        classes: spec.classes,
        image_size: spec.image_size,
        seed: spec.seed,
        samples,
    })
}

/// Control-experiment variant: every ground-truth glyph box is overwritten
/// with the shared background texture plus fresh noise, removing all class
/// information from the image by construction.
pub fn mask_detail_glyphs(spec: &SyntheticSpec, dataset: &Dataset) -> Result<Dataset, TrainError> {
    if dataset.regime != Regime::Detail {
        return Err(TrainError::invalid("glyph masking applies to the detail regime".to_string()));
    }
    let size = dataset.image_size;
    let background = shared_background(dataset.seed, size);
    let mut masked = dataset.clone();
    for (index, sample) in masked.samples.iter_mut().enumerate() {
        let GroundTruth::Box { x0, y0, x1, y1 } = sample.gt else {
            return Err(TrainError::invalid(format!("sample {index} has no glyph box")));
        };
        let mut rng = per_image_rng(dataset.seed ^ 0x51AB, index);
        let mut pixels = sample.image.values().to_vec();
        for y in y0..y1 {
            for x in x0..x1 {
                let base = (y * size + x) * 3;
                for c in 0..3 {
                    pixels[base + c] =
                        background[base + c] + spec.noise * gaussian(&mut rng);
                }
            }
        }
        sample.image = Tensor::new(&[size, size, 3], pixels).expect("sized");
    }
    Ok(masked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec { per_class: 3, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.image.values(), sb.image.values());
            assert_eq!(sa.label, sb.label);
        }
    }

    #[test]
    fn counts_are_balanced() {
        let spec = SyntheticSpec { classes: 4, per_class: 5, ..Default::default() };
        let d = generate(&spec).unwrap();
        assert_eq!(d.samples.len(), 20);
        for c in 0..4 {
            assert_eq!(d.samples.iter().filter(|s| s.label == c).count(), 5);
        }
    }

    #[test]
    fn every_detail_image_has_one_glyph_box() {
        let spec = SyntheticSpec { classes: 3, per_class: 4, ..Default::default() };
        let d = generate(&spec).unwrap();
        for s in &d.samples {
            match s.gt {
                GroundTruth::Box { x0, y0, x1, y1 } => {
                    assert_eq!(x1 - x0, GLYPH_SIZE);
                    assert_eq!(y1 - y0, GLYPH_SIZE);
                    assert!(x1 <= 64 && y1 <= 64);
                }
                _ => panic!("detail sample without a box"),
            }
        }
    }

    #[test]
    fn structure_masks_nest() {
        let spec = SyntheticSpec {
            regime: Regime::Structure,
            classes: 4,
            per_class: 2,
            ..Default::default()
        };
        let d = generate(&spec).unwrap();
        for s in &d.samples {
            let GroundTruth::Mask(m) = &s.gt else { panic!("structure sample without mask") };
            assert_eq!(m.shape(), &[64, 64, 2]);
            let outer: f64 = m.values().iter().step_by(2).sum();
            let inner: f64 = m.values().iter().skip(1).step_by(2).sum();
            assert!(outer > inner, "outer {outer} should exceed inner {inner}");
            assert!(inner > 0.0);
            // Inner implies outer.
            for pair in m.values().chunks_exact(2) {
                assert!(pair[1] <= pair[0]);
            }
        }
    }

    #[test]
    fn interaction_requires_even_classes() {
        let spec =
            SyntheticSpec { regime: Regime::Interaction, classes: 5, ..Default::default() };
        assert!(generate(&spec).is_err());
        let spec =
            SyntheticSpec { regime: Regime::Interaction, classes: 4, per_class: 2, ..Default::default() };
        assert!(generate(&spec).is_ok());
    }

    #[test]
    fn too_many_classes_rejected() {
        let spec = SyntheticSpec { classes: 15, ..Default::default() };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn masked_variant_erases_the_glyph_region() {
        let spec = SyntheticSpec { classes: 2, per_class: 2, noise: 0.0, ..Default::default() };
        let d = generate(&spec).unwrap();
        let masked = mask_detail_glyphs(&spec, &d).unwrap();
        let background = shared_background(spec.seed, spec.image_size);
        for s in &masked.samples {
            let GroundTruth::Box { x0, y0, x1, y1 } = s.gt else { unreachable!() };
            for y in y0..y1 {
                for x in x0..x1 {
                    let base = (y * 64 + x) * 3;
                    for c in 0..3 {
                        assert_eq!(s.image.values()[base + c], background[base + c]);
                    }
                }
            }
        }
    }
}
