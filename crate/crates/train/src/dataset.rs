//! Dataset directory layout and lossless round-trip I/O.
//!
//! `manifest.txt` holds a key=value header (regime, classes, count,
//! image_size, seed), a blank line, then one line per sample: the relative
//! image path, the label, and optionally a ground-truth box `x0 y0 x1 y1` or
//! a mask path. Images and masks are tensor files.

use std::path::Path;

use expnet_core::io::{read_tensor, write_tensor};
use expnet_core::Tensor;
use expnet_model::kv;

use crate::config::{Regime, SyntheticSpec};
use crate::error::TrainError;

#[derive(Debug, Clone)]
pub enum GroundTruth {
    None,
    /// Pixel box, inclusive-exclusive.
    Box { x0: usize, y0: usize, x1: usize, y1: usize },
    /// Mask tensor (image extents, one or more channels).
    Mask(Tensor),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
    pub gt: GroundTruth,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub regime: Regime,
    pub classes: usize,
    pub image_size: usize,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// The originating spec (per-class count recovered from the totals).
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            regime: self.regime,
            classes: self.classes,
            per_class: self.samples.len() / self.classes.max(1),
            image_size: self.image_size,
            noise: 0.0,
            seed: self.seed,
        }
    }
}

pub fn save(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), TrainError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images")).map_err(|e| TrainError::io(dir, e))?;
    let mut needs_masks = false;
    let mut lines = Vec::with_capacity(dataset.samples.len());
    for (i, sample) in dataset.samples.iter().enumerate() {
        let image_rel = format!("images/img_{i:05}.expt");
        write_tensor(dir.join(&image_rel), &sample.image)?;
        let line = match &sample.gt {
            GroundTruth::None => format!("{image_rel} {}", sample.label),
            GroundTruth::Box { x0, y0, x1, y1 } => {
                format!("{image_rel} {} {x0} {y0} {x1} {y1}", sample.label)
            }
            GroundTruth::Mask(mask) => {
                needs_masks = true;
                let mask_rel = format!("masks/mask_{i:05}.expt");
                if !dir.join("masks").exists() {
                    std::fs::create_dir_all(dir.join("masks"))
                        .map_err(|e| TrainError::io(dir, e))?;
                }
                write_tensor(dir.join(&mask_rel), mask)?;
                format!("{image_rel} {} {mask_rel}", sample.label)
            }
        };
        lines.push(line);
    }
    let _ = needs_masks;
    let header = [
        ("regime".to_string(), dataset.regime.to_string()),
        ("classes".to_string(), dataset.classes.to_string()),
        ("count".to_string(), dataset.samples.len().to_string()),
        ("image_size".to_string(), dataset.image_size.to_string()),
        ("seed".to_string(), dataset.seed.to_string()),
    ];
    let mut text = kv::render(&header);
    text.push('\n');
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(dir.join("manifest.txt"), text).map_err(|e| TrainError::io(dir, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<Dataset, TrainError> {
    let dir = dir.as_ref();
    let manifest = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest)
        .map_err(|_| TrainError::dataset(dir.display().to_string(), "no manifest"))?;
    let mut split = text.splitn(2, "\n\n");
    let header_text = split.next().unwrap_or("");
    let body = split
        .next()
        .ok_or_else(|| TrainError::dataset(manifest.display().to_string(), "missing sample section"))?;
    let mut header = kv::parse(header_text)
        .map_err(|e| TrainError::dataset(manifest.display().to_string(), e))?;
    let derr = |e: String| TrainError::dataset(manifest.display().to_string(), e);
    let regime: Regime = kv::take(&mut header, "regime")
        .map_err(derr)?
        .ok_or_else(|| derr("missing regime".into()))?;
    let classes: usize = kv::take(&mut header, "classes")
        .map_err(derr)?
        .ok_or_else(|| derr("missing classes".into()))?;
    let count: usize = kv::take(&mut header, "count")
        .map_err(derr)?
        .ok_or_else(|| derr("missing count".into()))?;
    let image_size: usize = kv::take(&mut header, "image_size")
        .map_err(derr)?
        .ok_or_else(|| derr("missing image_size".into()))?;
    let seed: u64 =
        kv::take(&mut header, "seed").map_err(derr)?.ok_or_else(|| derr("missing seed".into()))?;
    kv::reject_unknown(&header, "dataset manifest").map_err(derr)?;

    let mut samples = Vec::with_capacity(count);
    for raw in body.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(TrainError::dataset(
                manifest.display().to_string(),
                format!("sample {:?} is missing its label entry", fields.first().copied().unwrap_or("")),
            ));
        }
        let image_rel = fields[0];
        let label: usize = fields[1].parse().map_err(|_| {
            TrainError::dataset(
                manifest.display().to_string(),
                format!("sample {image_rel}: bad label {:?}", fields[1]),
            )
        })?;
        if label >= classes {
            return Err(TrainError::dataset(
                manifest.display().to_string(),
                format!("sample {image_rel}: label {label} out of {classes} classes"),
            ));
        }
        let gt = match fields.len() {
            2 => GroundTruth::None,
            3 => GroundTruth::Mask(read_tensor(dir.join(fields[2]))?),
            6 => {
                let mut coords = [0usize; 4];
                for (slot, f) in coords.iter_mut().zip(&fields[2..6]) {
                    *slot = f.parse().map_err(|_| {
                        TrainError::dataset(
                            manifest.display().to_string(),
                            format!("sample {image_rel}: bad box coordinate {f:?}"),
                        )
                    })?;
                }
                GroundTruth::Box { x0: coords[0], y0: coords[1], x1: coords[2], y1: coords[3] }
            }
            n => {
                return Err(TrainError::dataset(
                    manifest.display().to_string(),
                    format!("sample {image_rel}: {n} fields"),
                ))
            }
        };
        let image = read_tensor(dir.join(image_rel))?;
        if image.shape() != [image_size, image_size, 3] {
            return Err(TrainError::dataset(
                manifest.display().to_string(),
                format!("sample {image_rel}: image shape {:?}", image.shape()),
            ));
        }
        samples.push(Sample { image, label, gt });
    }
    if samples.len() != count {
        return Err(TrainError::dataset(
            manifest.display().to_string(),
            format!("manifest promises {count} samples, found {}", samples.len()),
        ));
    }
    Ok(Dataset { regime, classes, image_size, seed, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SyntheticSpec;
    use crate::synth::generate;

    #[test]
    fn roundtrip_is_lossless() {
        let spec = SyntheticSpec { classes: 2, per_class: 2, image_size: 16, ..Default::default() };
        let d = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&d, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.samples.len(), d.samples.len());
        for (a, b) in d.samples.iter().zip(&back.samples) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.image.values().iter().zip(b.image.values()) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
    }

    #[test]
    fn empty_directory_reports_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no manifest"), "{err}");
    }

    #[test]
    fn missing_label_entry_names_the_image() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.txt"),
            "regime=detail\nclasses=2\ncount=1\nimage_size=16\nseed=1\n\nimages/img_00000.expt\n",
        )
        .unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("img_00000"), "{err}");
    }

    #[test]
    fn missing_image_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.txt"),
            "regime=detail\nclasses=2\ncount=1\nimage_size=16\nseed=1\n\nimages/img_00000.expt 1\n",
        )
        .unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("img_00000"), "{err}");
    }
}
