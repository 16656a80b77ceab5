//! Checkpoints: a directory holding a key=value manifest (config fields,
//! epoch, seed) and one tensor file per named parameter.

use std::path::Path;

use expnet_core::io::{read_tensor, write_tensor};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::kv;
use crate::params::ExpNetParams;

#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ExpNetParams,
    pub epoch: usize,
    pub seed: u64,
}

fn ckpt_err(path: &Path, detail: impl Into<String>) -> ModelError {
    ModelError::Checkpoint { path: path.display().to_string(), detail: detail.into() }
}

pub fn save(
    dir: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ExpNetParams,
    epoch: usize,
    seed: u64,
) -> Result<(), ModelError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| ckpt_err(dir, e.to_string()))?;
    let mut pairs = config.to_pairs();
    pairs.push(("epoch".into(), epoch.to_string()));
    pairs.push(("seed".into(), seed.to_string()));
    std::fs::write(dir.join("manifest.txt"), kv::render(&pairs))
        .map_err(|e| ckpt_err(dir, e.to_string()))?;
    for (name, tensor) in params.named() {
        write_tensor(dir.join(format!("{name}.expt")), tensor)?;
    }
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|_| ckpt_err(dir, "no manifest"))?;
    let mut map = kv::parse(&text).map_err(|e| ckpt_err(dir, e))?;
    let epoch = kv::take::<usize>(&mut map, "epoch")
        .map_err(|e| ckpt_err(dir, e))?
        .ok_or_else(|| ckpt_err(dir, "manifest missing epoch"))?;
    let seed = kv::take::<u64>(&mut map, "seed")
        .map_err(|e| ckpt_err(dir, e))?
        .ok_or_else(|| ckpt_err(dir, "manifest missing seed"))?;
    let config = ModelConfig::from_kv(&mut map)?;
    kv::reject_unknown(&map, "checkpoint manifest").map_err(|e| ckpt_err(dir, e))?;
    let mut params = ExpNetParams::init(&config, 0);
    for (name, slot) in params.named_mut() {
        let path = dir.join(format!("{name}.expt"));
        let loaded = read_tensor(&path)
            .map_err(|e| ckpt_err(dir, format!("parameter {name}: {e}")))?;
        if loaded.shape() != slot.shape() {
            return Err(ckpt_err(
                dir,
                format!(
                    "parameter {name}: stored shape {:?} does not match config shape {:?}",
                    loaded.shape(),
                    slot.shape()
                ),
            ));
        }
        *slot = loaded;
    }
    Ok(Checkpoint { config, params, epoch, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_restores_every_parameter() {
        // A small config keeps the test fast.
        let config = ModelConfig {
            stages: 2,
            widths: vec![4, 8],
            blocks: vec![1, 1],
            image_size: 16,
            hidden: 8,
            heads: 2,
            fusion_width: 8,
            ..Default::default()
        };
        config.validate().unwrap();
        let params = ExpNetParams::init(&config, 3);
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &config, &params, 12, 99).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.epoch, 12);
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.config, config);
        for ((name, orig), (_, back)) in params.named().iter().zip(loaded.params.named()) {
            for (a, b) in orig.values().iter().zip(back.values()) {
                assert_eq!(*b, (*a as f32) as f64, "{name}");
            }
        }
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no manifest"));
    }
}
