//! Run configuration: synthetic dataset specs and training hyperparameters,
//! both as key=value text files with unknown keys rejected.

use std::fmt;
use std::str::FromStr;

use expnet_model::kv;

use crate::error::TrainError;

/// The three challenge regimes the synthetic datasets isolate: a tiny
/// discriminative glyph, a global radius-ratio structure, and a cue
/// combination where neither texture nor glyph alone decides the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Detail,
    Structure,
    Interaction,
}

impl FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "detail" => Ok(Regime::Detail),
            "structure" => Ok(Regime::Structure),
            "interaction" => Ok(Regime::Interaction),
            other => Err(format!("unknown regime {other:?}")),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Detail => "detail",
            Regime::Structure => "structure",
            Regime::Interaction => "interaction",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub regime: Regime,
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            regime: Regime::Detail,
            classes: 4,
            per_class: 125,
            image_size: 64,
            noise: 0.05,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut map = kv::parse(text).map_err(TrainError::Config)?;
        let mut spec = SyntheticSpec::default();
        let err = TrainError::Config;
        if let Some(v) = kv::take::<Regime>(&mut map, "regime").map_err(|e| err(e.to_string()))? {
            spec.regime = v;
        }
        if let Some(v) = kv::take::<usize>(&mut map, "classes").map_err(err)? {
            spec.classes = v;
        }
        if let Some(v) = kv::take::<usize>(&mut map, "per_class").map_err(err)? {
            spec.per_class = v;
        }
        if let Some(v) = kv::take::<usize>(&mut map, "image_size").map_err(err)? {
            spec.image_size = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "noise").map_err(err)? {
            spec.noise = v;
        }
        if let Some(v) = kv::take::<u64>(&mut map, "seed").map_err(err)? {
            spec.seed = v;
        }
        kv::reject_unknown(&map, "dataset spec").map_err(TrainError::Config)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.classes < 2 {
            return Err(TrainError::Config(format!("classes must be >= 2, got {}", self.classes)));
        }
        if self.per_class == 0 {
            return Err(TrainError::Config("per_class must be positive".into()));
        }
        if self.image_size < 16 {
            return Err(TrainError::Config(format!(
                "image_size must be >= 16, got {}",
                self.image_size
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(TrainError::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("regime".into(), self.regime.to_string()),
            ("classes".into(), self.classes.to_string()),
            ("per_class".into(), self.per_class.to_string()),
            ("image_size".into(), self.image_size.to_string()),
            ("noise".into(), format!("{}", self.noise)),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Held-out fraction per class; 0 trains on everything.
    pub eval_fraction: f64,
    /// Stop once train accuracy reaches this value; 0 disables.
    pub early_stop_acc: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 1,
            checkpoint_every: 0,
            eval_fraction: 0.2,
            early_stop_acc: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut map = kv::parse(text).map_err(TrainError::Config)?;
        let mut cfg = TrainConfig::default();
        let err = TrainError::Config;
        if let Some(v) = kv::take::<usize>(&mut map, "epochs").map_err(err)? {
            cfg.epochs = v;
        }
        if let Some(v) = kv::take::<usize>(&mut map, "batch_size").map_err(err)? {
            cfg.batch_size = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "learning_rate").map_err(err)? {
            cfg.learning_rate = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "weight_decay").map_err(err)? {
            cfg.weight_decay = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "beta1").map_err(err)? {
            cfg.beta1 = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "beta2").map_err(err)? {
            cfg.beta2 = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "epsilon").map_err(err)? {
            cfg.epsilon = v;
        }
        if let Some(v) = kv::take::<u64>(&mut map, "seed").map_err(err)? {
            cfg.seed = v;
        }
        if let Some(v) = kv::take::<usize>(&mut map, "checkpoint_every").map_err(err)? {
            cfg.checkpoint_every = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "eval_fraction").map_err(err)? {
            cfg.eval_fraction = v;
        }
        if let Some(v) = kv::take::<f64>(&mut map, "early_stop_acc").map_err(err)? {
            cfg.early_stop_acc = v;
        }
        kv::reject_unknown(&map, "train config").map_err(TrainError::Config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(TrainError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(TrainError::Config(format!("{name} must be in (0,1), got {v}")));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(TrainError::Config(format!(
                "eval_fraction must be in [0,1), got {}",
                self.eval_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.early_stop_acc) {
            return Err(TrainError::Config("early_stop_acc must be in [0,1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parse_roundtrip_and_unknown_keys() {
        let spec = SyntheticSpec { regime: Regime::Structure, seed: 9, ..Default::default() };
        let text = kv::render(&spec.to_pairs());
        assert_eq!(SyntheticSpec::parse(&text).unwrap(), spec);
        assert!(SyntheticSpec::parse("regime=detail\nwhat=1\n").is_err());
    }

    #[test]
    fn train_config_rejects_bad_beta() {
        assert!(TrainConfig::parse("beta1=1.0\n").is_err());
        assert!(TrainConfig::parse("beta1=0.5\n").is_ok());
    }
}
