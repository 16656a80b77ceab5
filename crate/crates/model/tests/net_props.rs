//! Assembled-model behavior: output arity, determinism, residual identity,
//! fusion reduction cases, end-to-end gradient flow, and dead-parameter
//! coverage.

use expnet_core::{ops, Tape, Tensor};
use expnet_model::net::{expnet_forward, fuse_embeddings, residual_stage_forward, training_loss};
use expnet_model::params::{ExpNetParams, FuseParams, Linear, Mlp, ResBlock, StageParams};
use expnet_model::{AblationToggles, ModelConfig, SaliencyMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Small-but-real config used across these tests: every component present,
/// sized to keep one forward pass cheap.
fn small_config() -> ModelConfig {
    ModelConfig {
        stages: 3,
        widths: vec![4, 8, 16],
        blocks: vec![1, 1, 1],
        patch_grid: 4,
        image_size: 16,
        hidden: 8,
        heads: 2,
        fusion_width: 8,
        classes: 3,
        ..Default::default()
    }
}

#[test]
fn output_arity_matches_stage_count() {
    let config = ModelConfig::default();
    config.validate().unwrap();
    let params = ExpNetParams::init(&config, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = rand_tensor(&mut rng, &[64, 64, 3]);
    let mut tape = Tape::eval();
    let out = expnet_forward(&mut tape, &image, &params, &config, SaliencyMode::Hard).unwrap();
    assert_eq!(out.saliency_maps.len(), 3);
    assert_eq!(out.impressions.len(), 3);
    assert_eq!(out.logits.shape(), &[config.classes]);
    assert_eq!(out.focal_embedding.shape(), &[128]);
    for (i, map) in out.saliency_maps.iter().enumerate() {
        assert_eq!(map.stage_index, i + 1);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let config = small_config();
    config.validate().unwrap();
    let params = ExpNetParams::init(&config, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = rand_tensor(&mut rng, &[16, 16, 3]);
    let run = || {
        let mut tape = Tape::eval();
        let out =
            expnet_forward(&mut tape, &image, &params, &config, SaliencyMode::Hard).unwrap();
        out.logits.values().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn zeroed_residual_branch_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut block = ResBlock::init(&mut rng, 3);
    block.conv2.weight = Tensor::zeros(block.conv2.weight.shape());
    block.conv2.bias = Tensor::zeros(block.conv2.bias.shape());
    let stage = StageParams { blocks: vec![block] };
    let f = rand_tensor(&mut rng, &[6, 6, 3]);
    let mut tape = Tape::eval();
    let out = residual_stage_forward(&mut tape, &f, &stage).unwrap();
    assert_eq!(out.values(), f.values());
    assert_eq!(out.shape(), f.shape());
}

fn identity_mlp(d: usize) -> Mlp {
    let eye = Tensor::from_fn(&[d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
    Mlp {
        first: Linear { weight: eye.clone(), bias: Tensor::zeros(&[d]) },
        second: Linear { weight: eye, bias: Tensor::zeros(&[d]) },
    }
}

#[test]
fn mlp_add_with_identity_adapters_sums_sources() {
    let d = 4;
    let fuse = FuseParams::MlpAdd { adapters: (0..3).map(|_| identity_mlp(d)).collect() };
    let mut tape = Tape::eval();
    // Non-negative inputs keep the hidden relu out of play.
    let focal = Tensor::new(&[d], vec![1.0, 2.0, 0.5, 3.0]).unwrap();
    let imp1 = Tensor::new(&[d], vec![0.25, 0.0, 1.0, 2.0]).unwrap();
    let imp2 = Tensor::new(&[d], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let fused =
        fuse_embeddings(&mut tape, &focal, &[imp1.clone(), imp2.clone()], &fuse).unwrap();
    for i in 0..d {
        let want = focal.values()[i] + imp1.values()[i] + imp2.values()[i];
        assert!((fused.values()[i] - want).abs() <= 1e-12);
    }
}

#[test]
fn fused_width_matches_for_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 6;
    let width = 10;
    let focal = rand_tensor(&mut rng, &[d]);
    let imps = vec![rand_tensor(&mut rng, &[d]), rand_tensor(&mut rng, &[d])];
    let mlp = FuseParams::MlpAdd {
        adapters: (0..3).map(|_| Mlp::init(&mut rng, d, width)).collect(),
    };
    let ca = FuseParams::CrossAttention {
        focal_proj: Linear::init(&mut rng, d, width),
        attn: expnet_model::params::AttnParams::init(&mut rng, width, d, width, 2),
    };
    let mut tape = Tape::eval();
    for fuse in [&mlp, &ca] {
        let fused = fuse_embeddings(&mut tape, &focal, &imps, fuse).unwrap();
        assert_eq!(fused.shape(), &[width]);
    }
    assert!(fuse_embeddings(&mut tape, &focal, &[], &mlp).is_err());
}

#[test]
fn per_source_adapters_are_order_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 6;
    let fuse = FuseParams::MlpAdd {
        adapters: (0..3).map(|_| Mlp::init(&mut rng, d, d)).collect(),
    };
    let focal = rand_tensor(&mut rng, &[d]);
    let a = rand_tensor(&mut rng, &[d]);
    let b = rand_tensor(&mut rng, &[d]);
    let mut tape = Tape::eval();
    let fwd = fuse_embeddings(&mut tape, &focal, &[a.clone(), b.clone()], &fuse).unwrap();
    let rev = fuse_embeddings(&mut tape, &focal, &[b, a], &fuse).unwrap();
    assert_ne!(fwd.values(), rev.values());
}

#[test]
fn loss_examples() {
    let config = small_config();
    let mut tape = Tape::eval();
    let uniform = ops::cross_entropy(&mut tape, &Tensor::filled(&[10], 0.7), 4).unwrap();
    assert!((uniform.item() - (10f64).ln()).abs() <= 1e-12);
    // Out-of-range label rejected through the model surface.
    let params = ExpNetParams::init(&config, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let image = rand_tensor(&mut rng, &[16, 16, 3]);
    let out = expnet_forward(&mut tape, &image, &params, &config, SaliencyMode::Hard).unwrap();
    assert!(training_loss(&mut tape, &out, config.classes).is_err());
}

#[test]
fn gradient_reaches_saliency_conditioning_through_the_threshold() {
    let config = small_config();
    let params = ExpNetParams::init(&config, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let image = rand_tensor(&mut rng, &[16, 16, 3]);
    let mut tape = Tape::new();
    let tracked = params.track(&mut tape);
    let out = expnet_forward(&mut tape, &image, &tracked, &config, SaliencyMode::Hard).unwrap();
    let loss = training_loss(&mut tape, &out, 1).unwrap();
    tape.backward(&loss).unwrap();
    let mut found = false;
    for (name, tensor) in tracked.named() {
        if name.contains("saliency.field.head") {
            if tape.grad(tensor).unwrap().iter().any(|g| *g != 0.0) {
                found = true;
            }
        }
    }
    assert!(found, "no loss gradient reached the conditioning heads");
}

#[test]
fn no_dead_parameters_on_a_small_batch() {
    let config = small_config();
    let params = ExpNetParams::init(&config, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names: Vec<String> = params.named().iter().map(|(n, _)| n.clone()).collect();
    let mut alive = vec![false; names.len()];
    for label in 0..3 {
        let image = rand_tensor(&mut rng, &[16, 16, 3]);
        let mut tape = Tape::new();
        let tracked = params.track(&mut tape);
        let out =
            expnet_forward(&mut tape, &image, &tracked, &config, SaliencyMode::Hard).unwrap();
        let loss = training_loss(&mut tape, &out, label).unwrap();
        tape.backward(&loss).unwrap();
        for (i, (_, tensor)) in tracked.named().iter().enumerate() {
            if tape.grad(tensor).unwrap().iter().any(|g| *g != 0.0) {
                alive[i] = true;
            }
        }
    }
    let dead: Vec<&String> =
        names.iter().zip(&alive).filter(|(_, a)| !**a).map(|(n, _)| n).collect();
    assert!(dead.is_empty(), "dead parameters: {dead:?}");
}

#[test]
fn focal_toggle_off_reduces_to_plain_residual_classifier() {
    let config = ModelConfig {
        toggles: AblationToggles { focal: false, ..Default::default() },
        ..small_config()
    };
    config.validate().unwrap();
    let params = ExpNetParams::init(&config, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let image = rand_tensor(&mut rng, &[16, 16, 3]);
    let mut tape = Tape::eval();
    let out = expnet_forward(&mut tape, &image, &params, &config, SaliencyMode::Hard).unwrap();
    assert!(out.saliency_maps.is_empty());
    assert!(out.impressions.is_empty());
    assert_eq!(out.logits.shape(), &[config.classes]);
}

#[test]
fn cross_attention_fusion_runs_end_to_end() {
    let config = ModelConfig {
        fusion: expnet_model::FusionMode::CrossAttention,
        ..small_config()
    };
    config.validate().unwrap();
    let params = ExpNetParams::init(&config, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let image = rand_tensor(&mut rng, &[16, 16, 3]);
    let mut tape = Tape::new();
    let tracked = params.track(&mut tape);
    let out = expnet_forward(&mut tape, &image, &tracked, &config, SaliencyMode::Hard).unwrap();
    let loss = training_loss(&mut tape, &out, 0).unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(out.logits.shape(), &[config.classes]);
}
