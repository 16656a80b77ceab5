//! Gradient checks for the composed modules, against the same central
//! finite-difference oracle as the core operations. Checks probe the smooth
//! score path; the hard threshold's straight-through backward is an
//! estimator by construction, not a local derivative, so it is exercised by
//! dedicated flow tests instead.

use expnet_core::checks::{probe_loss, rand_tensor, GradCheck};
use expnet_core::fdcheck::finite_difference_check;
use expnet_core::{ops, par, Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::gaze::{cross_attention, gaze_shift_forward, SaliencyMode, TokenSet};
use crate::nefirf::{encode_condition, nefirf_forward};
use crate::net::{expnet_forward, residual_stage_forward, training_loss};
use crate::params::{
    AttnParams, Conv, DeformParams, ExpNetParams, GazeShiftParams, NefirfParams, ResBlock,
    SaliencyParams, StageParams,
};

/// Deformable offsets initialized away from zero: integer-aligned sampling
/// sits on bilinear interpolation knots where one-sided derivatives differ,
/// which would poison a central-difference probe.
fn offgrid_deform(rng: &mut ChaCha8Rng, c_in: usize) -> DeformParams {
    let mut deform = DeformParams::init(rng, c_in);
    deform.offsets.bias = Tensor::from_fn(&[18], |_| rng.gen_range(0.15..0.45));
    deform
}

pub fn model_checks() -> Vec<GradCheck> {
    let mut checks = Vec::new();

    checks.push(GradCheck::new("encode_condition/feature", 1e-5, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = Conv::cond_head(&mut rng, 3);
        let point = rand_tensor(&mut rng, &[8, 8, 3]);
        finite_difference_check(
            move |tape, f| {
                let y = encode_condition(tape, f, 2, &head).map_err(invalid)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            1e-5,
        )
    }));

    checks.push(GradCheck::new("nefirf_scores/feature", 1e-4, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = NefirfParams::init(&mut rng, 2);
        let point = rand_tensor(&mut rng, &[8, 8, 2]);
        finite_difference_check(
            move |tape, f| {
                let map = nefirf_forward(tape, f, &params, 2, 1, true).map_err(invalid)?;
                probe_loss(tape, &map.scores, seed)
            },
            &point,
            1e-5,
        )
    }));

    checks.push(GradCheck::new("cross_attention/tokens", 1e-4, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AttnParams::init(&mut rng, 8, 8, 8, 2);
        let context = rand_tensor(&mut rng, &[5, 8]);
        let point = rand_tensor(&mut rng, &[3, 8]);
        finite_difference_check(
            move |tape, focal| {
                let e = cross_attention(tape, focal, &context, &params).map_err(invalid)?;
                probe_loss(tape, &e, seed)
            },
            &point,
            1e-5,
        )
    }));

    checks.push(GradCheck::new("cross_attention/query_weight", 1e-4, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AttnParams::init(&mut rng, 8, 8, 8, 2);
        let focal = rand_tensor(&mut rng, &[3, 8]);
        let context = rand_tensor(&mut rng, &[5, 8]);
        let point = params.query.weight.clone();
        finite_difference_check(
            move |tape, wq| {
                let mut p = params.clone();
                p.query.weight = wq.clone();
                let e = cross_attention(tape, &focal, &context, &p).map_err(invalid)?;
                probe_loss(tape, &e, seed)
            },
            &point,
            1e-5,
        )
    }));

    checks.push(GradCheck::new("residual_stage/feature", 1e-5, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stage = StageParams { blocks: vec![ResBlock::init(&mut rng, 3)] };
        let point = rand_tensor(&mut rng, &[6, 6, 3]);
        finite_difference_check(
            move |tape, f| {
                let y = residual_stage_forward(tape, f, &stage).map_err(invalid)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            1e-5,
        )
    }));

    checks.push(GradCheck::new("gaze_shift/feature", 1e-4, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 2;
        let params = GazeShiftParams {
            saliency: SaliencyParams::Field(NefirfParams::init(&mut rng, c)),
            context: Some(crate::params::ContextParams {
                token_proj: crate::params::Linear::init(&mut rng, 2 * 2 * c, 8),
                pos_gen: Conv::init(&mut rng, 3, 3, 8, 8),
                attn: AttnParams::init(&mut rng, 8, 8, 8, 2),
            }),
            deform: offgrid_deform(&mut rng, c),
        };
        let point = rand_tensor(&mut rng, &[8, 8, c]);
        finite_difference_check(
            move |tape, f| {
                let out =
                    gaze_shift_forward(tape, f, &params, 2, 1, SaliencyMode::Soft, true)
                        .map_err(invalid)?;
                let focal_term = probe_loss(tape, &out.focal_next, seed)?;
                let imp = out.impression.expect("context branch enabled");
                let imp_term = probe_loss(tape, &imp, seed.wrapping_add(1))?;
                Ok(ops::add(tape, &focal_term, &imp_term)?)
            },
            &point,
            1e-5,
        )
    }));

    checks.push(GradCheck::new("cpe/zero_generator_is_identity", 1e-12, |seed| {
        // Zero generator parameters produce zero encodings; the downstream
        // addition must then be exact, so the probe collapses to a linear map.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = Conv::zeroed(3, 3, 4, 4);
        let focal = TokenSet { tokens: rand_tensor(&mut rng, &[2, 4]), positions: vec![0, 3] };
        let context = TokenSet { tokens: rand_tensor(&mut rng, &[2, 4]), positions: vec![1, 2] };
        let mut tape = Tape::eval();
        let (fpe, cpe) = crate::gaze::conditional_position_encoding(
            &mut tape, &focal, &context, &gen, 2,
        )
        .map_err(invalid)?;
        let worst = fpe
            .values()
            .iter()
            .chain(cpe.values())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        Ok(worst)
    }));

    checks
}

fn invalid(e: crate::error::ModelError) -> TensorError {
    TensorError::Backward(e.to_string())
}

/// Per-parameter report from the whole-model check.
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

/// Whole-model finite-difference check: one analytic backward through the
/// smooth (soft-saliency) path, then central-difference probes at
/// `coords_per_param` sampled coordinates of every parameter tensor.
pub fn full_model_gradient_check(
    config: &ModelConfig,
    seed: u64,
    coords_per_param: usize,
    eps: f64,
) -> Result<Vec<ParamCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ExpNetParams::init(config, seed);
    for (name, tensor) in params.named_mut() {
        if name.ends_with("deform.offsets.bias") {
            *tensor = Tensor::from_fn(&[18], |_| rng.gen_range(0.15..0.45));
        }
    }
    let image = Tensor::from_fn(&[config.image_size, config.image_size, 3], |_| {
        rng.gen_range(-1.0..1.0)
    });
    let label = rng.gen_range(0..config.classes);

    let mut tape = Tape::new();
    let tracked = params.track(&mut tape);
    let output = expnet_forward(&mut tape, &image, &tracked, config, SaliencyMode::Soft)
        .map_err(invalid)?;
    let loss = training_loss(&mut tape, &output, label).map_err(invalid)?;
    tape.backward(&loss)?;
    let analytic: Vec<(String, Vec<f64>)> = tracked
        .named()
        .into_iter()
        .map(|(name, t)| (name, tape.grad(t).expect("leaf gradient").to_vec()))
        .collect();
    drop(tape);

    let loss_at = |probe_params: &ExpNetParams| -> Result<f64, TensorError> {
        let mut tape = Tape::eval();
        let output = expnet_forward(&mut tape, &image, probe_params, config, SaliencyMode::Soft)
            .map_err(invalid)?;
        let loss = training_loss(&mut tape, &output, label).map_err(invalid)?;
        Ok(loss.item())
    };

    // (param index, coordinate) probes, sampled deterministically.
    let named = params.named();
    let mut probes: Vec<(usize, usize)> = Vec::new();
    for (pi, (_, tensor)) in named.iter().enumerate() {
        let n = tensor.numel();
        if n <= coords_per_param {
            probes.extend((0..n).map(|c| (pi, c)));
        } else {
            for _ in 0..coords_per_param {
                probes.push((pi, rng.gen_range(0..n)));
            }
        }
    }

    let errs = par::try_map_indexed(&probes, |_, &(pi, coord)| -> Result<f64, TensorError> {
        let name = &named[pi].0;
        let base = named[pi].1.values()[coord];
        let eval = |delta: f64| -> Result<f64, TensorError> {
            let mut probe = params.clone();
            for (n, t) in probe.named_mut() {
                if &n == name {
                    t.values_mut()[coord] = base + delta;
                    break;
                }
            }
            loss_at(&probe)
        };
        let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        let a = analytic[pi].1[coord];
        // Coordinates with an exactly-zero derivative (e.g. a convolution
        // bias immediately absorbed by a mean-subtracting normalization)
        // carry only rounding noise on both sides; the floor keeps that
        // noise from registering as relative disagreement.
        Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5))
    })?;

    let mut out: Vec<ParamCheck> = named
        .iter()
        .map(|(name, _)| ParamCheck { name: name.clone(), max_rel_err: 0.0 })
        .collect();
    for (&(pi, _), err) in probes.iter().zip(&errs) {
        out[pi].max_rel_err = out[pi].max_rel_err.max(*err);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_checks_pass_their_tolerances() {
        for check in model_checks() {
            let err = check.run(3, 2).unwrap();
            assert!(
                err <= check.tolerance,
                "{}: error {err} over tolerance {}",
                check.name,
                check.tolerance
            );
        }
    }

    #[test]
    fn tiny_full_model_check() {
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
        let report = full_model_gradient_check(&config, 5, 4, 1e-5).unwrap();
        for p in report {
            assert!(p.max_rel_err <= 1e-4, "{}: {}", p.name, p.max_rel_err);
        }
    }
}
