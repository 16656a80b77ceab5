//! Registry of per-operation gradient checks against the finite-difference
//! oracle. The command-line `gradcheck` verb and the acceptance suite both
//! run these; each instance draws fresh random operands from its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::fdcheck::finite_difference_check;
use crate::ops;
use crate::tape::Tape;
use crate::tensor::Tensor;

type CheckFn = Box<dyn Fn(u64) -> Result<f64, TensorError> + Send + Sync>;

/// One named check: runs a single random instance per seed and reports the
/// max relative error across the checked coordinates.
pub struct GradCheck {
    pub name: String,
    pub tolerance: f64,
    run: CheckFn,
}

impl GradCheck {
    pub fn new(
        name: impl Into<String>,
        tolerance: f64,
        run: impl Fn(u64) -> Result<f64, TensorError> + Send + Sync + 'static,
    ) -> Self {
        GradCheck { name: name.into(), tolerance, run: Box::new(run) }
    }

    /// Worst error over `instances` seeded instances.
    pub fn run(&self, base_seed: u64, instances: usize) -> Result<f64, TensorError> {
        let mut worst = 0.0f64;
        for i in 0..instances {
            worst = worst.max((self.run)(base_seed.wrapping_add(i as u64))?);
        }
        Ok(worst)
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Deterministic probe vector turning any tensor into a scalar with a
/// non-degenerate gradient: loss = sum(y * probe).
pub fn probe_loss(tape: &mut Tape, y: &Tensor, seed: u64) -> Result<Tensor, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let probe: Vec<f64> = (0..y.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weighted = ops::mul_mask(tape, y, &probe)?;
    ops::sum(tape, &weighted)
}

const EPS: f64 = 1e-5;

pub fn core_checks() -> Vec<GradCheck> {
    let mut checks = Vec::new();

    checks.push(GradCheck::new("conv2d/input", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        let bias = rand_tensor(&mut rng, &[3]);
        let point = rand_tensor(&mut rng, &[5, 5, 2]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::conv2d(tape, x, &weight, &bias, 1, 1)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("conv2d/weight", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rand_tensor(&mut rng, &[5, 5, 2]);
        let bias = rand_tensor(&mut rng, &[3]);
        let point = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        finite_difference_check(
            move |tape, w| {
                let y = ops::conv2d(tape, &input, w, &bias, 1, 0)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("conv2d/bias", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rand_tensor(&mut rng, &[4, 4, 2]);
        let weight = rand_tensor(&mut rng, &[3, 3, 2, 3]);
        let point = rand_tensor(&mut rng, &[3]);
        finite_difference_check(
            move |tape, b| {
                let y = ops::conv2d(tape, &input, &weight, b, 1, 1)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("deform_conv2d/offset_params", 1e-5, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rand_tensor(&mut rng, &[5, 5, 2]);
        let weight = rand_tensor(&mut rng, &[3, 3, 2, 2]);
        let bias = rand_tensor(&mut rng, &[2]);
        let off_bias = rand_tensor(&mut rng, &[18]);
        let point = rand_tensor(&mut rng, &[3, 3, 2, 18]);
        finite_difference_check(
            move |tape, ow| {
                let y = ops::deformable_conv2d(tape, &input, &weight, &bias, ow, &off_bias, 1, 1)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("deform_conv2d/input", 1e-5, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = rand_tensor(&mut rng, &[3, 3, 2, 2]);
        let bias = rand_tensor(&mut rng, &[2]);
        let offsets = Tensor::from_fn(&[5, 5, 18], |_| rng.gen_range(-1.5..1.5));
        let point = rand_tensor(&mut rng, &[5, 5, 2]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::deform_conv2d_sampled(tape, x, &weight, &bias, &offsets, 1, 1)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("deform_conv2d/weight", 1e-5, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rand_tensor(&mut rng, &[5, 5, 2]);
        let bias = rand_tensor(&mut rng, &[2]);
        let offsets = Tensor::from_fn(&[5, 5, 18], |_| rng.gen_range(-1.5..1.5));
        let point = rand_tensor(&mut rng, &[3, 3, 2, 2]);
        finite_difference_check(
            move |tape, w| {
                let y = ops::deform_conv2d_sampled(tape, &input, w, &bias, &offsets, 1, 1)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("max_pool2d", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = rand_tensor(&mut rng, &[6, 6, 3]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::max_pool2d(tape, x, 2, 2)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("patch_average_pool", 1e-8, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = rand_tensor(&mut rng, &[6, 6, 2]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::patch_average_pool(tape, x, 3)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("global_average_pool", 1e-8, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = rand_tensor(&mut rng, &[4, 4, 3]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::global_average_pool(tape, x)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("sine/x", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::scalar(rng.gen_range(0.5..2.0));
        let w = Tensor::scalar(rng.gen_range(0.5..3.0));
        let point = rand_tensor(&mut rng, &[12]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::sine(tape, x, &a, &w)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("sine/amplitude_frequency", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[12]);
        let point = Tensor::new(&[2], vec![rng.gen_range(0.5..2.0), rng.gen_range(0.5..3.0)])
            .expect("pair");
        finite_difference_check(
            move |tape, aw| {
                let a = ops::gather_map(tape, aw, &[0], &[])?;
                let w = ops::gather_map(tape, aw, &[1], &[])?;
                let y = ops::sine(tape, &x, &a, &w)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("sigmoid", 1e-7, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = rand_tensor(&mut rng, &[10]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::sigmoid(tape, x)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("softmax", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = rand_tensor(&mut rng, &[3, 5]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::softmax(tape, x, 1)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("layer_normalize", 1e-5, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = rand_tensor(&mut rng, &[3, 6]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::layer_normalize(tape, x)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("channel_norm/input", 1e-5, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = rand_tensor(&mut rng, &[3]);
        let beta = rand_tensor(&mut rng, &[3]);
        let point = rand_tensor(&mut rng, &[4, 4, 3]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::channel_norm(tape, x, &gamma, &beta)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("channel_norm/scale_shift", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rand_tensor(&mut rng, &[4, 4, 3]);
        let point = rand_tensor(&mut rng, &[6]);
        finite_difference_check(
            move |tape, gb| {
                let gamma = ops::gather_map(tape, gb, &[0, 1, 2], &[3])?;
                let beta = ops::gather_map(tape, gb, &[3, 4, 5], &[3])?;
                let y = ops::channel_norm(tape, &input, &gamma, &beta)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("cross_entropy", 1e-7, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let label = rng.gen_range(0..6);
        let point = rand_tensor(&mut rng, &[6]);
        finite_difference_check(
            move |tape, logits| ops::cross_entropy(tape, logits, label),
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("matmul/lhs", 1e-7, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rand_tensor(&mut rng, &[4, 3]);
        let point = rand_tensor(&mut rng, &[2, 4]);
        finite_difference_check(
            move |tape, a| {
                let y = ops::matmul(tape, a, &b)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("matmul/rhs", 1e-7, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[2, 4]);
        let point = rand_tensor(&mut rng, &[4, 3]);
        finite_difference_check(
            move |tape, b| {
                let y = ops::matmul(tape, &a, b)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks.push(GradCheck::new("mul_bcast_spatial", 1e-6, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = rand_tensor(&mut rng, &[4, 4]);
        let point = rand_tensor(&mut rng, &[4, 4, 2]);
        finite_difference_check(
            move |tape, x| {
                let y = ops::mul_bcast_spatial(tape, x, &map)?;
                probe_loss(tape, &y, seed)
            },
            &point,
            EPS,
        )
    }));

    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_core_check_passes_its_tolerance() {
        for check in core_checks() {
            let err = check.run(7, 3).unwrap();
            assert!(
                err <= check.tolerance,
                "{}: error {err} over tolerance {}",
                check.name,
                check.tolerance
            );
        }
    }
}
