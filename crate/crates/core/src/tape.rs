//! Reverse-mode differentiation tape.
//!
//! Operations record a backward closure per output node during the forward
//! pass; `backward` replays them in reverse recording order. One tape serves
//! one forward/backward cycle and is discarded afterwards. A tape is
//! single-threaded by contract (it is not `Send`).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::TensorError;
use crate::tensor::{Tensor, TensorData};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Accumulates gradients flowing from one recorded operation back to its
/// input slots. Slots whose tensor was untracked are silently dropped.
pub struct GradSink<'a> {
    slots: &'a [Option<usize>],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    /// Whether the input at `slot` needs a gradient at all. Lets expensive
    /// backward rules skip work for untracked inputs.
    pub fn wants(&self, slot: usize) -> bool {
        self.slots[slot].is_some()
    }

    pub fn add(&mut self, slot: usize, grad: Vec<f64>) {
        let Some(node) = self.slots[slot] else { return };
        match &mut self.grads[node] {
            Some(acc) => {
                debug_assert_eq!(acc.len(), grad.len(), "gradient size mismatch");
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a += g;
                }
            }
            None => self.grads[node] = Some(grad),
        }
    }
}

type BackwardFn = Box<dyn FnOnce(&[f64], &mut GradSink<'_>)>;

struct Step {
    inputs: Vec<Option<usize>>,
    run: BackwardFn,
}

struct Node {
    size: usize,
    leaf: bool,
    step: Option<Step>,
}

pub struct Tape {
    id: u64,
    enabled: bool,
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl Tape {
    /// A recording tape for one training or gradient-check step.
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            enabled: true,
            nodes: Vec::new(),
            grads: None,
        }
    }

    /// A non-recording tape: operations compute values only. Used for
    /// inference and finite-difference probes.
    pub fn eval() -> Self {
        let mut t = Tape::new();
        t.enabled = false;
        t
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    /// Registers `t` as a differentiable leaf and returns the tracked handle.
    /// Values are shared, not copied. On a non-recording tape this returns an
    /// untracked clone.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        if !self.enabled {
            return Tensor { data: Arc::clone(&t.data), node: None };
        }
        let idx = self.nodes.len();
        self.nodes.push(Node { size: t.numel(), leaf: true, step: None });
        Tensor { data: Arc::clone(&t.data), node: Some((self.id, idx)) }
    }

    fn slot_of(&self, t: &Tensor, op: &'static str) -> Result<Option<usize>, TensorError> {
        match t.node {
            None => Ok(None),
            Some((tape, idx)) => {
                if tape == self.id {
                    Ok(Some(idx))
                } else {
                    Err(TensorError::TapeMismatch { context: op })
                }
            }
        }
    }

    /// Records one operation: `data` is the computed output, `inputs` are the
    /// operand tensors in slot order, `backward` receives the output gradient
    /// and distributes input gradients through the sink.
    pub(crate) fn record(
        &mut self,
        op: &'static str,
        data: TensorData,
        inputs: &[&Tensor],
        backward: impl FnOnce(&[f64], &mut GradSink<'_>) + 'static,
    ) -> Result<Tensor, TensorError> {
        let mut slots = Vec::with_capacity(inputs.len());
        for t in inputs {
            slots.push(self.slot_of(t, op)?);
        }
        if !self.enabled || slots.iter().all(Option::is_none) {
            return Ok(Tensor::from_data(data));
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            size: data.values().len(),
            leaf: false,
            step: Some(Step { inputs: slots, run: Box::new(backward) }),
        });
        Ok(Tensor { data: Arc::new(data), node: Some((self.id, idx)) })
    }

    /// Runs the backward pass from a scalar loss. Populates a gradient for
    /// every leaf: the true derivative where the leaf is reachable from the
    /// loss, zeros otherwise. Consumes the recorded steps; a tape runs
    /// backward once.
    pub fn backward(&mut self, loss: &Tensor) -> Result<(), TensorError> {
        let slot = self
            .slot_of(loss, "backward")?
            .ok_or(TensorError::Backward("loss is not tracked on this tape".into()))?;
        if loss.numel() != 1 {
            return Err(TensorError::Backward(format!(
                "loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        if self.grads.is_some() {
            return Err(TensorError::Backward("tape already ran backward".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[slot] = Some(vec![1.0]);
        for idx in (0..=slot).rev() {
            if grads[idx].is_none() {
                continue;
            }
            let Some(step) = self.nodes[idx].step.take() else { continue };
            let d_out = grads[idx].take().expect("checked above");
            let mut sink = GradSink { slots: &step.inputs, grads: &mut grads };
            (step.run)(&d_out, &mut sink);
        }
        // Unreached leaves report zero gradient rather than absence.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.leaf && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.size]);
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `t`. `None` when
    /// backward has not run, `t` is untracked, or `t` was an intermediate
    /// whose gradient was consumed.
    pub fn grad(&self, t: &Tensor) -> Option<&[f64]> {
        let (tape, idx) = t.node?;
        if tape != self.id {
            return None;
        }
        self.grads.as_ref()?.get(idx)?.as_deref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = ops::mul(&mut tape, &x, &x).unwrap();
        let loss = ops::sum(&mut tape, &sq).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let y = tape.leaf(&Tensor::new(&[2], vec![5.0, 5.0]).unwrap());
        let loss = ops::sum(&mut tape, &x).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&y).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(&x).is_err());
    }

    #[test]
    fn foreign_tensor_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(&Tensor::scalar(1.0));
        let y = b.leaf(&Tensor::scalar(2.0));
        assert!(ops::add(&mut a, &x, &y).is_err());
    }

    #[test]
    fn eval_tape_tracks_nothing() {
        let mut tape = Tape::eval();
        let x = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        assert!(!x.is_tracked());
        let y = ops::scale(&mut tape, &x, 2.0).unwrap();
        assert!(!y.is_tracked());
        assert_eq!(y.values(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_runs_once() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0));
        let y = ops::mul(&mut tape, &x, &x).unwrap();
        tape.backward(&y).unwrap();
        assert!(tape.backward(&y).is_err());
    }
}
