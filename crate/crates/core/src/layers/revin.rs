//! Reversible instance normalization.
//!
//! Statistics come from the input window only, so they are constants with
//! respect to model parameters and live outside the tape. Denormalization of
//! a forecast node is recorded on the tape with those constants.

use super::VARIANCE_FLOOR;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Per-sample, per-variate mean and standard deviation, each `[B, 1, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RevInState {
    pub mean: Tensor,
    pub std: Tensor,
}

impl RevInState {
    pub fn batch(&self) -> usize {
        self.mean.shape()[0]
    }

    pub fn variates(&self) -> usize {
        self.mean.shape()[2]
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != self.batch() || shape[2] != self.variates() {
            return Err(Error::State(format!(
                "forecast shaped {shape:?} does not match rev-in state for batch {} x {} variates",
                self.batch(),
                self.variates()
            )));
        }
        Ok(())
    }

    /// Restricts the statistics to the first `n` variates.
    pub fn leading(&self, n: usize) -> Result<Self> {
        Ok(Self {
            mean: tensor::slice_last(&self.mean, 0, n)?,
            std: tensor::slice_last(&self.std, 0, n)?,
        })
    }

    /// Tape-recorded `y * std + mean`.
    pub fn denormalize_node(&self, tape: &mut Tape, y: NodeId) -> Result<NodeId> {
        self.check(tape.shape(y))?;
        let std = tape.constant(self.std.clone());
        let mean = tape.constant(self.mean.clone());
        let scaled = tape.mul(y, std)?;
        tape.add(scaled, mean)
    }
}

/// Standardizes each (sample, variate) series of `x: [B, L, C]` over time.
pub fn rev_in_normalize(x: &Tensor) -> Result<(Tensor, RevInState)> {
    if x.rank() != 3 {
        return Err(Error::Rank {
            op: "rev_in_normalize",
            got: x.rank(),
            expected: "rank 3 [batch, time, variates]",
        });
    }
    let mean = tensor::mean_axes(x, &[1])?;
    let centered = tensor::sub_broadcast(x, &mean)?;
    let var = tensor::mean_axes(&centered.map(|v| v * v), &[1])?;
    let std = var.map(|v| v.max(VARIANCE_FLOOR).sqrt());
    let normalized = tensor::div_broadcast(&centered, &std)?;
    Ok((normalized, RevInState { mean, std }))
}

/// Inverse of [`rev_in_normalize`] applied to a forecast `[B, T, C]`.
pub fn rev_in_denormalize(y: &Tensor, state: &RevInState) -> Result<Tensor> {
    state.check(y.shape())?;
    let scaled = tensor::mul_broadcast(y, &state.std)?;
    tensor::add_broadcast(&scaled, &state.mean)
}
