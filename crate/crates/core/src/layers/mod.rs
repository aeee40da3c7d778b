//! Differentiable building blocks of the mixer models.
//!
//! Layers own no tensors. They hold [`ParamId`]s into a [`ParamStore`] and
//! emit tape nodes through a [`Ctx`], so the same layer description serves
//! training, evaluation, and finite-difference checks.

mod linear;
mod mixing;
mod norm;
mod revin;

pub use linear::Linear;
pub use mixing::{
    ConditionalFeatureMixing, ConditionalMixerLayer, FeatureMixing, MixerLayer, NormPlacement, TimeMixing,
};
pub use norm::{BatchStats, Norm2d, NormKind, NormSpec, VARIANCE_FLOOR};
pub use revin::{rev_in_denormalize, rev_in_normalize, RevInState};

use crate::autodiff::{NodeId, Tape};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{self, Mode, Tensor};

/// Everything a layer needs while emitting nodes for one forward pass.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    params: &'a [NodeId],
    buffers: &'a ParamStore,
    mode: Mode,
    rng: &'a mut SeededRng,
    updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Ctx<'a> {
    /// `params[i]` must be the tape leaf holding parameter `ParamId(i)`.
    pub fn new(
        tape: &'a mut Tape,
        params: &'a [NodeId],
        buffers: &'a ParamStore,
        mode: Mode,
        rng: &'a mut SeededRng,
    ) -> Self {
        Self {
            tape,
            params,
            buffers,
            mode,
            rng,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, id: ParamId) -> NodeId {
        self.params[id.index()]
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor {
        self.buffers.get(id)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.tape.constant(value)
    }

    /// Inverted dropout in train mode, identity otherwise.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        tensor::check_rate(rate)?;
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let shape = self.tape.shape(x).to_vec();
        let mask = tensor::dropout_mask(&shape, rate, self.rng)?;
        self.tape.dropout_with_mask(x, mask)
    }

    /// Queues a new value for a non-learnable buffer (running statistics).
    pub fn update_buffer(&mut self, id: ParamId, value: Tensor) {
        self.updates.push((id, value));
    }

    pub fn into_updates(self) -> Vec<(ParamId, Tensor)> {
        self.updates
    }
}

/// Allocation helper used while constructing layers.
pub struct Init<'a> {
    pub params: &'a mut ParamStore,
    pub buffers: &'a mut ParamStore,
    pub rng: &'a mut SeededRng,
}

/// Registers every parameter on a fresh tape, runs `f`, and returns the
/// output value with any queued buffer updates. Convenience for tests and
/// one-off evaluation.
pub fn forward_once<F>(
    params: &ParamStore,
    buffers: &ParamStore,
    mode: Mode,
    rng: &mut SeededRng,
    f: F,
) -> Result<(Tensor, Vec<(ParamId, Tensor)>)>
where
    F: FnOnce(&mut Ctx<'_>) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.tensors().iter().map(|t| tape.param(t.clone())).collect();
    let mut ctx = Ctx::new(&mut tape, &ids, buffers, mode, rng);
    let out = f(&mut ctx)?;
    let updates = ctx.into_updates();
    Ok((tape.value(out).clone(), updates))
}

/// Applies queued buffer updates.
pub fn apply_updates(buffers: &mut ParamStore, updates: Vec<(ParamId, Tensor)>) -> Result<()> {
    for (id, value) in updates {
        buffers.set(id, value)?;
    }
    Ok(())
}
