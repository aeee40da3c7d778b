//! 2D normalization over the (time, feature) plane of each window.

use serde::{Deserialize, Serialize};

use super::{Ctx, Init};
use crate::autodiff::NodeId;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::{Mode, Tensor};

/// Floor applied to every variance before taking a square root.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Batch statistics (running statistics at eval time).
    Batch2d,
    /// Per-sample statistics over the whole time x feature plane.
    Layer,
    /// No normalization and no affine parameters.
    None,
}

/// Which axes the batch statistics pool over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStats {
    /// One scalar mean/variance over batch, time, and feature axes.
    #[default]
    Joint,
    /// One mean/variance per feature column, pooled over batch and time.
    PerFeature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    pub kind: NormKind,
    pub stats: BatchStats,
    pub momentum: f64,
}

impl NormSpec {
    pub fn new(kind: NormKind) -> Self {
        Self {
            kind,
            stats: BatchStats::Joint,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Norm2d {
    pub spec: NormSpec,
    pub rows: usize,
    pub cols: usize,
    pub scale: Option<ParamId>,
    pub shift: Option<ParamId>,
    pub running_mean: Option<ParamId>,
    pub running_var: Option<ParamId>,
}

impl Norm2d {
    pub fn new(init: &mut Init<'_>, name: &str, rows: usize, cols: usize, spec: NormSpec) -> Result<Self> {
        let mut norm = Self {
            spec,
            rows,
            cols,
            scale: None,
            shift: None,
            running_mean: None,
            running_var: None,
        };
        if spec.kind == NormKind::None {
            return Ok(norm);
        }
        norm.scale = Some(init.params.add(format!("{name}.scale"), Tensor::ones(&[rows, cols])?));
        norm.shift = Some(init.params.add(format!("{name}.shift"), Tensor::zeros(&[rows, cols])?));
        if spec.kind == NormKind::Batch2d {
            let n = match spec.stats {
                BatchStats::Joint => 1,
                BatchStats::PerFeature => cols,
            };
            norm.running_mean = Some(init.buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[n])?));
            norm.running_var = Some(init.buffers.add(format!("{name}.running_var"), Tensor::ones(&[n])?));
        }
        Ok(norm)
    }

    /// Learnable affine scalars contributed by a norm over a `rows x cols` plane.
    pub fn param_count(kind: NormKind, rows: usize, cols: usize) -> usize {
        match kind {
            NormKind::None => 0,
            _ => 2 * rows * cols,
        }
    }

    /// Normalizes `x: [B, rows, cols]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        let shape = ctx.tape.shape(x).to_vec();
        if self.spec.kind == NormKind::None {
            return Ok(x);
        }
        if shape.len() != 3 || shape[1] != self.rows || shape[2] != self.cols {
            return Err(Error::dim("norm2d", &shape, &[self.rows, self.cols]));
        }
        let standardized = match (self.spec.kind, ctx.mode()) {
            (NormKind::Layer, _) => standardize(ctx, x, &[1, 2])?,
            (NormKind::Batch2d, Mode::Train) => {
                if shape[0] < 2 {
                    return Err(Error::config(
                        "norm",
                        "batch2d normalization needs at least 2 samples per training batch; use layer norm for batch size 1",
                    ));
                }
                let axes: &[usize] = match self.spec.stats {
                    BatchStats::Joint => &[0, 1, 2],
                    BatchStats::PerFeature => &[0, 1],
                };
                let (mean, var) = moments(ctx, x, axes)?;
                self.track(ctx, mean, var)?;
                let centered = ctx.tape.sub(x, mean)?;
                let floored = ctx.tape.clamp_min(var, VARIANCE_FLOOR);
                let std = ctx.tape.sqrt(floored)?;
                ctx.tape.div(centered, std)?
            }
            (NormKind::Batch2d, Mode::Eval) => {
                let rm = ctx.buffer(self.running_mean.expect("batch2d has buffers")).clone();
                let rv = ctx.buffer(self.running_var.expect("batch2d has buffers")).clone();
                let std = rv.map(|v| v.max(VARIANCE_FLOOR).sqrt());
                let rm = ctx.constant(rm);
                let std = ctx.constant(std);
                let centered = ctx.tape.sub(x, rm)?;
                ctx.tape.div(centered, std)?
            }
            (NormKind::None, _) => unreachable!(),
        };
        let scale = ctx.param(self.scale.expect("affine present"));
        let shift = ctx.param(self.shift.expect("affine present"));
        let y = ctx.tape.mul(standardized, scale)?;
        ctx.tape.add(y, shift)
    }

    fn track(&self, ctx: &mut Ctx<'_>, mean: NodeId, var: NodeId) -> Result<()> {
        let (Some(rm_id), Some(rv_id)) = (self.running_mean, self.running_var) else {
            return Ok(());
        };
        let m = self.spec.momentum;
        let n = ctx.buffer(rm_id).len();
        let batch_mean = ctx.tape.value(mean).reshape(&[n])?;
        let batch_var = ctx.tape.value(var).reshape(&[n])?;
        let blend = |old: &Tensor, new: &Tensor| old.zip_map(new, "running_stats", |o, v| (1.0 - m) * o + m * v);
        let rm = blend(ctx.buffer(rm_id), &batch_mean)?;
        let rv = blend(ctx.buffer(rv_id), &batch_var)?;
        ctx.update_buffer(rm_id, rm);
        ctx.update_buffer(rv_id, rv);
        Ok(())
    }
}

/// Population mean and variance over `axes` (kept as extent-1 axes).
fn moments(ctx: &mut Ctx<'_>, x: NodeId, axes: &[usize]) -> Result<(NodeId, NodeId)> {
    let mean = ctx.tape.mean_axes(x, axes)?;
    let centered = ctx.tape.sub(x, mean)?;
    let sq = ctx.tape.square(centered)?;
    let var = ctx.tape.mean_axes(sq, axes)?;
    Ok((mean, var))
}

fn standardize(ctx: &mut Ctx<'_>, x: NodeId, axes: &[usize]) -> Result<NodeId> {
    let (mean, var) = moments(ctx, x, axes)?;
    let centered = ctx.tape.sub(x, mean)?;
    let floored = ctx.tape.clamp_min(var, VARIANCE_FLOOR);
    let std = ctx.tape.sqrt(floored)?;
    ctx.tape.div(centered, std)
}
