use super::{Ctx, Init};
use crate::autodiff::NodeId;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::tensor::Tensor;

/// Affine map `W x + b` with `W: [outputs, inputs]`, `b: [outputs]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Weights uniform in `±sqrt(1/inputs)`, zero bias.
    pub fn new(init: &mut Init<'_>, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        let bound = (1.0 / inputs as f64).sqrt();
        let w = Tensor::random_uniform(&[outputs, inputs], -bound, bound, init.rng)?;
        let weight = init.params.add(format!("{name}.weight"), w);
        let bias = init.params.add(format!("{name}.bias"), Tensor::zeros(&[outputs])?);
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn param_count(inputs: usize, outputs: usize) -> usize {
        inputs * outputs + outputs
    }

    fn check_extent(&self, ctx: &Ctx<'_>, x: NodeId, axis_from_end: usize) -> Result<()> {
        let shape = ctx.tape.shape(x);
        if shape.len() < 2 || shape[shape.len() - axis_from_end] != self.inputs {
            return Err(Error::dim("linear", shape, &[self.outputs, self.inputs]));
        }
        Ok(())
    }

    /// Temporal projection: acts on every column of `x: [.., rows=inputs, C]`,
    /// sharing the weights across columns. Output `[.., outputs, C]`.
    pub fn along_time(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        self.check_extent(ctx, x, 2)?;
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let y = ctx.tape.matmul(w, x)?;
        let col = ctx.tape.reshape(b, &[self.outputs, 1])?;
        ctx.tape.add(y, col)
    }

    /// Row-wise map: acts on every row of `x: [.., R, inputs]`. Output `[.., R, outputs]`.
    pub fn along_features(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        self.check_extent(ctx, x, 1)?;
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let wt = ctx.tape.transpose(w)?;
        let y = ctx.tape.matmul(x, wt)?;
        ctx.tape.add(y, b)
    }
}
