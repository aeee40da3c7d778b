//! Time mixing, feature mixing, and their static-conditioned variants.

use serde::{Deserialize, Serialize};

use super::{Ctx, Init, Linear, Norm2d, NormSpec};
use crate::autodiff::NodeId;
use crate::error::{Error, Result};

/// Where the normalization sits relative to the residual branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// `x + branch(norm(x))`; keeps the input scale on the skip path.
    Pre,
    /// `norm(x + branch(x))`.
    Post,
}

/// Residual single-layer MLP over the time axis, shared by all columns.
#[derive(Debug, Clone)]
pub struct TimeMixing {
    pub fc: Linear,
    pub norm: Norm2d,
    pub placement: NormPlacement,
    pub dropout: f64,
}

impl TimeMixing {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        rows: usize,
        cols: usize,
        norm: NormSpec,
        placement: NormPlacement,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            fc: Linear::new(init, &format!("{name}.fc"), rows, rows)?,
            norm: Norm2d::new(init, &format!("{name}.norm"), rows, cols, norm)?,
            placement,
            dropout,
        })
    }

    /// `x: [B, rows, cols]` -> same shape.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        match self.placement {
            NormPlacement::Post => {
                let branch = self.branch(ctx, x)?;
                let sum = ctx.tape.add(x, branch)?;
                self.norm.forward(ctx, sum)
            }
            NormPlacement::Pre => {
                let normed = self.norm.forward(ctx, x)?;
                let branch = self.branch(ctx, normed)?;
                ctx.tape.add(x, branch)
            }
        }
    }

    fn branch(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        let h = self.fc.along_time(ctx, x)?;
        let h = ctx.tape.relu(h);
        ctx.dropout(h, self.dropout)
    }
}

/// Residual two-layer MLP over the feature axis, shared by all rows.
///
/// When the output width differs from the input width the skip path goes
/// through the linear `project` layer.
#[derive(Debug, Clone)]
pub struct FeatureMixing {
    pub fc1: Linear,
    pub fc2: Linear,
    pub project: Option<Linear>,
    pub norm: Norm2d,
    pub placement: NormPlacement,
    pub dropout: f64,
}

impl FeatureMixing {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        rows: usize,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        norm: NormSpec,
        placement: NormPlacement,
        dropout: f64,
    ) -> Result<Self> {
        let fc1 = Linear::new(init, &format!("{name}.fc1"), inputs, hidden)?;
        let fc2 = Linear::new(init, &format!("{name}.fc2"), hidden, outputs)?;
        let project = if inputs != outputs {
            Some(Linear::new(init, &format!("{name}.project"), inputs, outputs)?)
        } else {
            None
        };
        let norm_cols = match placement {
            NormPlacement::Pre => inputs,
            NormPlacement::Post => outputs,
        };
        let norm = Norm2d::new(init, &format!("{name}.norm"), rows, norm_cols, norm)?;
        Ok(Self {
            fc1,
            fc2,
            project,
            norm,
            placement,
            dropout,
        })
    }

    pub fn inputs(&self) -> usize {
        self.fc1.inputs
    }

    pub fn outputs(&self) -> usize {
        self.fc2.outputs
    }

    /// Learnable scalars excluding the norm affine.
    pub fn mixing_param_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
        let skip = if inputs != outputs {
            Linear::param_count(inputs, outputs)
        } else {
            0
        };
        Linear::param_count(inputs, hidden) + Linear::param_count(hidden, outputs) + skip
    }

    /// `x: [B, rows, inputs]` -> `[B, rows, outputs]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        if self.inputs() != self.outputs() && self.project.is_none() {
            return Err(Error::config(
                "feature_mixing",
                format!(
                    "width changes {} -> {} but no residual projection is configured",
                    self.inputs(),
                    self.outputs()
                ),
            ));
        }
        let skip = match &self.project {
            Some(p) => p.along_features(ctx, x)?,
            None => x,
        };
        match self.placement {
            NormPlacement::Post => {
                let branch = self.branch(ctx, x)?;
                let sum = ctx.tape.add(skip, branch)?;
                self.norm.forward(ctx, sum)
            }
            NormPlacement::Pre => {
                let normed = self.norm.forward(ctx, x)?;
                let branch = self.branch(ctx, normed)?;
                ctx.tape.add(skip, branch)
            }
        }
    }

    fn branch(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        let u = self.fc1.along_features(ctx, x)?;
        let u = ctx.tape.relu(u);
        let u = ctx.dropout(u, self.dropout)?;
        let v = self.fc2.along_features(ctx, u)?;
        ctx.dropout(v, self.dropout)
    }
}

/// Feature mixing conditioned on per-series static features.
///
/// Statics `[B, 1, S]` are repeated along time, mixed to width `H`, and
/// concatenated to the input before the main feature mixing. With no static
/// branch this is plain feature mixing.
#[derive(Debug, Clone)]
pub struct ConditionalFeatureMixing {
    pub statics: Option<FeatureMixing>,
    pub mix: FeatureMixing,
}

impl ConditionalFeatureMixing {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        rows: usize,
        inputs: usize,
        static_features: usize,
        hidden: usize,
        norm: NormSpec,
        placement: NormPlacement,
        dropout: f64,
    ) -> Result<Self> {
        let statics = if static_features > 0 {
            Some(FeatureMixing::new(
                init,
                &format!("{name}.static"),
                rows,
                static_features,
                hidden,
                hidden,
                norm,
                placement,
                dropout,
            )?)
        } else {
            None
        };
        let mix_inputs = inputs + if static_features > 0 { hidden } else { 0 };
        let mix = FeatureMixing::new(
            init,
            &format!("{name}.mix"),
            rows,
            mix_inputs,
            hidden,
            hidden,
            norm,
            placement,
            dropout,
        )?;
        Ok(Self { statics, mix })
    }

    pub fn mixing_param_count(inputs: usize, static_features: usize, hidden: usize) -> usize {
        if static_features > 0 {
            FeatureMixing::mixing_param_count(static_features, hidden, hidden)
                + FeatureMixing::mixing_param_count(inputs + hidden, hidden, hidden)
        } else {
            FeatureMixing::mixing_param_count(inputs, hidden, hidden)
        }
    }

    /// `x: [B, R, C]`, `statics: [B, 1, S]` -> `[B, R, H]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: NodeId, statics: Option<NodeId>) -> Result<NodeId> {
        let Some(branch) = &self.statics else {
            return self.mix.forward(ctx, x);
        };
        let s = statics.ok_or_else(|| {
            Error::config(
                "static_features",
                "model expects static features but none were supplied",
            )
        })?;
        let xs = ctx.tape.shape(x).to_vec();
        let ss = ctx.tape.shape(s).to_vec();
        if ss.len() != 3 || ss[0] != xs[0] || ss[1] != 1 {
            return Err(Error::dim("conditional_feature_mixing", &xs, &ss));
        }
        let expanded = ctx.tape.expand(s, &[xs[0], xs[1], ss[2]])?;
        let v = branch.forward(ctx, expanded)?;
        let joined = ctx.tape.concat_last(x, v)?;
        self.mix.forward(ctx, joined)
    }
}

/// Time mixing followed by feature mixing.
#[derive(Debug, Clone)]
pub struct MixerLayer {
    pub time: TimeMixing,
    pub feature: FeatureMixing,
}

impl MixerLayer {
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: NodeId) -> Result<NodeId> {
        let t = self.time.forward(ctx, x)?;
        self.feature.forward(ctx, t)
    }
}

/// Time mixing followed by conditional feature mixing.
#[derive(Debug, Clone)]
pub struct ConditionalMixerLayer {
    pub time: TimeMixing,
    pub feature: ConditionalFeatureMixing,
}

impl ConditionalMixerLayer {
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: NodeId, statics: Option<NodeId>) -> Result<NodeId> {
        let t = self.time.forward(ctx, x)?;
        self.feature.forward(ctx, t, statics)
    }
}
