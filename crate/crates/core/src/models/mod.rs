//! Forecasting model families built from the mixing layers.

mod checkpoint;
mod count;
pub mod theory;

pub use checkpoint::{provenance, Checkpoint, ColumnNames, MANIFEST_FILE, PARAMS_FILE};
pub use count::{mixing_param_count, norm_param_count, param_count};

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::data::mean_scale_local;
use crate::error::{Error, Result};
use crate::layers::{
    rev_in_normalize, BatchStats, ConditionalFeatureMixing, ConditionalMixerLayer, Ctx, FeatureMixing, Init, Linear,
    MixerLayer, NormKind, NormPlacement, NormSpec, RevInState, TimeMixing,
};
use crate::params::ParamStore;
use crate::rng::SeededRng;
use crate::tensor::{self, Mode, Tensor};

/// Offset added after softplus to keep distribution parameters positive.
pub const POSITIVE_OFFSET: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Single temporal projection shared across variates.
    Linear,
    /// Stacked time mixing, no feature mixing.
    TmixOnly,
    /// Stacked time + feature mixing.
    Tsmixer,
    /// Auxiliary-input variant with static and future covariates.
    TsmixerExt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    #[default]
    Point,
    NegativeBinomial,
}

fn one() -> usize {
    1
}

fn default_hidden() -> usize {
    64
}

fn default_blocks() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub lookback: usize,
    pub horizon: usize,
    /// Target variates `C`.
    #[serde(default = "one")]
    pub targets: usize,
    /// Historical covariates `C_x`.
    #[serde(default)]
    pub historical: usize,
    /// Future covariates `C_z` (extended family only).
    #[serde(default)]
    pub future: usize,
    /// Static features `C_s` (extended family only).
    #[serde(default)]
    pub statics: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    #[serde(default)]
    pub batch_stats: BatchStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<NormPlacement>,
    #[serde(default)]
    pub head: Head,
    #[serde(default)]
    pub rev_in: bool,
    #[serde(default)]
    pub mean_scale: bool,
}

impl ModelConfig {
    pub fn new(family: Family, lookback: usize, horizon: usize, targets: usize) -> Self {
        Self {
            family,
            lookback,
            horizon,
            targets,
            historical: 0,
            future: 0,
            statics: 0,
            hidden: default_hidden(),
            blocks: default_blocks(),
            dropout: 0.0,
            norm: None,
            batch_stats: BatchStats::Joint,
            placement: None,
            head: Head::Point,
            rev_in: false,
            mean_scale: false,
        }
    }

    /// Batch norm for the basic families, layer norm for the extended one.
    pub fn norm_kind(&self) -> NormKind {
        self.norm.unwrap_or(match self.family {
            Family::TsmixerExt => NormKind::Layer,
            _ => NormKind::Batch2d,
        })
    }

    pub fn norm_placement(&self) -> NormPlacement {
        self.placement.unwrap_or(match self.family {
            Family::TsmixerExt => NormPlacement::Post,
            _ => NormPlacement::Pre,
        })
    }

    pub fn norm_spec(&self) -> NormSpec {
        NormSpec {
            stats: self.batch_stats,
            ..NormSpec::new(self.norm_kind())
        }
    }

    /// Copy with every defaulted choice written out.
    pub fn resolved(&self) -> Self {
        Self {
            norm: Some(self.norm_kind()),
            placement: Some(self.norm_placement()),
            ..self.clone()
        }
    }

    /// Width of the lookback input, `C + C_x`.
    pub fn history_width(&self) -> usize {
        self.targets + self.historical
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.lookback", self.lookback),
            ("model.horizon", self.horizon),
            ("model.targets", self.targets),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.family != Family::Linear {
            if self.blocks == 0 {
                return Err(Error::config("model.blocks", "must be at least 1"));
            }
            if self.hidden == 0 && self.family != Family::TmixOnly {
                return Err(Error::config("model.hidden", "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "model.dropout",
                format!("{} outside [0, 1)", self.dropout),
            ));
        }
        if self.family != Family::TsmixerExt {
            if self.future > 0 || self.statics > 0 {
                return Err(Error::config(
                    "model.family",
                    "future covariates and static features require family `tsmixer_ext`",
                ));
            }
            if self.head == Head::NegativeBinomial {
                return Err(Error::config(
                    "model.head",
                    "the negative binomial head requires family `tsmixer_ext`",
                ));
            }
        }
        if self.rev_in && self.mean_scale {
            return Err(Error::config(
                "model.rev_in",
                "rev_in and mean_scale are mutually exclusive",
            ));
        }
        if self.rev_in && self.head == Head::NegativeBinomial {
            return Err(Error::config(
                "model.rev_in",
                "rev_in cannot be combined with the negative binomial head; use mean_scale",
            ));
        }
        Ok(())
    }
}

/// Batched model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `[B, L, C + C_x]`
    pub history: Tensor,
    /// `[B, T, C_z]`
    pub future: Option<Tensor>,
    /// `[B, 1, C_s]`
    pub statics: Option<Tensor>,
}

impl ModelInput {
    pub fn history(history: Tensor) -> Self {
        Self {
            history,
            future: None,
            statics: None,
        }
    }

    pub fn batch(&self) -> usize {
        self.history.shape()[0]
    }
}

/// Output nodes of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputNodes {
    /// `[B, T, C]`
    Point(NodeId),
    /// Mean and dispersion, each `[B, T, C]`.
    NegBin { mu: NodeId, alpha: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Forecast {
    Point(Tensor),
    NegBin { mu: Tensor, alpha: Tensor },
}

impl Forecast {
    /// Point forecast; the mean for a distributional head.
    pub fn point(&self) -> &Tensor {
        match self {
            Forecast::Point(t) => t,
            Forecast::NegBin { mu, .. } => mu,
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Arch {
    Linear {
        projection: Linear,
    },
    TmixOnly {
        blocks: Vec<TimeMixing>,
        projection: Linear,
    },
    Tsmixer {
        blocks: Vec<MixerLayer>,
        projection: Linear,
    },
    Ext {
        projection: Linear,
        history_mix: ConditionalFeatureMixing,
        future_mix: Option<ConditionalFeatureMixing>,
        blocks: Vec<ConditionalMixerLayer>,
        head: Linear,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    buffers: ParamStore,
    arch: Arch,
}

impl Model {
    /// Builds a model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut rng = SeededRng::new(seed);
        let mut init = Init {
            params: &mut params,
            buffers: &mut buffers,
            rng: &mut rng,
        };
        let arch = build(&config, &mut init)?;
        Ok(Self {
            config,
            params,
            buffers,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore {
        &mut self.buffers
    }

    /// Puts every parameter on `tape` as a leaf, in `ParamId` order.
    pub fn register(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.tensors().iter().map(|t| tape.param(t.clone())).collect()
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let c = &self.config;
        let h = input.history.shape();
        if h.len() != 3 || h[1] != c.lookback || h[2] != c.history_width() {
            return Err(Error::dim(
                "model input history",
                h,
                &[h.first().copied().unwrap_or(0), c.lookback, c.history_width()],
            ));
        }
        let b = h[0];
        match (&input.future, c.future) {
            (None, 0) => {}
            (Some(z), n) if n > 0 => {
                if z.shape() != [b, c.horizon, n] {
                    return Err(Error::dim("model input future", z.shape(), &[b, c.horizon, n]));
                }
            }
            (Some(_), _) => {
                return Err(Error::config(
                    "model.future",
                    "future covariates supplied but the model has none",
                ))
            }
            (None, n) => {
                return Err(Error::config(
                    "model.future",
                    format!("model expects {n} future covariates"),
                ))
            }
        }
        match (&input.statics, c.statics) {
            (None, 0) => {}
            (Some(s), n) if n > 0 => {
                if s.shape() != [b, 1, n] {
                    return Err(Error::dim("model input statics", s.shape(), &[b, 1, n]));
                }
            }
            (Some(_), _) => {
                return Err(Error::config(
                    "model.statics",
                    "static features supplied but the model has none",
                ))
            }
            (None, n) => {
                return Err(Error::config(
                    "model.statics",
                    format!("model expects {n} static features"),
                ))
            }
        }
        Ok(())
    }

    /// Emits the forward pass on `ctx.tape`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, input: &ModelInput) -> Result<OutputNodes> {
        self.check_input(input)?;
        let cfg = &self.config;
        let c = cfg.targets;
        let mut history = input.history.clone();
        let mut rev: Option<RevInState> = None;
        let mut scales: Option<Tensor> = None;
        let local_width = match cfg.family {
            Family::TsmixerExt => c,
            _ => cfg.history_width(),
        };
        if cfg.rev_in || cfg.mean_scale {
            let local = tensor::slice_last(&history, 0, local_width)?;
            let scaled = if cfg.rev_in {
                let (n, state) = rev_in_normalize(&local)?;
                rev = Some(state.leading(c)?);
                n
            } else {
                let (n, s) = mean_scale_local(&local)?;
                scales = Some(tensor::slice_last(&s, 0, c)?);
                n
            };
            history = if local_width < cfg.history_width() {
                let rest = tensor::slice_last(&history, local_width, cfg.history_width())?;
                tensor::concat_last(&scaled, &rest)?
            } else {
                scaled
            };
        }

        let x = ctx.constant(history);
        let raw = match &self.arch {
            Arch::Linear { projection } => projection.along_time(ctx, x)?,
            Arch::TmixOnly { blocks, projection } => {
                let mut h = x;
                for b in blocks {
                    h = b.forward(ctx, h)?;
                }
                projection.along_time(ctx, h)?
            }
            Arch::Tsmixer { blocks, projection } => {
                let mut h = x;
                for b in blocks {
                    h = b.forward(ctx, h)?;
                }
                projection.along_time(ctx, h)?
            }
            Arch::Ext {
                projection,
                history_mix,
                future_mix,
                blocks,
                head,
            } => {
                let s = input.statics.clone().map(|s| ctx.constant(s));
                let aligned = projection.along_time(ctx, x)?;
                let mut h = history_mix.forward(ctx, aligned, s)?;
                if let Some(fm) = future_mix {
                    let z = ctx.constant(input.future.clone().expect("checked above"));
                    let zp = fm.forward(ctx, z, s)?;
                    h = ctx.tape.concat_last(h, zp)?;
                }
                for b in blocks {
                    h = b.forward(ctx, h, s)?;
                }
                head.along_features(ctx, h)?
            }
        };

        let width = *ctx.tape.shape(raw).last().unwrap();
        match cfg.head {
            Head::Point => {
                let mut y = if width > c {
                    ctx.tape.slice_last(raw, 0, c)?
                } else {
                    raw
                };
                if let Some(state) = &rev {
                    y = state.denormalize_node(ctx.tape, y)?;
                }
                if let Some(s) = scales {
                    let s = ctx.constant(s);
                    y = ctx.tape.mul(y, s)?;
                }
                Ok(OutputNodes::Point(y))
            }
            Head::NegativeBinomial => {
                let m = ctx.tape.slice_last(raw, 0, c)?;
                let a = ctx.tape.slice_last(raw, c, 2 * c)?;
                let m = ctx.tape.softplus(m);
                let mut mu = ctx.tape.affine(m, 1.0, POSITIVE_OFFSET);
                let a = ctx.tape.softplus(a);
                let alpha = ctx.tape.affine(a, 1.0, POSITIVE_OFFSET);
                if let Some(s) = scales {
                    let s = ctx.constant(s);
                    mu = ctx.tape.mul(mu, s)?;
                }
                Ok(OutputNodes::NegBin { mu, alpha })
            }
        }
    }

    /// Evaluation-mode forecast.
    pub fn predict(&self, input: &ModelInput) -> Result<Forecast> {
        let mut tape = Tape::new();
        let ids = self.register(&mut tape);
        let mut rng = SeededRng::new(0);
        let mut ctx = Ctx::new(&mut tape, &ids, &self.buffers, Mode::Eval, &mut rng);
        let out = self.forward(&mut ctx, input)?;
        Ok(match out {
            OutputNodes::Point(y) => Forecast::Point(tape.value(y).clone()),
            OutputNodes::NegBin { mu, alpha } => Forecast::NegBin {
                mu: tape.value(mu).clone(),
                alpha: tape.value(alpha).clone(),
            },
        })
    }
}

fn build(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Arch> {
    let (l, t, w, hd) = (cfg.lookback, cfg.horizon, cfg.history_width(), cfg.hidden);
    let norm = cfg.norm_spec();
    let place = cfg.norm_placement();
    let drop = cfg.dropout;
    Ok(match cfg.family {
        Family::Linear => Arch::Linear {
            projection: Linear::new(init, "projection", l, t)?,
        },
        Family::TmixOnly => {
            let blocks = (0..cfg.blocks)
                .map(|k| TimeMixing::new(init, &format!("block{k}.time"), l, w, norm, place, drop))
                .collect::<Result<_>>()?;
            Arch::TmixOnly {
                blocks,
                projection: Linear::new(init, "projection", l, t)?,
            }
        }
        Family::Tsmixer => {
            let mut blocks = Vec::with_capacity(cfg.blocks);
            for k in 0..cfg.blocks {
                let time = TimeMixing::new(init, &format!("block{k}.time"), l, w, norm, place, drop)?;
                let feature = FeatureMixing::new(init, &format!("block{k}.feature"), l, w, hd, w, norm, place, drop)?;
                blocks.push(MixerLayer { time, feature });
            }
            Arch::Tsmixer {
                blocks,
                projection: Linear::new(init, "projection", l, t)?,
            }
        }
        Family::TsmixerExt => {
            let s = cfg.statics;
            let projection = Linear::new(init, "projection", l, t)?;
            let history_mix = ConditionalFeatureMixing::new(init, "history_mix", t, w, s, hd, norm, place, drop)?;
            let future_mix = if cfg.future > 0 {
                Some(ConditionalFeatureMixing::new(
                    init,
                    "future_mix",
                    t,
                    cfg.future,
                    s,
                    hd,
                    norm,
                    place,
                    drop,
                )?)
            } else {
                None
            };
            let mut width = if cfg.future > 0 { 2 * hd } else { hd };
            let mut blocks = Vec::with_capacity(cfg.blocks);
            for k in 0..cfg.blocks {
                let time = TimeMixing::new(init, &format!("block{k}.time"), t, width, norm, place, drop)?;
                let feature = ConditionalFeatureMixing::new(
                    init,
                    &format!("block{k}.feature"),
                    t,
                    width,
                    s,
                    hd,
                    norm,
                    place,
                    drop,
                )?;
                blocks.push(ConditionalMixerLayer { time, feature });
                width = hd;
            }
            let outputs = match cfg.head {
                Head::Point => cfg.targets,
                Head::NegativeBinomial => 2 * cfg.targets,
            };
            Arch::Ext {
                projection,
                history_mix,
                future_mix,
                blocks,
                head: Linear::new(init, "head", hd, outputs)?,
            }
        }
    })
}
