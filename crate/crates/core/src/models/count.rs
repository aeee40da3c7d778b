use super::{Family, Head, ModelConfig};
use crate::layers::{ConditionalFeatureMixing, FeatureMixing, Linear, Norm2d, NormKind, NormPlacement};

/// Learnable scalars excluding normalization affine parameters.
pub fn mixing_param_count(cfg: &ModelConfig) -> usize {
    let (l, t, w, h, k) = (cfg.lookback, cfg.horizon, cfg.history_width(), cfg.hidden, cfg.blocks);
    let projection = Linear::param_count(l, t);
    match cfg.family {
        Family::Linear => projection,
        Family::TmixOnly => k * Linear::param_count(l, l) + projection,
        Family::Tsmixer => k * (Linear::param_count(l, l) + FeatureMixing::mixing_param_count(w, h, w)) + projection,
        Family::TsmixerExt => {
            let s = cfg.statics;
            let mut total = projection + ConditionalFeatureMixing::mixing_param_count(w, s, h);
            let mut width = h;
            if cfg.future > 0 {
                total += ConditionalFeatureMixing::mixing_param_count(cfg.future, s, h);
                width = 2 * h;
            }
            for _ in 0..k {
                total += Linear::param_count(t, t) + ConditionalFeatureMixing::mixing_param_count(width, s, h);
                width = h;
            }
            let outputs = match cfg.head {
                Head::Point => cfg.targets,
                Head::NegativeBinomial => 2 * cfg.targets,
            };
            total + Linear::param_count(h, outputs)
        }
    }
}

/// Normalization affine scalars.
pub fn norm_param_count(cfg: &ModelConfig) -> usize {
    let kind = cfg.norm_kind();
    if kind == NormKind::None {
        return 0;
    }
    let (l, t, w, h, k) = (cfg.lookback, cfg.horizon, cfg.history_width(), cfg.hidden, cfg.blocks);
    let pre = cfg.norm_placement() == NormPlacement::Pre;
    let n = |rows: usize, cols: usize| Norm2d::param_count(kind, rows, cols);
    // Feature mixing normalizes its input width before, its output width after.
    let fm = |rows: usize, inputs: usize, outputs: usize| n(rows, if pre { inputs } else { outputs });
    let cfm = |rows: usize, inputs: usize| {
        if cfg.statics > 0 {
            fm(rows, cfg.statics, h) + fm(rows, inputs + h, h)
        } else {
            fm(rows, inputs, h)
        }
    };
    match cfg.family {
        Family::Linear => 0,
        Family::TmixOnly => k * n(l, w),
        Family::Tsmixer => k * (n(l, w) + fm(l, w, w)),
        Family::TsmixerExt => {
            let mut total = cfm(t, w);
            let mut width = h;
            if cfg.future > 0 {
                total += cfm(t, cfg.future);
                width = 2 * h;
            }
            for _ in 0..k {
                total += n(t, width) + cfm(t, width);
                width = h;
            }
            total
        }
    }
}

/// Total learnable scalars of a model built from `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    mixing_param_count(cfg) + norm_param_count(cfg)
}
