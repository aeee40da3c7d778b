use tsmixer::autodiff::{grad_check, NodeId, Tape};
use tsmixer::layers::{
    forward_once, rev_in_normalize, BatchStats, ConditionalFeatureMixing, ConditionalMixerLayer, Ctx, FeatureMixing,
    Init, Linear, MixerLayer, Norm2d, NormKind, NormPlacement, NormSpec, TimeMixing,
};
use tsmixer::params::{ParamId, ParamStore};
use tsmixer::rng::SeededRng;
use tsmixer::tensor::{self, Mode, Tensor};
use tsmixer::Result;

struct Stores {
    params: ParamStore,
    buffers: ParamStore,
    rng: SeededRng,
}

impl Stores {
    fn new(seed: u64) -> Self {
        Self {
            params: ParamStore::new(),
            buffers: ParamStore::new(),
            rng: SeededRng::new(seed),
        }
    }

    fn init(&mut self) -> Init<'_> {
        Init {
            params: &mut self.params,
            buffers: &mut self.buffers,
            rng: &mut self.rng,
        }
    }

    fn run(&self, mode: Mode, f: impl FnOnce(&mut Ctx<'_>) -> Result<NodeId>) -> Tensor {
        let mut rng = SeededRng::new(99);
        forward_once(&self.params, &self.buffers, mode, &mut rng, f).unwrap().0
    }

    fn zero(&mut self, ids: &[ParamId]) {
        for &id in ids {
            let shape = self.params.get(id).shape().to_vec();
            self.params.set(id, Tensor::zeros(&shape).unwrap()).unwrap();
        }
    }

    fn randomize(&mut self, seed: u64) {
        let mut rng = SeededRng::new(seed);
        for t in self.params.tensors_mut() {
            *t = Tensor::random_uniform(t.shape(), -0.8, 0.8, &mut rng).unwrap();
        }
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::random_normal(shape, &mut SeededRng::new(seed)).unwrap()
}

fn layer_norm_oracle(x: &Tensor) -> Tensor {
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = x.clone();
    for s in 0..b {
        let vals: Vec<f64> = (0..l * c).map(|k| x.data()[s * l * c + k]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        let sd = v.max(1e-8).sqrt();
        for (k, v) in vals.iter().enumerate() {
            out.data_mut()[s * l * c + k] = (v - m) / sd;
        }
    }
    out
}

#[test]
fn temporal_projection_identity_and_constants() {
    let mut st = Stores::new(0);
    let lin = Linear::new(&mut st.init(), "tp", 4, 4).unwrap();
    st.params.set(lin.weight, Tensor::identity(4).unwrap()).unwrap();
    let x = randn(&[4, 3], 1);
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        lin.along_time(ctx, x)
    });
    assert_eq!(y, x);

    let mut st = Stores::new(0);
    let lin = Linear::new(&mut st.init(), "tp", 5, 2).unwrap();
    st.zero(&[lin.weight]);
    st.params
        .set(lin.bias, Tensor::new(&[2], vec![1.0, 2.0]).unwrap())
        .unwrap();
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(randn(&[5, 3], 2));
        lin.along_time(ctx, x)
    });
    assert_eq!(y.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
}

#[test]
fn temporal_projection_loop_oracle_and_permutation() {
    let mut st = Stores::new(3);
    let lin = Linear::new(&mut st.init(), "tp", 6, 3).unwrap();
    st.randomize(4);
    let (w, b) = (st.params.get(lin.weight).clone(), st.params.get(lin.bias).clone());
    let x = randn(&[2, 6, 4], 5);
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        lin.along_time(ctx, x)
    });
    for s in 0..2 {
        for i in 0..3 {
            for c in 0..4 {
                let mut acc = b.data()[i];
                for t in 0..6 {
                    acc += w.at2(i, t) * x.at3(s, t, c);
                }
                assert!((y.at3(s, i, c) - acc).abs() < 1e-12);
            }
        }
    }
    // Columns permuted in, columns permuted out.
    let perm = [2, 0, 3, 1];
    let mut xp = x.clone();
    for s in 0..2 {
        for t in 0..6 {
            for (k, &p) in perm.iter().enumerate() {
                xp.set3(s, t, k, x.at3(s, t, p));
            }
        }
    }
    let yp = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(xp.clone());
        lin.along_time(ctx, x)
    });
    for s in 0..2 {
        for i in 0..3 {
            for (k, &p) in perm.iter().enumerate() {
                assert_eq!(yp.at3(s, i, k), y.at3(s, i, p));
            }
        }
    }
}

#[test]
fn time_mixing_zero_weights() {
    let x = randn(&[2, 5, 3], 6);
    // Post placement with zero weights leaves only the normalization.
    let mut st = Stores::new(0);
    let tm = TimeMixing::new(
        &mut st.init(),
        "tm",
        5,
        3,
        NormSpec::new(NormKind::Layer),
        NormPlacement::Post,
        0.3,
    )
    .unwrap();
    st.zero(&[tm.fc.weight, tm.fc.bias]);
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        tm.forward(ctx, x)
    });
    assert!(y.max_abs_diff(&layer_norm_oracle(&x)).unwrap() < 1e-14);

    for placement in [NormPlacement::Pre, NormPlacement::Post] {
        let mut st = Stores::new(0);
        let tm = TimeMixing::new(
            &mut st.init(),
            "tm",
            5,
            3,
            NormSpec::new(NormKind::None),
            placement,
            0.0,
        )
        .unwrap();
        st.zero(&[tm.fc.weight, tm.fc.bias]);
        let y = st.run(Mode::Train, |ctx| {
            let x = ctx.constant(x.clone());
            tm.forward(ctx, x)
        });
        assert_eq!(y, x);
    }
}

#[test]
fn time_mixing_stepwise_oracle() {
    let mut st = Stores::new(1);
    let tm = TimeMixing::new(
        &mut st.init(),
        "tm",
        4,
        3,
        NormSpec::new(NormKind::Layer),
        NormPlacement::Post,
        0.0,
    )
    .unwrap();
    st.randomize(2);
    let x = randn(&[2, 4, 3], 7);
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        tm.forward(ctx, x)
    });
    let w = st.params.get(tm.fc.weight);
    let b = st.params.get(tm.fc.bias);
    let scale = st.params.get(tm.norm.scale.unwrap());
    let shift = st.params.get(tm.norm.shift.unwrap());
    let mut sum = x.clone();
    for s in 0..2 {
        for i in 0..4 {
            for c in 0..3 {
                let mut acc = b.data()[i];
                for t in 0..4 {
                    acc += w.at2(i, t) * x.at3(s, t, c);
                }
                sum.set3(s, i, c, x.at3(s, i, c) + acc.max(0.0));
            }
        }
    }
    let mut expect = layer_norm_oracle(&sum);
    for s in 0..2 {
        for i in 0..4 {
            for c in 0..3 {
                expect.set3(s, i, c, expect.at3(s, i, c) * scale.at2(i, c) + shift.at2(i, c));
            }
        }
    }
    assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
}

#[test]
fn feature_mixing_identity_and_row_oracle() {
    let x = randn(&[2, 4, 3], 8);
    let mut st = Stores::new(0);
    let fm = FeatureMixing::new(
        &mut st.init(),
        "fm",
        4,
        3,
        5,
        3,
        NormSpec::new(NormKind::None),
        NormPlacement::Pre,
        0.0,
    )
    .unwrap();
    st.zero(&[fm.fc2.weight, fm.fc2.bias]);
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        fm.forward(ctx, x)
    });
    assert_eq!(y, x);

    // Width change 3 -> 2 through the projected skip path.
    let mut st = Stores::new(1);
    let fm = FeatureMixing::new(
        &mut st.init(),
        "fm",
        4,
        3,
        5,
        2,
        NormSpec::new(NormKind::None),
        NormPlacement::Pre,
        0.0,
    )
    .unwrap();
    st.randomize(3);
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        fm.forward(ctx, x)
    });
    assert_eq!(y.shape(), &[2, 4, 2]);
    let p = |id: ParamId| st.params.get(id).clone();
    let (w1, b1, w2, b2) = (p(fm.fc1.weight), p(fm.fc1.bias), p(fm.fc2.weight), p(fm.fc2.bias));
    let proj = fm.project.as_ref().unwrap();
    let (wp, bp) = (p(proj.weight), p(proj.bias));
    for s in 0..2 {
        for r in 0..4 {
            let row: Vec<f64> = (0..3).map(|c| x.at3(s, r, c)).collect();
            let hidden: Vec<f64> = (0..5)
                .map(|h| (b1.data()[h] + (0..3).map(|c| w1.at2(h, c) * row[c]).sum::<f64>()).max(0.0))
                .collect();
            for o in 0..2 {
                let branch = b2.data()[o] + (0..5).map(|h| w2.at2(o, h) * hidden[h]).sum::<f64>();
                let skip = bp.data()[o] + (0..3).map(|c| wp.at2(o, c) * row[c]).sum::<f64>();
                assert!((y.at3(s, r, o) - (skip + branch)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn feature_mixing_single_row_and_row_permutation() {
    let mut st = Stores::new(2);
    let fm = FeatureMixing::new(
        &mut st.init(),
        "fm",
        3,
        2,
        4,
        2,
        NormSpec::new(NormKind::None),
        NormPlacement::Pre,
        0.0,
    )
    .unwrap();
    st.randomize(5);
    let x = randn(&[1, 3, 2], 9);
    let y = st.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        fm.forward(ctx, x)
    });
    let mut st1 = Stores::new(2);
    let fm1 = FeatureMixing::new(
        &mut st1.init(),
        "fm",
        1,
        2,
        4,
        2,
        NormSpec::new(NormKind::None),
        NormPlacement::Pre,
        0.0,
    )
    .unwrap();
    st1.randomize(5);
    for r in [2, 0, 1] {
        let row = Tensor::new(&[1, 1, 2], vec![x.at3(0, r, 0), x.at3(0, r, 1)]).unwrap();
        let yr = st1.run(Mode::Eval, |ctx| {
            let x = ctx.constant(row.clone());
            fm1.forward(ctx, x)
        });
        assert!((yr.data()[0] - y.at3(0, r, 0)).abs() < 1e-14);
        assert!((yr.data()[1] - y.at3(0, r, 1)).abs() < 1e-14);
    }
}

#[test]
fn conditional_feature_mixing_cases() {
    let x = randn(&[2, 3, 2], 10);
    // No statics: identical to plain feature mixing with the same seed.
    let mut a = Stores::new(4);
    let cfm = ConditionalFeatureMixing::new(
        &mut a.init(),
        "c",
        3,
        2,
        0,
        5,
        NormSpec::new(NormKind::Layer),
        NormPlacement::Post,
        0.0,
    )
    .unwrap();
    let mut b = Stores::new(4);
    let fm = FeatureMixing::new(
        &mut b.init(),
        "c.mix",
        3,
        2,
        5,
        5,
        NormSpec::new(NormKind::Layer),
        NormPlacement::Post,
        0.0,
    )
    .unwrap();
    let ya = a.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        cfm.forward(ctx, x, None)
    });
    let yb = b.run(Mode::Eval, |ctx| {
        let x = ctx.constant(x.clone());
        fm.forward(ctx, x)
    });
    assert_eq!(ya, yb);

    // Live conditioning.
    let mut st = Stores::new(6);
    let cfm = ConditionalFeatureMixing::new(
        &mut st.init(),
        "c",
        3,
        2,
        2,
        4,
        NormSpec::new(NormKind::Layer),
        NormPlacement::Post,
        0.0,
    )
    .unwrap();
    st.randomize(7);
    let run = |s: Vec<f64>| {
        st.run(Mode::Eval, |ctx| {
            let xn = ctx.constant(x.clone());
            let sn = ctx.constant(Tensor::new(&[2, 1, 2], s).unwrap());
            cfm.forward(ctx, xn, Some(sn))
        })
    };
    let y1 = run(vec![0.0, 1.0, 0.0, 1.0]);
    let y2 = run(vec![2.0, -1.0, 2.0, -1.0]);
    assert_eq!(y1.shape(), &[2, 3, 4]);
    assert!(y1.max_abs_diff(&y2).unwrap() > 1e-6);

    // Zero statics through a zero static branch: the static half is a constant block.
    let mut st = Stores::new(6);
    let cfm = ConditionalFeatureMixing::new(
        &mut st.init(),
        "c",
        3,
        2,
        2,
        4,
        NormSpec::new(NormKind::None),
        NormPlacement::Post,
        0.0,
    )
    .unwrap();
    st.randomize(7);
    let branch = cfm.statics.as_ref().unwrap();
    let zeros: Vec<ParamId> = [&branch.fc1, &branch.fc2]
        .iter()
        .flat_map(|l| [l.weight, l.bias])
        .chain(branch.project.iter().flat_map(|l| [l.weight, l.bias]))
        .collect();
    st.zero(&zeros);
    let v = st.run(Mode::Eval, |ctx| {
        let sn = ctx.constant(Tensor::zeros(&[2, 1, 2]).unwrap());
        let e = ctx.tape.expand(sn, &[2, 3, 2])?;
        branch.forward(ctx, e)
    });
    let padded = tensor::concat_last(&x, &v).unwrap();
    let direct = st.run(Mode::Eval, |ctx| {
        let p = ctx.constant(padded.clone());
        cfm.mix.forward(ctx, p)
    });
    let y = st.run(Mode::Eval, |ctx| {
        let xn = ctx.constant(x.clone());
        let sn = ctx.constant(Tensor::zeros(&[2, 1, 2]).unwrap());
        cfm.forward(ctx, xn, Some(sn))
    });
    assert_eq!(y, direct);
    for s in 0..2 {
        for r in 1..3 {
            for h in 0..4 {
                assert_eq!(v.at3(s, r, h), v.at3(s, 0, h));
            }
        }
    }
}

#[test]
fn mixer_layers_compose_and_collapse() {
    let x = randn(&[3, 4, 3], 11);
    let mut st = Stores::new(8);
    let spec = NormSpec::new(NormKind::Batch2d);
    let time = TimeMixing::new(&mut st.init(), "t", 4, 3, spec, NormPlacement::Pre, 0.0).unwrap();
    let feature = FeatureMixing::new(&mut st.init(), "f", 4, 3, 6, 3, spec, NormPlacement::Pre, 0.0).unwrap();
    let mix = MixerLayer {
        time: time.clone(),
        feature: feature.clone(),
    };
    st.randomize(9);
    let y = st.run(Mode::Train, |ctx| {
        let xn = ctx.constant(x.clone());
        mix.forward(ctx, xn)
    });
    let chained = st.run(Mode::Train, |ctx| {
        let xn = ctx.constant(x.clone());
        let t = time.forward(ctx, xn)?;
        feature.forward(ctx, t)
    });
    assert_eq!(y, chained);

    let cmix = ConditionalMixerLayer {
        time: time.clone(),
        feature: ConditionalFeatureMixing {
            statics: None,
            mix: feature.clone(),
        },
    };
    let yc = st.run(Mode::Train, |ctx| {
        let xn = ctx.constant(x.clone());
        cmix.forward(ctx, xn, None)
    });
    assert_eq!(yc, y);

    let all: Vec<ParamId> = [&time.fc, &feature.fc1, &feature.fc2]
        .iter()
        .flat_map(|l| [l.weight, l.bias])
        .collect();
    st.zero(&all);
    let y0 = st.run(Mode::Eval, |ctx| {
        let xn = ctx.constant(x.clone());
        mix.forward(ctx, xn)
    });
    assert_eq!(y0, x);
}

#[test]
fn norm_moments_and_affine() {
    let x = randn(&[3, 5, 4], 12).map(|v| 3.0 * v + 1.0);
    for (kind, stats) in [
        (NormKind::Layer, BatchStats::Joint),
        (NormKind::Batch2d, BatchStats::Joint),
        (NormKind::Batch2d, BatchStats::PerFeature),
    ] {
        let mut st = Stores::new(0);
        let spec = NormSpec {
            stats,
            ..NormSpec::new(kind)
        };
        let norm = Norm2d::new(&mut st.init(), "n", 5, 4, spec).unwrap();
        let y = st.run(Mode::Train, |ctx| {
            let xn = ctx.constant(x.clone());
            norm.forward(ctx, xn)
        });
        let axes: &[usize] = match (kind, stats) {
            (NormKind::Layer, _) => &[1, 2],
            (_, BatchStats::Joint) => &[0, 1, 2],
            _ => &[0, 1],
        };
        let m = tensor::mean_axes(&y, axes).unwrap();
        let v = tensor::mean_axes(&y.map(|v| v * v), axes).unwrap();
        assert!(m.data().iter().all(|m| m.abs() < 1e-10), "{kind:?}");
        assert!(v.data().iter().all(|v| (v - 1.0).abs() < 1e-10), "{kind:?}");

        let shift = norm.shift.unwrap();
        st.params.set(shift, Tensor::full(&[5, 4], 5.0).unwrap()).unwrap();
        let y = st.run(Mode::Train, |ctx| {
            let xn = ctx.constant(x.clone());
            norm.forward(ctx, xn)
        });
        assert!((y.mean() - 5.0).abs() < 1e-10);
    }

    let mut st = Stores::new(0);
    let norm = Norm2d::new(&mut st.init(), "n", 4, 2, NormSpec::new(NormKind::Layer)).unwrap();
    let y = st.run(Mode::Train, |ctx| {
        let xn = ctx.constant(Tensor::full(&[2, 4, 2], 3.5).unwrap());
        norm.forward(ctx, xn)
    });
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_norm_needs_two_samples_in_training() {
    let mut st = Stores::new(0);
    let norm = Norm2d::new(&mut st.init(), "n", 3, 2, NormSpec::new(NormKind::Batch2d)).unwrap();
    let mut rng = SeededRng::new(0);
    let r = forward_once(&st.params, &st.buffers, Mode::Train, &mut rng, |ctx| {
        let xn = ctx.constant(randn(&[1, 3, 2], 1));
        norm.forward(ctx, xn)
    });
    assert!(r.unwrap_err().to_string().contains("layer"));
}

#[test]
fn dropout_is_inactive_in_eval() {
    let mut st = Stores::new(3);
    let fm = FeatureMixing::new(
        &mut st.init(),
        "fm",
        4,
        3,
        8,
        3,
        NormSpec::new(NormKind::None),
        NormPlacement::Pre,
        0.5,
    )
    .unwrap();
    let x = randn(&[2, 4, 3], 13);
    let a = st.run(Mode::Eval, |ctx| {
        let xn = ctx.constant(x.clone());
        fm.forward(ctx, xn)
    });
    let b = st.run(Mode::Eval, |ctx| {
        let xn = ctx.constant(x.clone());
        fm.forward(ctx, xn)
    });
    assert_eq!(a, b);
    let mut rng = SeededRng::new(1);
    let t = forward_once(&st.params, &st.buffers, Mode::Train, &mut rng, |ctx| {
        let xn = ctx.constant(x.clone());
        fm.forward(ctx, xn)
    })
    .unwrap()
    .0;
    assert!(t.max_abs_diff(&a).unwrap() > 1e-9);
}

/// Mean of `output * weights`, so every output element feeds the loss.
fn weighted_loss(tape: &mut Tape, y: NodeId, seed: u64) -> Result<NodeId> {
    let w = Tensor::random_normal(tape.shape(y), &mut SeededRng::new(seed))?;
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.mean(p))
}

fn check_layer(st: &Stores, mode: Mode, f: impl Fn(&mut Ctx<'_>) -> Result<NodeId>) -> f64 {
    let params = st.params.tensors().to_vec();
    grad_check(
        |tape, ids| {
            let mut rng = SeededRng::new(5);
            let mut ctx = Ctx::new(tape, ids, &st.buffers, mode, &mut rng);
            let y = f(&mut ctx)?;
            drop(ctx);
            weighted_loss(tape, y, 77)
        },
        &params,
        1e-5,
    )
    .unwrap()
}

#[test]
fn every_layer_passes_grad_check() {
    let x = randn(&[3, 4, 3], 14);
    let s = randn(&[3, 1, 2], 15);
    let mut results = Vec::new();
    for kind in [NormKind::Batch2d, NormKind::Layer, NormKind::None] {
        for placement in [NormPlacement::Pre, NormPlacement::Post] {
            let spec = NormSpec::new(kind);
            let mut st = Stores::new(1);
            let tm = TimeMixing::new(&mut st.init(), "tm", 4, 3, spec, placement, 0.0).unwrap();
            let fm = FeatureMixing::new(&mut st.init(), "fm", 4, 3, 5, 2, spec, placement, 0.0).unwrap();
            let cfm = ConditionalFeatureMixing::new(&mut st.init(), "cfm", 4, 2, 2, 3, spec, placement, 0.0).unwrap();
            let lin = Linear::new(&mut st.init(), "tp", 4, 2).unwrap();
            st.randomize(2);
            let err = check_layer(&st, Mode::Train, |ctx| {
                let xn = ctx.constant(x.clone());
                let sn = ctx.constant(s.clone());
                let h = tm.forward(ctx, xn)?;
                let h = fm.forward(ctx, h)?;
                let h = cfm.forward(ctx, h, Some(sn))?;
                lin.along_time(ctx, h)
            });
            results.push((kind, placement, err));
        }
    }
    for (kind, placement, err) in results {
        assert!(err < 1e-4, "{kind:?} {placement:?}: {err}");
    }
}

#[test]
fn rev_in_denormalization_passes_grad_check() {
    let x = randn(&[2, 6, 2], 16).map(|v| 2.0 * v + 3.0);
    let (_, state) = rev_in_normalize(&x).unwrap();
    let y0 = randn(&[2, 3, 2], 17);
    let err = grad_check(
        |tape, ids| {
            let y = state.denormalize_node(tape, ids[0])?;
            weighted_loss(tape, y, 3)
        },
        &[y0],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}
