//! Closed-form linear forecasters for structured series, and a checker that
//! measures them against generated data.
//!
//! Horizons are 1-based: row `i - 1` of `A` forecasts step `L + i`.

use std::fmt::Write as _;

use crate::data::synth;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{self, Tensor};

/// Absolute tolerance for forecasts that should be exact.
pub const EXACT_TOLERANCE: f64 = 1e-9;

/// `A x + b` applied along time: `x: [L, C]` or `[B, L, C]`, `a: [T, L]`,
/// `b: [T]`.
pub fn forward_linear(x: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.shape() != [a.shape()[0]] {
        return Err(Error::dim("forward_linear", a.shape(), b.shape()));
    }
    let y = tensor::matmul(a, x)?;
    tensor::add_broadcast(&y, &b.reshape(&[a.shape()[0], 1])?)
}

/// Weights forecasting `x(t) = a * x(t - P) + c` from a window of length `L`:
/// row `i` copies lookback column `L - P + (i mod P)` (1-based) scaled by `a`,
/// with bias `c`. With `a = 1, c = 0` this reproduces any `P`-periodic series
/// at every horizon; for other `(a, c)` it is exact for horizons below `P`.
pub fn construct_periodic_solution(
    period: usize,
    lookback: usize,
    horizon: usize,
    a: f64,
    c: f64,
) -> Result<(Tensor, Tensor)> {
    if period == 0 || period >= lookback || horizon == 0 {
        return Err(Error::Precondition(format!(
            "need 1 <= period < lookback and horizon >= 1, got period {period}, lookback {lookback}, horizon {horizon}"
        )));
    }
    let mut w = Tensor::zeros(&[horizon, lookback])?;
    for i in 1..=horizon {
        w.set2(i - 1, lookback - period - 1 + i % period, a);
    }
    Ok((w, Tensor::full(&[horizon], c)?))
}

/// Weights for a periodic series plus a `K`-Lipschitz trend, using the last
/// `P + 1` lags: `x(L) + x(L - P + (i mod P)) - x(L - P)`. The error at
/// horizon `i` is at most `K (i + min(i, P))`.
pub fn construct_theorem1_solution(period: usize, lookback: usize, horizon: usize) -> Result<(Tensor, Tensor)> {
    if period == 0 || lookback < period + 1 || horizon == 0 {
        return Err(Error::Precondition(format!(
            "need period >= 1, lookback >= period + 1 and horizon >= 1, got period {period}, lookback {lookback}, horizon {horizon}"
        )));
    }
    let o = lookback - period - 1;
    let mut w = Tensor::zeros(&[horizon, lookback])?;
    for i in 1..=horizon {
        let row = i - 1;
        for (col, delta) in [(o + period, 1.0), (o + i % period, 1.0), (o, -1.0)] {
            w.set2(row, col, w.at2(row, col) + delta);
        }
    }
    Ok((w, Tensor::zeros(&[horizon])?))
}

/// `K (i + min(i, P))`.
pub fn trend_error_bound(lipschitz: f64, horizon: usize, period: usize) -> f64 {
    lipschitz * (horizon + horizon.min(period)) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryOptions {
    pub period: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub lipschitz: f64,
    pub trials: usize,
    pub seed: u64,
    /// Perturbs every constructed solution; the checks must then fail.
    pub corrupt: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonResult {
    pub horizon: usize,
    pub max_error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub trial: usize,
    pub horizon: usize,
    pub error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub horizons: Vec<HorizonResult>,
    pub violations: Vec<Violation>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub options: TheoryOptions,
    pub checks: Vec<CheckResult>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn render(&self) -> String {
        let o = &self.options;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# tsmixer {} seed={} period={} lookback={} horizon={} lipschitz={} trials={}{}",
            env!("CARGO_PKG_VERSION"),
            o.seed,
            o.period,
            o.lookback,
            o.horizon,
            o.lipschitz,
            o.trials,
            if o.corrupt { " corrupt" } else { "" }
        );
        for c in &self.checks {
            let _ = writeln!(s, "check {}: {}", c.name, if c.passed() { "pass" } else { "FAIL" });
            let _ = writeln!(s, "  horizon max_error bound");
            for h in &c.horizons {
                let _ = writeln!(s, "  {} {:.6e} {:.6e}", h.horizon, h.max_error, h.bound);
            }
            for v in &c.violations {
                let _ = writeln!(
                    s,
                    "  violation trial={} horizon={} error={:.6e} bound={:.6e}",
                    v.trial, v.horizon, v.error, v.bound
                );
            }
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "pass" } else { "FAIL" });
        s
    }
}

fn corrupt(w: &mut Tensor) {
    let l = w.shape()[1];
    w.set2(0, l - 1, w.at2(0, l - 1) + 0.5);
}

fn run_check(
    name: &'static str,
    horizon: usize,
    trials: usize,
    mut trial: impl FnMut(usize) -> Result<(Tensor, Tensor, Tensor, Tensor)>,
    bound: impl Fn(usize) -> f64,
) -> Result<CheckResult> {
    let mut horizons: Vec<HorizonResult> = (1..=horizon)
        .map(|i| HorizonResult {
            horizon: i,
            max_error: 0.0,
            bound: bound(i),
        })
        .collect();
    let mut violations = Vec::new();
    for k in 0..trials {
        let (x, y, w, b) = trial(k)?;
        let pred = forward_linear(&x, &w, &b)?;
        for h in horizons.iter_mut() {
            let err = (pred.at2(h.horizon - 1, 0) - y.data()[h.horizon - 1]).abs();
            h.max_error = h.max_error.max(err);
            if !(err <= h.bound) {
                violations.push(Violation {
                    trial: k,
                    horizon: h.horizon,
                    error: err,
                    bound: h.bound,
                });
            }
        }
    }
    Ok(CheckResult {
        name,
        horizons,
        violations,
    })
}

fn split_series(values: &[f64], lookback: usize) -> Result<(Tensor, Tensor)> {
    let x = Tensor::new(&[lookback, 1], values[..lookback].to_vec())?;
    let y = Tensor::new(&[values.len() - lookback], values[lookback..].to_vec())?;
    Ok((x, y))
}

/// Runs the periodic, affine-periodic, and smooth-trend checks over random
/// series. Each trial draws from its own forked generator.
pub fn verify_theory(options: &TheoryOptions) -> Result<TheoryReport> {
    let TheoryOptions {
        period: p,
        lookback: l,
        horizon: t,
        lipschitz: k,
        trials,
        seed,
        corrupt: bad,
    } = *options;
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    if !(k >= 0.0) {
        return Err(Error::config("lipschitz", "must be nonnegative"));
    }
    let root = SeededRng::new(seed);
    let mut checks = Vec::new();

    let (w_per, b_per) = construct_periodic_solution(p, l, t, 1.0, 0.0)?;
    checks.push(run_check(
        "periodic",
        t,
        trials,
        |trial| {
            let mut rng = root.fork(1).fork(trial as u64);
            let values = synth::periodic_values(p, l + t, 1.0, &mut rng);
            let (x, y) = split_series(&values, l)?;
            let mut w = w_per.clone();
            if bad {
                corrupt(&mut w);
            }
            Ok((x, y, w, b_per.clone()))
        },
        |_| EXACT_TOLERANCE,
    )?);

    let affine_h = t.min(p - 1);
    checks.push(run_check(
        "affine_periodic",
        affine_h,
        if affine_h == 0 { 0 } else { trials },
        |trial| {
            let mut rng = root.fork(2).fork(trial as u64);
            let a = rng.uniform_range(0.5, 2.0);
            let c = rng.uniform_range(-3.0, 3.0);
            let values = synth::affine_periodic_values(p, a, c, l + affine_h, &mut rng);
            let (x, y) = split_series(&values, l)?;
            let (mut w, b) = construct_periodic_solution(p, l, affine_h, a, c)?;
            if bad {
                corrupt(&mut w);
            }
            Ok((x, y, w, b))
        },
        |_| EXACT_TOLERANCE,
    )?);

    let (w_trend, b_trend) = construct_theorem1_solution(p, l, t)?;
    checks.push(run_check(
        "smooth_trend",
        t,
        trials,
        |trial| {
            let mut rng = root.fork(3).fork(trial as u64);
            let s = synth::periodic_plus_trend_values(p, k, l + t, &mut rng);
            let (x, y) = split_series(&s.values(), l)?;
            let mut w = w_trend.clone();
            if bad {
                corrupt(&mut w);
            }
            Ok((x, y, w, b_trend.clone()))
        },
        |i| trend_error_bound(k, i, p) + EXACT_TOLERANCE,
    )?);

    Ok(TheoryReport {
        options: options.clone(),
        checks,
    })
}
