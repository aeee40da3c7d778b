//! Synthetic series with known structure.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Column, Role, SeriesFrame};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// One period of a random-phase waveform: a sinusoid plus a second harmonic
/// of random weight.
pub fn periodic_template(period: usize, amplitude: f64, rng: &mut SeededRng) -> Vec<f64> {
    let p1 = rng.uniform_range(0.0, 2.0 * PI);
    let p2 = rng.uniform_range(0.0, 2.0 * PI);
    let w2 = rng.uniform_range(0.0, 0.5);
    (0..period)
        .map(|k| {
            let u = 2.0 * PI * k as f64 / period as f64;
            amplitude * ((u + p1).sin() + w2 * (2.0 * u + p2).sin())
        })
        .collect()
}

/// `x(t) = template[t mod P]`.
pub fn periodic_values(period: usize, steps: usize, amplitude: f64, rng: &mut SeededRng) -> Vec<f64> {
    let template = periodic_template(period, amplitude, rng);
    (0..steps).map(|t| template[t % period]).collect()
}

/// First period from a template, then `x(t) = a * x(t - P) + c`.
pub fn affine_periodic_values(period: usize, a: f64, c: f64, steps: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut x = periodic_template(period, 1.0, rng);
    x.truncate(steps);
    for t in period..steps {
        x.push(a * x[t - period] + c);
    }
    x
}

/// Periodic component plus a random walk whose steps are clipped to
/// `[-lipschitz, lipschitz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendSeries {
    pub periodic: Vec<f64>,
    pub trend: Vec<f64>,
}

impl TrendSeries {
    pub fn values(&self) -> Vec<f64> {
        self.periodic.iter().zip(&self.trend).map(|(g, f)| g + f).collect()
    }
}

pub fn periodic_plus_trend_values(period: usize, lipschitz: f64, steps: usize, rng: &mut SeededRng) -> TrendSeries {
    let periodic = periodic_values(period, steps, 1.0, rng);
    let mut trend = Vec::with_capacity(steps);
    let mut level = rng.uniform_range(-1.0, 1.0);
    for _ in 0..steps {
        trend.push(level);
        level += (lipschitz * rng.normal()).clamp(-lipschitz, lipschitz);
    }
    TrendSeries { periodic, trend }
}

/// Nonlinear map from the lagged driver to the target.
pub fn crossvariate_link(x: f64) -> f64 {
    (1.5 * x).tanh()
}

/// Target that depends only on another variate:
/// `target(t) = link(driver(t - lag)) + noise * e(t)` with white-noise driver.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossvariateSeries {
    pub target: Vec<f64>,
    pub driver: Vec<f64>,
    pub lag: usize,
}

pub fn crossvariate_values(steps: usize, lag: usize, noise: f64, rng: &mut SeededRng) -> CrossvariateSeries {
    let raw: Vec<f64> = (0..steps + lag).map(|_| rng.normal()).collect();
    let target = (0..steps)
        .map(|t| {
            let e = if noise > 0.0 { noise * rng.normal() } else { 0.0 };
            crossvariate_link(raw[t]) + e
        })
        .collect();
    CrossvariateSeries {
        target,
        driver: raw[lag..].to_vec(),
        lag,
    }
}

/// Generator selection for [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Periodic { period: usize, amplitude: f64 },
    AffinePeriodic { period: usize, a: f64, c: f64 },
    PeriodicTrend { period: usize, lipschitz: f64 },
    Crossvariate { lag: usize, noise: f64 },
}

/// Builds a frame of `variates` independent target series, or for the
/// cross-variate kind one target plus its historical driver.
pub fn generate(kind: &SynthKind, steps: usize, variates: usize, rng: &mut SeededRng) -> Result<SeriesFrame> {
    if steps == 0 || variates == 0 {
        return Err(Error::config("synth", "steps and variates must be positive"));
    }
    let period_ok = |p: usize| {
        if p == 0 {
            Err(Error::config("synth.period", "must be at least 1"))
        } else {
            Ok(())
        }
    };
    let mut series: Vec<(String, Role, Vec<f64>)> = Vec::new();
    match kind {
        SynthKind::Periodic { period, amplitude } => {
            period_ok(*period)?;
            for j in 0..variates {
                series.push((
                    format!("x{j}"),
                    Role::Target,
                    periodic_values(*period, steps, *amplitude, rng),
                ));
            }
        }
        SynthKind::AffinePeriodic { period, a, c } => {
            period_ok(*period)?;
            for j in 0..variates {
                series.push((
                    format!("x{j}"),
                    Role::Target,
                    affine_periodic_values(*period, *a, *c, steps, rng),
                ));
            }
        }
        SynthKind::PeriodicTrend { period, lipschitz } => {
            period_ok(*period)?;
            if !(*lipschitz >= 0.0) {
                return Err(Error::config("synth.lipschitz", "must be nonnegative"));
            }
            for j in 0..variates {
                let s = periodic_plus_trend_values(*period, *lipschitz, steps, rng);
                series.push((format!("x{j}"), Role::Target, s.values()));
            }
        }
        SynthKind::Crossvariate { lag, noise } => {
            if *lag == 0 {
                return Err(Error::config("synth.lag", "must be at least 1"));
            }
            if !(*noise >= 0.0) {
                return Err(Error::config("synth.noise", "must be nonnegative"));
            }
            let s = crossvariate_values(steps, *lag, *noise, rng);
            series.push(("target".into(), Role::Target, s.target));
            series.push(("driver".into(), Role::Historical, s.driver));
        }
    }
    let n = series.len();
    let mut data = vec![0.0; steps * n];
    for (j, (_, _, v)) in series.iter().enumerate() {
        for (t, x) in v.iter().enumerate() {
            data[t * n + j] = *x;
        }
    }
    let columns = series
        .into_iter()
        .map(|(name, role, _)| Column { name, role })
        .collect();
    SeriesFrame::new(columns, Tensor::new(&[steps, n], data)?, vec![])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodicity_is_exact() {
        let mut rng = SeededRng::new(1);
        let x = periodic_values(7, 100, 2.0, &mut rng);
        for t in 7..100 {
            assert_eq!(x[t], x[t - 7]);
        }
    }

    #[test]
    fn affine_recursion() {
        let mut rng = SeededRng::new(2);
        let x = affine_periodic_values(5, 0.9, 0.3, 40, &mut rng);
        for t in 5..40 {
            assert!((x[t] - (0.9 * x[t - 5] + 0.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn trend_is_lipschitz() {
        let mut rng = SeededRng::new(3);
        let s = periodic_plus_trend_values(6, 0.05, 500, &mut rng);
        for t in 1..500 {
            assert!((s.trend[t] - s.trend[t - 1]).abs() <= 0.05 + 1e-15);
        }
    }

    #[test]
    fn noiseless_crossvariate_reconstructs() {
        let mut rng = SeededRng::new(4);
        let s = crossvariate_values(200, 6, 0.0, &mut rng);
        for t in 6..200 {
            assert_eq!(s.target[t], crossvariate_link(s.driver[t - 6]));
        }
    }

    #[test]
    fn same_seed_same_series() {
        let kind = SynthKind::PeriodicTrend {
            period: 12,
            lipschitz: 0.1,
        };
        let a = generate(&kind, 64, 2, &mut SeededRng::new(9)).unwrap();
        let b = generate(&kind, 64, 2, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
