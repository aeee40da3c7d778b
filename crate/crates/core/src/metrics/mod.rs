//! Scale-free forecast accuracy: RMSSE and its hierarchical weighted form.

mod hierarchy;

pub use hierarchy::{revenue_weights, wrmsse, HierarchySpec, Level, LevelScore, WrmsseReport};

use crate::error::{Error, Result};

/// Mean squared one-step difference of `history`, ignoring leading zeros
/// (periods before the series started).
pub fn rmsse_scale(history: &[f64], series: &str) -> Result<f64> {
    let start = history.iter().position(|&v| v != 0.0).unwrap_or(history.len());
    let active = &history[start..];
    if active.len() < 2 {
        return Err(Error::Metric {
            series: series.into(),
            reason: format!(
                "needs at least 2 observations after leading zeros, has {}",
                active.len()
            ),
        });
    }
    let n = (active.len() - 1) as f64;
    let scale = active.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / n;
    if !(scale > 0.0) {
        return Err(Error::Metric {
            series: series.into(),
            reason: "constant history gives a zero scale".into(),
        });
    }
    Ok(scale)
}

/// Root mean squared scaled error of a forecast against actuals, scaled by
/// the in-sample one-step naive error of `history`.
pub fn rmsse(forecast: &[f64], actual: &[f64], history: &[f64], series: &str) -> Result<f64> {
    if forecast.len() != actual.len() || forecast.is_empty() {
        return Err(Error::Metric {
            series: series.into(),
            reason: format!("forecast has {} steps, actuals have {}", forecast.len(), actual.len()),
        });
    }
    let scale = rmsse_scale(history, series)?;
    let mse = forecast.iter().zip(actual).map(|(f, a)| (f - a).powi(2)).sum::<f64>() / forecast.len() as f64;
    Ok((mse / scale).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_forecast_is_zero() {
        assert_eq!(rmsse(&[1.0, 2.0], &[1.0, 2.0], &[0.0, 1.0, 3.0], "s").unwrap(), 0.0);
    }

    #[test]
    fn naive_oracle() {
        // History steps 1,2,4 -> squared diffs 1, 4 -> scale 2.5.
        let h = [1.0, 2.0, 4.0];
        let r = rmsse(&[4.0, 4.0], &[5.0, 7.0], &h, "s").unwrap();
        assert!((r - ((1.0 + 9.0) / 2.0 / 2.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn leading_zeros_are_skipped() {
        let a = rmsse_scale(&[0.0, 0.0, 0.0, 2.0, 3.0, 5.0], "s").unwrap();
        let b = rmsse_scale(&[2.0, 3.0, 5.0], "s").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_history_is_an_error() {
        let e = rmsse(&[1.0], &[1.0], &[3.0, 3.0, 3.0], "store_7").unwrap_err();
        assert!(e.to_string().contains("store_7"));
    }

    #[test]
    fn scale_invariance() {
        let h = [1.0, 4.0, 2.0, 6.0];
        let a = rmsse(&[3.0, 5.0], &[2.0, 7.0], &h, "s").unwrap();
        let k = 3.7;
        let hs: Vec<f64> = h.iter().map(|v| v * k).collect();
        let b = rmsse(&[3.0 * k, 5.0 * k], &[2.0 * k, 7.0 * k], &hs, "s").unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
