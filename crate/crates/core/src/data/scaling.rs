//! Global (per-variate, train-fitted) and local (per-window) scaling.

use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};
use crate::layers::VARIANCE_FLOOR;
use crate::tensor::{self, Tensor};

/// Per-column mean and standard deviation of the time-varying columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits on rows `train` only.
    pub fn fit(frame: &SeriesFrame, train: Range<usize>) -> Result<Self> {
        if train.is_empty() || train.end > frame.steps() {
            return Err(Error::Precondition(format!(
                "training rows {train:?} invalid for a frame of {} steps",
                frame.steps()
            )));
        }
        let n = frame.columns().len();
        let rows = train.len() as f64;
        let v = frame.values();
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for t in train.clone() {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += v.at2(t, j);
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        for t in train {
            for (j, s) in var.iter_mut().enumerate() {
                let d = v.at2(t, j) - mean[j];
                *s += d * d;
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let var = s / rows;
                if var < VARIANCE_FLOOR {
                    warn!(
                        "column `{}` has (near) zero variance on the training rows; flooring",
                        frame.columns()[j].name
                    );
                }
                var.max(VARIANCE_FLOOR).sqrt()
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        let n = frame.columns().len();
        if self.mean.len() != n {
            return Err(Error::dim("Scaler::transform", &[self.mean.len()], &[n]));
        }
        let mut values = frame.values().clone();
        for row in values.data_mut().chunks_mut(n) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / self.std[j];
            }
        }
        frame.with_values(values)
    }

    /// Maps standardized values of the leading `width` columns back to
    /// original units; `t` is `[.., width]`.
    pub fn invert_leading(&self, t: &Tensor) -> Result<Tensor> {
        let width = *t.shape().last().unwrap();
        if width > self.mean.len() {
            return Err(Error::dim("Scaler::invert", t.shape(), &[self.mean.len()]));
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(width) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = *x * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }

    /// Standardizes the leading columns of `t: [.., width]`.
    pub fn apply_leading(&self, t: &Tensor, offset: usize) -> Result<Tensor> {
        let width = *t.shape().last().unwrap();
        if offset + width > self.mean.len() {
            return Err(Error::dim("Scaler::apply", t.shape(), &[self.mean.len()]));
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(width) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[offset + j]) / self.std[offset + j];
            }
        }
        Ok(out)
    }
}

/// Standardizes every time-varying column with statistics of the `train` rows.
pub fn global_standardize(frame: &SeriesFrame, train: Range<usize>) -> Result<(SeriesFrame, Scaler)> {
    let scaler = Scaler::fit(frame, train)?;
    Ok((scaler.transform(frame)?, scaler))
}

/// Divides each (sample, variate) series of `batch: [B, L, C]` by its mean
/// over the window. Series with a nonpositive mean keep scale 1.
/// Returns the scaled batch and the `[B, 1, C]` scales.
pub fn mean_scale_local(batch: &Tensor) -> Result<(Tensor, Tensor)> {
    if batch.rank() != 3 {
        return Err(Error::Rank {
            op: "mean_scale_local",
            got: batch.rank(),
            expected: "rank 3 [batch, time, variates]",
        });
    }
    let mut scales = tensor::mean_axes(batch, &[1])?;
    let mut fallback = 0usize;
    for s in scales.data_mut() {
        if !(*s > 0.0) {
            *s = 1.0;
            fallback += 1;
        }
    }
    if fallback > 0 {
        warn!("{fallback} series had a nonpositive window mean; using scale 1");
    }
    Ok((tensor::div_broadcast(batch, &scales)?, scales))
}

/// Inverse of [`mean_scale_local`] applied to a forecast `[B, T, C]`.
pub fn mean_rescale(forecast: &Tensor, scales: &Tensor) -> Result<Tensor> {
    tensor::mul_broadcast(forecast, scales)
}
