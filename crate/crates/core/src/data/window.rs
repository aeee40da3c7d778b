use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Role, SeriesFrame};
use crate::error::{Error, Result};
use crate::models::ModelInput;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize, stride: usize) -> Result<Self> {
        let spec = Self {
            lookback,
            horizon,
            stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::config("window.lookback", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("window.horizon", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::config("window.stride", "must be at least 1"));
        }
        Ok(())
    }

    /// `floor((steps - L - T) / stride) + 1`, or 0 when the series is too short.
    pub fn count(&self, steps: usize) -> usize {
        let span = self.lookback + self.horizon;
        if steps < span {
            0
        } else {
            (steps - span) / self.stride + 1
        }
    }
}

/// One training example cut from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// First history row in the source frame.
    pub start: usize,
    /// `[L, C + C_x]`
    pub history: Tensor,
    /// `[T, C_z]`
    pub future: Option<Tensor>,
    /// `[1, C_s]`
    pub statics: Option<Tensor>,
    /// `[T, C]`
    pub target: Tensor,
}

fn cut(frame: &SeriesFrame, start: usize, spec: &WindowSpec) -> Result<Window> {
    let (l, t) = (spec.lookback, spec.horizon);
    let n = frame.columns().len();
    let c = frame.count(Role::Target);
    let hw = frame.history_width();
    let values = frame.values();
    let block = |rows: Range<usize>, cols: Range<usize>| -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            data.extend_from_slice(&values.data()[r * n + cols.start..r * n + cols.end]);
        }
        Tensor::new(&[rows.len(), cols.len()], data)
    };
    let future = if hw < n {
        Some(block(start + l..start + l + t, hw..n)?)
    } else {
        None
    };
    let statics = if frame.statics().is_empty() {
        None
    } else {
        let s: Vec<f64> = frame.statics().iter().map(|(_, v)| *v).collect();
        Some(Tensor::new(&[1, s.len()], s)?)
    };
    Ok(Window {
        start,
        history: block(start..start + l, 0..hw)?,
        future,
        statics,
        target: block(start + l..start + l + t, 0..c)?,
    })
}

/// Sliding windows over the whole frame.
pub fn make_windows(frame: &SeriesFrame, spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    let count = spec.count(frame.steps());
    if count == 0 {
        warn!(
            "series of {} steps is shorter than lookback + horizon = {}",
            frame.steps(),
            spec.lookback + spec.horizon
        );
    }
    (0..count).map(|k| cut(frame, k * spec.stride, spec)).collect()
}

/// Windows whose target rows lie entirely inside `targets`. History may
/// reach back before `targets.start` into earlier rows.
pub fn make_windows_for_targets(frame: &SeriesFrame, spec: &WindowSpec, targets: Range<usize>) -> Result<Vec<Window>> {
    spec.validate()?;
    if targets.end > frame.steps() {
        return Err(Error::Precondition(format!(
            "target rows {targets:?} exceed frame of {} steps",
            frame.steps()
        )));
    }
    let (l, t) = (spec.lookback, spec.horizon);
    let mut start = targets.start.saturating_sub(l);
    let mut out = Vec::new();
    while start + l + t <= targets.end {
        out.push(cut(frame, start, spec)?);
        start += spec.stride;
    }
    if out.is_empty() {
        warn!("no complete window has its targets inside rows {targets:?}");
    }
    Ok(out)
}

/// Windows stacked along a leading batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub history: Tensor,
    pub future: Option<Tensor>,
    pub statics: Option<Tensor>,
    pub target: Tensor,
}

impl WindowBatch {
    pub fn stack(windows: &[&Window]) -> Result<Self> {
        let collect = |f: &dyn Fn(&Window) -> Option<&Tensor>| -> Result<Option<Tensor>> {
            let parts: Option<Vec<&Tensor>> = windows.iter().map(|w| f(w)).collect();
            parts.map(|p| Tensor::stack(&p)).transpose()
        };
        Ok(Self {
            history: collect(&|w| Some(&w.history))?.expect("history always present"),
            future: collect(&|w| w.future.as_ref())?,
            statics: collect(&|w| w.statics.as_ref())?,
            target: collect(&|w| Some(&w.target))?.expect("target always present"),
        })
    }

    pub fn len(&self) -> usize {
        self.history.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self) -> ModelInput {
        ModelInput {
            history: self.history.clone(),
            future: self.future.clone(),
            statics: self.statics.clone(),
        }
    }

    /// Target columns of the history, `[B, L, C]`.
    pub fn history_targets(&self, targets: usize) -> Result<Tensor> {
        tensor::slice_last(&self.history, 0, targets)
    }
}
