//! Objectives, the Adam optimizer, and the mini-batch training loop.

mod adam;
pub mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{mae_metric, mse_loss, nb_nll_loss};

use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::data::{Window, WindowBatch};
use crate::error::{Error, Result};
use crate::layers::{apply_updates, Ctx};
use crate::models::{Forecast, Model, OutputNodes};
use crate::params::ParamStore;
use crate::rng::SeededRng;
use crate::tensor::{Mode, Tensor};

/// A validation loss must drop by more than this to count as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Mse,
    NbNll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 100,
            patience: 10,
            batch_size: 32,
            objective: Objective::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be a finite positive number"));
        }
        if self.patience == 0 {
            return Err(Error::config("train.patience", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stop_reason: StopReason,
    pub seed: u64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# tsmixer {} seed={} best_epoch={} stop={}",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.best_epoch,
            match self.stop_reason {
                StopReason::MaxEpochs => "max_epochs",
                StopReason::EarlyStopping => "early_stopping",
            }
        );
        s.push_str("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, val);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Improved,
    Stale,
    Stop,
}

/// Patience counter over a monitored loss; ties count as stale epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        if loss < self.best - IMPROVEMENT_EPS || (self.best.is_infinite() && loss.is_finite()) {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return Observation::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Observation::Stop
        } else {
            Observation::Stale
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Scalar objective node for a forward pass.
pub fn loss_node(tape: &mut Tape, out: OutputNodes, target: &Tensor, objective: Objective) -> Result<NodeId> {
    match (objective, out) {
        (Objective::Mse, OutputNodes::Point(y)) => {
            let t = tape.constant(target.clone());
            let d = tape.sub(y, t)?;
            let sq = tape.square(d)?;
            Ok(tape.mean(sq))
        }
        (Objective::NbNll, OutputNodes::NegBin { mu, alpha }) => tape.nb_nll(mu, alpha, target.clone()),
        (Objective::Mse, OutputNodes::NegBin { .. }) => Err(Error::config(
            "train.objective",
            "mse needs a point head; use nb_nll with the negative binomial head",
        )),
        (Objective::NbNll, OutputNodes::Point(_)) => Err(Error::config(
            "train.objective",
            "nb_nll needs the negative binomial head",
        )),
    }
}

fn forecast_loss(f: &Forecast, target: &Tensor, objective: Objective) -> Result<f64> {
    match (objective, f) {
        (Objective::Mse, Forecast::Point(y)) => mse_loss(y, target),
        (Objective::NbNll, Forecast::NegBin { mu, alpha }) => nb_nll_loss(mu, alpha, target),
        _ => Err(Error::config(
            "train.objective",
            "objective does not match the model head",
        )),
    }
}

/// Evaluation-mode loss averaged over windows.
pub fn evaluate_loss(model: &Model, windows: &[Window], batch_size: usize, objective: Objective) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Precondition("no windows to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let batch = WindowBatch::stack(&refs)?;
        let f = model.predict(&batch.input())?;
        total += forecast_loss(&f, &batch.target, objective)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Shuffled index chunks; a trailing single-window chunk joins the previous
/// one so batch statistics always see at least two samples.
fn batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() >= 2 && out.last().is_some_and(|c| c.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// One optimizer step on a batch; returns the batch loss.
fn step(
    model: &mut Model,
    batch: &WindowBatch,
    objective: Objective,
    state: &mut AdamState,
    adam: &AdamConfig,
    rng: &mut SeededRng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let ids = model.register(&mut tape);
    let mut ctx = Ctx::new(&mut tape, &ids, model.buffers(), Mode::Train, rng);
    let out = model.forward(&mut ctx, &batch.input())?;
    let updates = ctx.into_updates();
    let loss = loss_node(&mut tape, out, &batch.target, objective)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = ids.iter().map(|&id| grads.wrt(id)).collect();
    adam_step(model.params_mut().tensors_mut(), &grads, state, adam)?;
    apply_updates(model.buffers_mut(), updates)?;
    Ok(value)
}

/// Trains `model` in place with Adam and early stopping on the validation
/// loss (training loss when `val` is empty). Parameters from the best epoch
/// are restored before returning.
pub fn train(
    model: &mut Model,
    train_windows: &[Window],
    val_windows: &[Window],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Precondition("no training windows".into()));
    }
    let root = SeededRng::new(seed);
    let mut order_rng = root.fork(1);
    let mut dropout_rng = root.fork(2);
    let adam = AdamConfig::new(cfg.lr);
    let mut state = AdamState::new(model.params().tensors())?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: (ParamStore, ParamStore) = (model.params().clone(), model.buffers().clone());
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        for (b, idx) in batches(train_windows.len(), cfg.batch_size, &mut order_rng)
            .iter()
            .enumerate()
        {
            let refs: Vec<&Window> = idx.iter().map(|&i| &train_windows[i]).collect();
            let batch = WindowBatch::stack(&refs)?;
            let loss = step(model, &batch, cfg.objective, &mut state, &adam, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss ({loss}) at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            total += loss * idx.len() as f64;
        }
        let train_loss = total / train_windows.len() as f64;
        let val_loss = if val_windows.is_empty() {
            None
        } else {
            let v = evaluate_loss(model, val_windows, cfg.batch_size, cfg.objective)?;
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite validation loss ({v}) at epoch {epoch}"
                )));
            }
            Some(v)
        };
        info!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss.unwrap_or(train_loss)) {
            Observation::Improved => best = (model.params().clone(), model.buffers().clone()),
            Observation::Stale => {}
            Observation::Stop => {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    *model.params_mut() = best.0;
    *model.buffers_mut() = best.1;
    Ok(TrainHistory {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_loss: stopper.best(),
        stop_reason,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_counts_ties_as_stale() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 1.0), Observation::Improved);
        assert_eq!(s.observe(2, 1.0), Observation::Stale);
        assert_eq!(s.observe(3, 1.0 - 1e-13), Observation::Stop);
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn batches_cover_every_index_once() {
        let mut rng = SeededRng::new(0);
        let b = batches(9, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
    }
}
