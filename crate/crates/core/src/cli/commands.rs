use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use super::ExperimentConfig;
use crate::data::{
    self, global_standardize, load_csv, make_windows, make_windows_for_targets, split_ranges, synth::SynthKind, Role,
    Schema, SeriesFrame, Window, WindowBatch, WindowSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{wrmsse, HierarchySpec};
use crate::models::{provenance, theory, Checkpoint, ColumnNames, Forecast, Model};
use crate::rng::SeededRng;
use crate::tensor::{self, Tensor};
use crate::training::{self, evaluate_loss, mae_metric, mse_loss, nb_nll_loss};

const PREDICT_BATCH: usize = 256;

fn columns_of(frame: &SeriesFrame) -> ColumnNames {
    ColumnNames {
        targets: frame.names(Role::Target),
        historical: frame.names(Role::Historical),
        future: frame.names(Role::Future),
        statics: frame.names(Role::Static),
    }
}

/// Trains from a config file. Returns a short summary for stdout.
pub fn train(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<String> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o.to_path_buf();
    }
    cfg.validate()?;
    let schema = Schema::load(&cfg.data.schema)?;
    let raw = load_csv(&cfg.data.path, &schema)?;
    let ranges = split_ranges(raw.steps(), &cfg.split)?;
    let (frame, scaler) = if cfg.data.standardize {
        let (f, s) = global_standardize(&raw, ranges.train.clone())?;
        (f, Some(s))
    } else {
        (raw, None)
    };
    let spec = cfg.window;
    let train_w = make_windows_for_targets(&frame, &spec, ranges.train.clone())?;
    let val_w = make_windows_for_targets(&frame, &spec, ranges.val.clone())?;
    let test_w = make_windows_for_targets(&frame, &spec, ranges.test.clone())?;
    if train_w.is_empty() {
        return Err(Error::config(
            "window",
            format!(
                "training partition of {} steps is shorter than lookback + horizon = {}",
                ranges.train.len(),
                spec.lookback + spec.horizon
            ),
        ));
    }

    let mc = cfg.model_config(
        frame.count(Role::Target),
        frame.count(Role::Historical),
        frame.count(Role::Future),
        frame.count(Role::Static),
    );
    let mut model = Model::new(mc.clone(), cfg.seed)?;
    let history = training::train(&mut model, &train_w, &val_w, &cfg.train, cfg.seed)?;

    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let ckpt = Checkpoint {
        model,
        columns: columns_of(&frame),
        scaler,
        seed: cfg.seed,
    };
    ckpt.save(&cfg.out)?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = cfg.out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("history.csv", history.to_csv())?;
    write(
        "resolved_config.toml",
        format!("# {}\n{}", provenance(cfg.seed), cfg.resolved(&mc).to_toml_string()),
    )?;

    let mut s = String::new();
    let _ = writeln!(s, "epochs = {}", history.epochs.len());
    let _ = writeln!(s, "best_epoch = {}", history.best_epoch);
    let _ = writeln!(s, "best_loss = {}", history.best_loss);
    if !test_w.is_empty() {
        let test = evaluate_loss(&ckpt.model, &test_w, cfg.train.batch_size, cfg.train.objective)?;
        let _ = writeln!(s, "test_loss = {test}");
    }
    let _ = writeln!(s, "checkpoint = {:?}", cfg.out.display().to_string());
    Ok(s)
}

fn schema_for(ckpt: &Checkpoint, given: Option<&Path>) -> Result<Schema> {
    if let Some(p) = given {
        return Schema::load(p);
    }
    let c = &ckpt.columns;
    let mut columns = std::collections::BTreeMap::new();
    for (names, role) in [
        (&c.targets, Role::Target),
        (&c.historical, Role::Historical),
        (&c.future, Role::Future),
        (&c.statics, Role::Static),
    ] {
        for n in names {
            columns.insert(n.clone(), role);
        }
    }
    Ok(Schema {
        timestamp: None,
        columns,
    })
}

/// Loads a dataset and checks its role counts against the checkpoint.
fn load_raw(ckpt: &Checkpoint, data: &Path, schema: Option<&Path>) -> Result<SeriesFrame> {
    let frame = load_csv(data, &schema_for(ckpt, schema)?)?;
    let cfg = ckpt.model.config();
    for (role, expected, what) in [
        (Role::Target, cfg.targets, "target"),
        (Role::Historical, cfg.historical, "historical"),
        (Role::Future, cfg.future, "future"),
        (Role::Static, cfg.statics, "static"),
    ] {
        let got = frame.count(role);
        if got != expected {
            return Err(Error::config(
                "data",
                format!("checkpoint expects {expected} {what} columns, dataset has {got}"),
            ));
        }
    }
    Ok(frame)
}

/// [`load_raw`] followed by the checkpoint's standardization.
fn load_for(ckpt: &Checkpoint, data: &Path, schema: Option<&Path>) -> Result<SeriesFrame> {
    let frame = load_raw(ckpt, data, schema)?;
    match &ckpt.scaler {
        Some(s) => s.transform(&frame),
        None => Ok(frame),
    }
}

fn predict_windows(model: &Model, windows: &[Window]) -> Result<Vec<(Forecast, WindowBatch)>> {
    windows
        .chunks(PREDICT_BATCH)
        .map(|chunk| {
            let refs: Vec<&Window> = chunk.iter().collect();
            let batch = WindowBatch::stack(&refs)?;
            Ok((model.predict(&batch.input())?, batch))
        })
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema sidecar; defaults to the checkpoint's column names.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Hierarchy TOML over the target columns; enables WRMSSE.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

/// Scores every window of a dataset. Returns a TOML report.
pub fn evaluate(args: &EvaluateArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = ckpt.model.config().clone();
    let frame = load_for(&ckpt, &args.data, args.schema.as_deref())?;
    let spec = WindowSpec::new(cfg.lookback, cfg.horizon, args.stride)?;
    let windows = make_windows(&frame, &spec)?;
    if windows.is_empty() {
        return Err(Error::config("data", "dataset is shorter than lookback + horizon"));
    }
    let (mut se, mut ae, mut nll, mut n) = (0.0, 0.0, 0.0, 0.0);
    for (f, batch) in predict_windows(&ckpt.model, &windows)? {
        let k = batch.target.len() as f64;
        se += mse_loss(f.point(), &batch.target)? * k;
        ae += mae_metric(f.point(), &batch.target)? * k;
        if let Forecast::NegBin { mu, alpha } = &f {
            nll += nb_nll_loss(mu, alpha, &batch.target)? * k;
        }
        n += k;
    }
    let mut s = String::new();
    let _ = writeln!(s, "# {}", provenance(ckpt.seed));
    let _ = writeln!(s, "windows = {}", windows.len());
    let _ = writeln!(s, "mse = {}", se / n);
    let _ = writeln!(s, "mae = {}", ae / n);
    if matches!(cfg.head, crate::models::Head::NegativeBinomial) {
        let _ = writeln!(s, "nb_nll = {}", nll / n);
    }

    if let Some(hpath) = &args.hierarchy {
        let text = std::fs::read_to_string(hpath).map_err(|e| Error::io(hpath, e))?;
        let spec_h = HierarchySpec::from_toml_str(&text)?;
        let last = frame.steps() - cfg.horizon - cfg.lookback;
        let window = windows.iter().find(|w| w.start == last).cloned().map_or_else(
            || make_windows_for_targets(&frame, &spec, last + cfg.lookback..frame.steps()),
            |w| Ok(vec![w]),
        )?;
        let (f, batch) = predict_windows(&ckpt.model, &window[..1])?.remove(0);
        let unscale = |t: &Tensor| match &ckpt.scaler {
            Some(sc) => sc.invert_leading(t),
            None => Ok(t.clone()),
        };
        let fc = unscale(&f.point().sample(0)?)?;
        let actual = unscale(&batch.target.sample(0)?)?;
        let past = frame.rows(0, frame.steps() - cfg.horizon)?;
        let past = tensor::slice_last(past.values(), 0, cfg.targets)?;
        let past = unscale(&past)?;
        let col = |t: &Tensor, j: usize| -> Vec<f64> { (0..t.shape()[0]).map(|r| t.at2(r, j)).collect() };
        let fs: Vec<Vec<f64>> = (0..cfg.targets).map(|j| col(&fc, j)).collect();
        let acts: Vec<Vec<f64>> = (0..cfg.targets).map(|j| col(&actual, j)).collect();
        let hist: Vec<Vec<f64>> = (0..cfg.targets).map(|j| col(&past, j)).collect();
        let report = wrmsse(&fs, &acts, &hist, &spec_h)?;
        let _ = writeln!(s, "wrmsse = {}", report.score);
        for level in &report.levels {
            let _ = writeln!(s, "\n[[levels]]\nname = {:?}\nscore = {}", level.name, level.score);
        }
        for (level, group, r) in report.worst(5) {
            let _ = writeln!(s, "\n[[worst]]\nlevel = {level:?}\ngroup = {group}\nrmsse = {r}");
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Args)]
pub struct ForecastArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV whose final rows are the lookback window. With future covariates
    /// the last `horizon` rows supply them and their targets are ignored.
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

/// Forecasts one horizon in original units. Returns CSV text.
pub fn forecast(args: &ForecastArgs) -> Result<String> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = ckpt.model.config().clone();
    let frame = load_raw(&ckpt, &args.history, args.schema.as_deref())?;
    let (l, t) = (cfg.lookback, cfg.horizon);
    let need = if cfg.future > 0 { l + t } else { l };
    if frame.steps() < need {
        return Err(Error::Precondition(format!(
            "history needs at least {need} rows (lookback L = {l}), file has {}",
            frame.steps()
        )));
    }
    let rows = frame.rows(frame.steps() - need, frame.steps())?;
    let hw = cfg.history_width();
    let width = rows.values().shape()[1];
    let hist = tensor::slice_last(rows.rows(0, l)?.values(), 0, hw)?;
    let future = if cfg.future > 0 {
        Some(tensor::slice_last(rows.rows(l, l + t)?.values(), hw, width)?)
    } else {
        None
    };
    let statics: Vec<f64> = frame.statics().iter().map(|(_, x)| *x).collect();
    let out = ckpt.forecast(&hist, future.as_ref(), (cfg.statics > 0).then_some(&statics[..]))?;
    let names = &ckpt.columns.targets;
    let mut s = String::new();
    let _ = writeln!(s, "# {}", provenance(ckpt.seed));
    match &out {
        Forecast::Point(y) => {
            let y = y.sample(0)?;
            let _ = writeln!(s, "step,{}", names.join(","));
            for r in 0..t {
                let vals: Vec<String> = (0..cfg.targets).map(|j| y.at2(r, j).to_string()).collect();
                let _ = writeln!(s, "{},{}", r + 1, vals.join(","));
            }
        }
        Forecast::NegBin { mu, alpha } => {
            let (mu, alpha) = (mu.sample(0)?, alpha.sample(0)?);
            let header: Vec<String> = names
                .iter()
                .flat_map(|n| [format!("{n}_mu"), format!("{n}_alpha")])
                .collect();
            let _ = writeln!(s, "step,{}", header.join(","));
            for r in 0..t {
                let vals: Vec<String> = (0..cfg.targets)
                    .flat_map(|j| [mu.at2(r, j).to_string(), alpha.at2(r, j).to_string()])
                    .collect();
                let _ = writeln!(s, "{},{}", r + 1, vals.join(","));
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthChoice {
    Periodic,
    AffinePeriodic,
    PeriodicTrend,
    Crossvariate,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthChoice,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Independent series (ignored by `crossvariate`, which has one target and one driver).
    #[arg(long, default_value_t = 1)]
    pub variates: usize,
    #[arg(long, default_value_t = 24)]
    pub period: usize,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Multiplier of the affine-periodic recursion.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Offset of the affine-periodic recursion.
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    /// Maximum per-step trend change.
    #[arg(long, default_value_t = 0.05)]
    pub lipschitz: f64,
    #[arg(long, default_value_t = 12)]
    pub lag: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

/// Writes `<out>` and its schema sidecar `<out stem>.schema.toml`.
pub fn synth(args: &SynthArgs, seed: u64, out: &Path) -> Result<()> {
    let kind = match args.kind {
        SynthChoice::Periodic => SynthKind::Periodic {
            period: args.period,
            amplitude: args.amplitude,
        },
        SynthChoice::AffinePeriodic => SynthKind::AffinePeriodic {
            period: args.period,
            a: args.a,
            c: args.c,
        },
        SynthChoice::PeriodicTrend => SynthKind::PeriodicTrend {
            period: args.period,
            lipschitz: args.lipschitz,
        },
        SynthChoice::Crossvariate => SynthKind::Crossvariate {
            lag: args.lag,
            noise: args.noise,
        },
    };
    let mut rng = SeededRng::new(seed);
    let frame = data::synth::generate(&kind, args.steps, args.variates, &mut rng)?;
    data::write_csv(&frame, out, &provenance(seed))?;
    let schema_path = out.with_extension("schema.toml");
    std::fs::write(&schema_path, frame.schema().to_toml_string()).map_err(|e| Error::io(&schema_path, e))
}

#[derive(Debug, Clone, Args)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 24)]
    pub period: usize,
    #[arg(long, default_value_t = 48)]
    pub lookback: usize,
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lipschitz: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Perturb the constructed solutions; the run must then fail.
    #[arg(long)]
    pub corrupt_solution: bool,
}

/// Runs the theory checks. Returns the report and whether every check passed.
pub fn verify_theory(args: &TheoryArgs, seed: u64) -> Result<(String, bool)> {
    let report = theory::verify_theory(&theory::TheoryOptions {
        period: args.period,
        lookback: args.lookback,
        horizon: args.horizon,
        lipschitz: args.lipschitz,
        trials: args.trials,
        seed,
        corrupt: args.corrupt_solution,
    })?;
    Ok((report.render(), report.passed()))
}
