use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use tsmixer::models::{Checkpoint, Forecast};
use tsmixer::Tensor;
use tsmixer_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tsm_last_error_message()) }
        .to_str()
        .unwrap()
        .to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains a tiny model in-process and returns its checkpoint directory.
fn trained(dir: &Path) -> PathBuf {
    let data = dir.join("periodic.csv");
    let code = tsmixer::cli::run([
        "tsmixer",
        "synth",
        "--kind",
        "periodic",
        "--steps",
        "200",
        "--variates",
        "2",
        "--period",
        "8",
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    assert_eq!(code, 0);
    let config = dir.join("experiment.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 5\nout = \"run\"\n\n[data]\npath = \"{}\"\nschema = \"{}\"\n\n[window]\nlookback = 16\nhorizon = 4\n\n\
             [model]\nfamily = \"tsmixer\"\nhidden = 6\nblocks = 1\n\n[train]\nlr = 0.01\nmax_epochs = 2\nbatch_size = 16\n",
            s(&data),
            s(&data.with_extension("schema.toml"))
        ),
    )
    .unwrap();
    let out = dir.join("run");
    assert_eq!(
        tsmixer::cli::run(["tsmixer", "train", "--config", s(&config), "--out", s(&out)]),
        0
    );
    out
}

fn load(dir: &Path) -> *mut TsmModel {
    let c = CString::new(s(dir)).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { tsm_model_load(c.as_ptr(), &mut model) },
        TsmStatus::Ok,
        "{}",
        last_error()
    );
    assert!(!model.is_null());
    model
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(tsm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported() {
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { tsm_model_load(ptr::null(), &mut model) },
        TsmStatus::NullPointer
    );
    assert!(last_error().contains("dir"));

    let mut info = TsmModelInfo::default();
    assert_eq!(
        unsafe { tsm_model_info(ptr::null(), &mut info) },
        TsmStatus::NullPointer
    );
    assert_eq!(
        unsafe {
            tsm_model_forecast(
                ptr::null(),
                ptr::null(),
                0,
                ptr::null(),
                0,
                ptr::null(),
                0,
                ptr::null_mut(),
                0,
            )
        },
        TsmStatus::NullPointer
    );
    assert_eq!(
        unsafe { tsm_verify_theory(8, 16, 4, 0.1, 2, 0, ptr::null_mut()) },
        TsmStatus::NullPointer
    );
    unsafe { tsm_model_free(ptr::null_mut()) };
}

#[test]
fn load_failure_sets_message() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = CString::new(s(&tmp.path().join("nope"))).unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { tsm_model_load(missing.as_ptr(), &mut model) };
    assert_eq!(status, TsmStatus::Io);
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    std::fs::write(tmp.path().join("model.toml"), "not = [valid").unwrap();
    std::fs::write(tmp.path().join("params.bin"), b"garbage").unwrap();
    let broken = CString::new(s(tmp.path())).unwrap();
    let status = unsafe { tsm_model_load(broken.as_ptr(), &mut model) };
    assert!(
        matches!(status, TsmStatus::Format | TsmStatus::Config),
        "{status:?}: {}",
        last_error()
    );
}

#[test]
fn forecast_matches_in_process() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = trained(tmp.path());
    let model = load(&dir);

    let mut info = TsmModelInfo::default();
    assert_eq!(unsafe { tsm_model_info(model, &mut info) }, TsmStatus::Ok);
    assert_eq!(
        (
            info.lookback,
            info.horizon,
            info.targets,
            info.history_width,
            info.future_width,
            info.static_width
        ),
        (16, 4, 2, 2, 0, 0)
    );
    assert_eq!(info.output_width, 2);
    assert!(!info.negative_binomial);

    let history: Vec<f64> = (0..info.lookback * info.history_width)
        .map(|i| (i as f64 * 0.7).sin())
        .collect();
    let mut out = vec![0.0; info.horizon * info.output_width];
    let status = unsafe {
        tsm_model_forecast(
            model,
            history.as_ptr(),
            history.len(),
            ptr::null(),
            0,
            ptr::null(),
            0,
            out.as_mut_ptr(),
            out.len(),
        )
    };
    assert_eq!(status, TsmStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");

    let ckpt = Checkpoint::load(&dir).unwrap();
    let h = Tensor::new(&[16, 2], history.clone()).unwrap();
    let Forecast::Point(y) = ckpt.forecast(&h, None, None).unwrap() else {
        panic!("expected point forecast")
    };
    assert_eq!(y.data(), &out[..]);

    // Wrong lengths are rejected before any work happens.
    let status = unsafe {
        tsm_model_forecast(
            model,
            history.as_ptr(),
            history.len() - 1,
            ptr::null(),
            0,
            ptr::null(),
            0,
            out.as_mut_ptr(),
            out.len(),
        )
    };
    assert_eq!(status, TsmStatus::InvalidArgument);
    assert!(last_error().contains("history"), "{}", last_error());
    let status = unsafe {
        tsm_model_forecast(
            model,
            history.as_ptr(),
            history.len(),
            ptr::null(),
            0,
            ptr::null(),
            0,
            out.as_mut_ptr(),
            3,
        )
    };
    assert_eq!(status, TsmStatus::InvalidArgument);
    let status = unsafe {
        tsm_model_forecast(
            model,
            history.as_ptr(),
            history.len(),
            ptr::null(),
            5,
            ptr::null(),
            0,
            out.as_mut_ptr(),
            out.len(),
        )
    };
    assert_eq!(status, TsmStatus::InvalidArgument);
    assert!(last_error().contains("future"));

    unsafe { tsm_model_free(model) };
}

#[test]
fn rmsse_through_c() {
    let history = [1.0, 2.0, 3.0, 4.0];
    let actual = [5.0, 6.0];
    let forecast = [5.0, 8.0];
    let mut value = f64::NAN;
    let status = unsafe {
        tsm_rmsse(
            forecast.as_ptr(),
            actual.as_ptr(),
            2,
            history.as_ptr(),
            history.len(),
            &mut value,
        )
    };
    assert_eq!(status, TsmStatus::Ok);
    assert_eq!(value, 2.0f64.sqrt());

    let flat = [3.0, 3.0, 3.0];
    let status = unsafe { tsm_rmsse(forecast.as_ptr(), actual.as_ptr(), 2, flat.as_ptr(), 3, &mut value) };
    assert_eq!(status, TsmStatus::Metric, "{}", last_error());
}

#[test]
fn verify_theory_through_c() {
    let mut passed = false;
    assert_eq!(
        unsafe { tsm_verify_theory(8, 16, 8, 0.1, 5, 1, &mut passed) },
        TsmStatus::Ok,
        "{}",
        last_error()
    );
    assert!(passed);

    let status = unsafe { tsm_verify_theory(8, 4, 8, 0.1, 5, 1, &mut passed) };
    assert_ne!(status, TsmStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn synth_periodic_repeats() {
    let mut a = vec![0.0; 40];
    let mut b = vec![0.0; 40];
    assert_eq!(
        unsafe { tsm_synth_periodic(8, 2.0, 9, a.as_mut_ptr(), a.len()) },
        TsmStatus::Ok
    );
    assert_eq!(
        unsafe { tsm_synth_periodic(8, 2.0, 9, b.as_mut_ptr(), b.len()) },
        TsmStatus::Ok
    );
    assert_eq!(a, b);
    for t in 8..40 {
        assert_eq!(a[t], a[t - 8]);
    }
    assert!(a.iter().any(|&v| v != 0.0));
    assert_eq!(
        unsafe { tsm_synth_periodic(0, 2.0, 9, a.as_mut_ptr(), a.len()) },
        TsmStatus::InvalidArgument
    );
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tsmixer.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "tsm_version",
        "tsm_last_error_message",
        "tsm_model_load",
        "tsm_model_free",
        "tsm_model_info",
        "tsm_model_forecast",
        "tsm_rmsse",
        "tsm_verify_theory",
        "tsm_synth_periodic",
        "TSM_STATUS_NULL_POINTER",
        "typedef struct TsmModel TsmModel",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }

    // Compile-check the header when a C compiler is available.
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
