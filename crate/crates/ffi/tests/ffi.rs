use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use pad_core::checkpoint::Checkpoint;
use pad_core::data::{NormStats, RawSequence};
use pad_core::model::{forward, ModelConfig, PadParameters};
use pad_core::path::{CubicSplinePath, TimeSeriesWindow};
use pad_core::solver::SolverConfig;
use pad_ffi::*;

fn last_error() -> String {
    let p = pad_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn model_cfg() -> ModelConfig {
    ModelConfig {
        n_channels: 2,
        hidden_dim: 3,
        width_f: 4,
        width_g: 4,
        width_c: 4,
        n_hidden_layers_f: 1,
        n_hidden_layers_g: 1,
        ..ModelConfig::default()
    }
}

fn write_checkpoint(dir: &Path) -> (CString, PadParameters, NormStats) {
    let model = model_cfg();
    let params = PadParameters::init(&model, 7).unwrap();
    let norm = NormStats {
        min: vec![-2.0, 0.0],
        max: vec![2.0, 10.0],
    };
    let ck = Checkpoint::new(&params, &model, &SolverConfig::default(), Some(norm.clone()), serde_json::json!({}));
    let path = dir.join("checkpoint.json");
    ck.save(&path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), params, norm)
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(pad_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_predict_matches_core_forward() {
    let dir = tempfile::tempdir().unwrap();
    let (path, params, norm) = write_checkpoint(dir.path());
    let mut handle: *mut PadModel = ptr::null_mut();
    assert_eq!(unsafe { pad_model_load(path.as_ptr(), &mut handle) }, PadStatus::Ok);
    assert!(!handle.is_null());
    assert_eq!(unsafe { pad_model_n_channels(handle) }, 2);

    let times: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
    let values: Vec<f64> = (0..12).map(|i| (i as f64 * 0.9).sin() * 2.0 + (i % 2) as f64 * 5.0).collect();
    let (mut pa, mut pp) = (f64::NAN, f64::NAN);
    let status = unsafe { pad_model_predict(handle, times.as_ptr(), values.as_ptr(), 6, 2, &mut pa, &mut pp) };
    assert_eq!(status, PadStatus::Ok);

    let raw = RawSequence::new(times.clone(), values, 2, None, "t").unwrap();
    let scaled = norm.apply(&raw).unwrap();
    let w = TimeSeriesWindow::new(times, scaled.values, 2, vec![], 0).unwrap();
    let expected = forward(&w, &params, &model_cfg(), &SolverConfig::default()).unwrap();
    assert!((pa - expected.p_anomaly).abs() < 1e-12);
    assert!((pp - expected.p_poa).abs() < 1e-12);

    // channel mismatch is an input error
    let status = unsafe { pad_model_predict(handle, [0.0, 1.0].as_ptr(), [1.0, 2.0].as_ptr(), 2, 1, &mut pa, &mut pp) };
    assert_eq!(status, PadStatus::Input);
    assert!(last_error().contains("channels"));
    unsafe { pad_model_free(handle) };
}

#[test]
fn model_load_errors() {
    let mut handle: *mut PadModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/ck.json").unwrap();
    assert_eq!(unsafe { pad_model_load(missing.as_ptr(), &mut handle) }, PadStatus::Input);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version": 99}"#).unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_ne!(unsafe { pad_model_load(bad.as_ptr(), &mut handle) }, PadStatus::Ok);

    assert_eq!(unsafe { pad_model_load(ptr::null(), &mut handle) }, PadStatus::NullArgument);
    assert!(last_error().contains("path"));
    assert_eq!(unsafe { pad_model_load(missing.as_ptr(), ptr::null_mut()) }, PadStatus::NullArgument);
}

#[test]
fn spline_matches_core() {
    let times = [0.0, 0.5, 1.7, 2.0, 3.1];
    let values = [1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 3.0, -2.0, 0.0, 1.0];
    let mut s: *mut PadSpline = ptr::null_mut();
    assert_eq!(unsafe { pad_spline_fit(times.as_ptr(), values.as_ptr(), 5, 2, &mut s) }, PadStatus::Ok);
    assert_eq!(unsafe { pad_spline_n_channels(s) }, 2);
    let core = CubicSplinePath::from_knots(&times, &values, 2).unwrap();
    let mut out = [0.0; 2];
    for t in [0.0, 0.3, 1.7, 2.9, 3.1] {
        assert_eq!(unsafe { pad_spline_eval(s, t, out.as_mut_ptr()) }, PadStatus::Ok);
        assert_eq!(out.as_slice(), core.eval(t).unwrap().data());
        assert_eq!(unsafe { pad_spline_derivative(s, t, out.as_mut_ptr()) }, PadStatus::Ok);
        assert_eq!(out.as_slice(), core.eval_derivative(t).unwrap().data());
    }
    assert_ne!(unsafe { pad_spline_eval(s, 10.0, out.as_mut_ptr()) }, PadStatus::Ok);
    assert_eq!(unsafe { pad_spline_eval(s, 1.0, ptr::null_mut()) }, PadStatus::NullArgument);
    unsafe { pad_spline_free(s) };
}

#[test]
fn spline_fit_rejects_bad_knots() {
    let mut s: *mut PadSpline = ptr::null_mut();
    let times = [0.0, 0.0, 1.0];
    let values = [1.0, 2.0, 3.0];
    assert_eq!(unsafe { pad_spline_fit(times.as_ptr(), values.as_ptr(), 3, 1, &mut s) }, PadStatus::Input);
    assert!(s.is_null());
    assert_eq!(unsafe { pad_spline_fit(ptr::null(), values.as_ptr(), 3, 1, &mut s) }, PadStatus::NullArgument);
}

#[test]
fn metrics_evaluate() {
    let probs = [0.9, 0.2, 0.6, 0.4, 0.5, 0.1];
    let labels = [1u8, 0, 0, 1, 1, 0];
    let mut m = PadMetrics::default();
    assert_eq!(unsafe { pad_metrics_evaluate(probs.as_ptr(), labels.as_ptr(), 6, 0.5, &mut m) }, PadStatus::Ok);
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 1, 2, 1));
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(unsafe { pad_metrics_evaluate(probs.as_ptr(), labels.as_ptr(), 0, 0.5, &mut m) }, PadStatus::Input);
}

#[test]
fn freeing_null_is_a_no_op() {
    unsafe {
        pad_model_free(ptr::null_mut());
        pad_spline_free(ptr::null_mut());
    }
    assert_eq!(unsafe { pad_model_n_channels(ptr::null()) }, 0);
}

#[test]
fn success_clears_the_last_error() {
    let mut s: *mut PadSpline = ptr::null_mut();
    unsafe { pad_spline_fit(ptr::null(), ptr::null(), 3, 1, &mut s) };
    assert!(!pad_last_error_message().is_null());
    let times = [0.0, 1.0];
    let values = [0.0, 1.0];
    assert_eq!(unsafe { pad_spline_fit(times.as_ptr(), values.as_ptr(), 2, 1, &mut s) }, PadStatus::Ok);
    assert!(pad_last_error_message().is_null());
    unsafe { pad_spline_free(s) };
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pad.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    for (compiler, ext) in [("cc", "c"), ("c++", "cpp")] {
        let src = dir.path().join(format!("use.{ext}"));
        std::fs::write(
            &src,
            format!(
                "#include \"{}\"\nint main(void) {{ PadMetrics m; PadStatus s = PAD_STATUS_OK; (void)m; return (int)s + (pad_version() == 0); }}\n",
                header.display()
            ),
        )
        .unwrap();
        let Ok(out) = Command::new(compiler).arg("-fsyntax-only").arg(&src).output() else {
            eprintln!("{compiler} not available, skipping");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
