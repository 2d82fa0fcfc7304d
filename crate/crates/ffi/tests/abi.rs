use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use growthrank::checkpoint::{save_ensemble, save_model};
use growthrank::losses::LossKind;
use growthrank::models::{predict, ArchConfig, CombineMode, ConvSpec, Ensemble, Model};
use growthrank_ffi::*;

fn last_error() -> String {
    let p = gr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_arch(loss: LossKind) -> ArchConfig {
    ArchConfig {
        m: 4,
        n: 3,
        conv: vec![ConvSpec { kernel: 2, channels: 3 }],
        dense: vec![5],
        dropout: 0.3,
        leaky_slope: 0.1,
        loss,
    }
}

#[test]
fn pure_functions_match_core() {
    let uniform = [0.2; 5];
    let onehot = [0.0, 0.0, 0.0, 0.0, 1.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(gr_return_weighted_loss(onehot.as_ptr(), uniform.as_ptr(), 0.05, &mut v), GrStatus::Ok);
        assert!((v - 0.05 * 5f64.ln()).abs() < 1e-15);
        assert_eq!(gr_cross_entropy(onehot.as_ptr(), uniform.as_ptr(), &mut v), GrStatus::Ok);
        assert!((v - 5f64.ln()).abs() < 1e-15);
        assert_eq!(gr_score([0.1, 0.2, 0.3, 0.2, 0.2].as_ptr(), &mut v), GrStatus::Ok);
        assert!((v - 0.2).abs() < 1e-15);
        let mut label = 9u32;
        assert_eq!(gr_assign_label(0.03, &mut label), GrStatus::Ok);
        assert_eq!(label, 4);
        assert_eq!(gr_assign_label(-0.01, &mut label), GrStatus::Ok);
        assert_eq!(label, 1);
        assert_eq!(gr_cap_return(-0.7), 0.5);
        assert_eq!(gr_annualize_return(12.89, 1340, &mut v), GrStatus::Ok);
        assert!((v - 0.6173).abs() < 1e-3);
        let nav = [1.0, 1.2, 0.9, 1.0, 1.3];
        let (mut depth, mut peak, mut trough) = (0.0, 0, 0);
        assert_eq!(gr_max_drawdown(nav.as_ptr(), nav.len(), &mut depth, &mut peak, &mut trough), GrStatus::Ok);
        assert!((depth + 0.25).abs() < 1e-15);
        assert_eq!((peak, trough), (1, 2));
        let r = [0.01, -0.02, 0.015, 0.003];
        assert_eq!(gr_sharpe_ratio(r.as_ptr(), r.len(), ptr::null(), 0, &mut v), GrStatus::Ok);
        assert!((v - growthrank::analytics::sharpe_ratio(&r, &[]).unwrap()).abs() < 1e-15);
        let (mut t, mut p) = (0.0, 0.0);
        let b = [0.0, 0.0, 0.01, 0.0];
        assert_eq!(gr_t_test_paired(r.as_ptr(), b.as_ptr(), 4, &mut t, &mut p), GrStatus::Ok);
        let expect = growthrank::analytics::t_test_paired(&r, &b).unwrap();
        assert_eq!((t, p), (expect.t, expect.p));
    }
}

#[test]
fn moe_weights_equal_without_history_and_softmax_with() {
    let mut w = [0.0; 3];
    unsafe {
        assert_eq!(gr_moe_weights(ptr::null(), 3, 0, w.as_mut_ptr(), 3), GrStatus::Ok);
        assert_eq!(w, [1.0 / 3.0; 3]);
        let r = [0.1, 0.0, 0.0, 0.0, -0.1, 0.0];
        assert_eq!(gr_moe_weights(r.as_ptr(), 3, 2, w.as_mut_ptr(), 3), GrStatus::Ok);
        let e = [0.1f64.exp(), 1.0, (-0.1f64).exp()];
        let z: f64 = e.iter().sum();
        for (a, b) in w.iter().zip(e) {
            assert!((a - b / z).abs() < 1e-15);
        }
        assert_eq!(gr_moe_weights(r.as_ptr(), 3, 2, w.as_mut_ptr(), 2), GrStatus::BufferTooSmall);
        assert!(last_error().contains("need 3"));
    }
}

#[test]
fn errors_report_status_and_message() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(gr_return_weighted_loss(ptr::null(), [0.2; 5].as_ptr(), 0.1, &mut v), GrStatus::NullPointer);
        assert!(last_error().contains("y_true"));
        assert_eq!(gr_return_weighted_loss([0.2; 5].as_ptr(), [0.2; 5].as_ptr(), 0.9, &mut v), GrStatus::Numeric);
        assert_eq!(gr_annualize_return(-1.0, 10, &mut v), GrStatus::Numeric);
        assert_eq!(gr_score([0.2; 5].as_ptr(), &mut v), GrStatus::Ok);
        assert!(gr_last_error_message().is_null());
        let missing = CString::new("/nonexistent/model.bin").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(gr_model_load(missing.as_ptr(), &mut m), GrStatus::Data);
        assert!(m.is_null());
        let bad = CString::new("/nonexistent/config.json").unwrap();
        let out = CString::new("/tmp/never").unwrap();
        assert_ne!(gr_run(bad.as_ptr(), out.as_ptr()), GrStatus::Ok);
        gr_model_free(ptr::null_mut());
        gr_ensemble_free(ptr::null_mut());
        gr_universe_free(ptr::null_mut());
    }
    assert!(unsafe { CStr::from_ptr(gr_version()) }.to_str().unwrap().starts_with("0."));
}

#[test]
fn model_and_ensemble_handles_predict_like_core() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(small_arch(LossKind::ReturnWeighted), 7).unwrap();
    let mpath = dir.path().join("m.bin");
    save_model(&model, &mpath).unwrap();
    let members: Vec<Model> = (0..3).map(|s| Model::new(small_arch(LossKind::ReturnWeighted), s).unwrap()).collect();
    let mut ens = Ensemble::new(members, CombineMode::Moe).unwrap();
    ens.record_period_returns(&[0.05, -0.02, 0.0]).unwrap();
    let epath = dir.path().join("e.bin");
    save_ensemble(&ens, &epath).unwrap();

    let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    unsafe {
        let mut h = ptr::null_mut();
        let p = CString::new(mpath.to_str().unwrap()).unwrap();
        assert_eq!(gr_model_load(p.as_ptr(), &mut h), GrStatus::Ok);
        let (mut w, mut n, mut o) = (0, 0, 0);
        assert_eq!(gr_model_shape(h, &mut w, &mut n, &mut o), GrStatus::Ok);
        assert_eq!((w, n, o), (4, 3, 5));
        let mut y = [0.0; 5];
        assert_eq!(gr_model_predict(h, x.as_ptr(), x.len(), 2, y.as_mut_ptr(), 5), GrStatus::Ok);
        assert_eq!(y.to_vec(), predict(&model, &x, 2).unwrap());
        assert_eq!(gr_model_predict(h, x.as_ptr(), 11, 2, y.as_mut_ptr(), 5), GrStatus::InvalidArgument);
        gr_model_free(h);

        let mut e = ptr::null_mut();
        let p = CString::new(epath.to_str().unwrap()).unwrap();
        assert_eq!(gr_ensemble_load(p.as_ptr(), &mut e), GrStatus::Ok);
        let mut len = 0;
        assert_eq!(gr_ensemble_len(e, &mut len), GrStatus::Ok);
        assert_eq!(len, 3);
        let mut wts = [0.0; 3];
        assert_eq!(gr_ensemble_weights(e, wts.as_mut_ptr(), 3), GrStatus::Ok);
        assert_eq!(wts.to_vec(), ens.weights());
        assert_eq!(gr_ensemble_predict(e, x.as_ptr(), x.len(), 1, y.as_mut_ptr(), 5), GrStatus::Ok);
        let outs: Vec<Vec<Vec<f64>>> = ens.members.iter().map(|m| vec![predict(m, &x, 1).unwrap()]).collect();
        assert_eq!(y.to_vec(), ens.combine(&outs)[0]);
        assert_eq!(gr_ensemble_record_returns(e, [0.0, 0.0].as_ptr(), 2), GrStatus::Config);
        assert_eq!(gr_ensemble_record_returns(e, [0.0, 0.3, 0.0].as_ptr(), 3), GrStatus::Ok);
        ens.record_period_returns(&[0.0, 0.3, 0.0]).unwrap();
        assert_eq!(gr_ensemble_weights(e, wts.as_mut_ptr(), 3), GrStatus::Ok);
        assert_eq!(wts.to_vec(), ens.weights());
        gr_ensemble_free(e);
    }
}

#[test]
fn universe_handle_reads_synthetic_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = growthrank::synth::SynthSpec {
        n_stocks: 4,
        n_days: 30,
        ..Default::default()
    };
    let data = growthrank::synth::generate(&spec, 3).unwrap();
    growthrank::synth::write_all(&data, dir.path()).unwrap();
    let o = CString::new(dir.path().join("ohlcv.csv").to_str().unwrap()).unwrap();
    let s = CString::new(dir.path().join("sectors.csv").to_str().unwrap()).unwrap();
    unsafe {
        let mut u = ptr::null_mut();
        assert_eq!(gr_universe_load(o.as_ptr(), s.as_ptr(), &mut u), GrStatus::Ok);
        let (mut ns, mut nd) = (0, 0);
        assert_eq!(gr_universe_shape(u, &mut ns, &mut nd), GrStatus::Ok);
        assert_eq!((ns, nd), (4, 30));
        let mut r = 0.0;
        assert_eq!(gr_universe_daily_return(u, 1, 5, &mut r), GrStatus::Ok);
        let st = &data.universe.stocks[1];
        assert!((r - (st.bars[7].open / st.bars[6].open - 1.0)).abs() < 1e-9);
        assert_eq!(gr_universe_daily_return(u, 9, 5, &mut r), GrStatus::InvalidArgument);
        gr_universe_free(u);
    }
}

#[test]
fn header_is_generated_and_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/growthrank.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["gr_model_load", "gr_ensemble_predict", "gr_last_error_message", "GR_STATUS_BUFFER_TOO_SMALL", "typedef struct GrModel GrModel"] {
        assert!(text.contains(sym), "{sym}");
    }
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, "#include \"growthrank.h\"\nint main(void) { double v; return gr_score(0, &v) == GR_STATUS_NULL_POINTER ? 0 : 1; }\n").unwrap();
    let st = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
