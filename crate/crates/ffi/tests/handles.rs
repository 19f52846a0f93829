use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use dpfair_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dpf_last_error()) }.to_string_lossy().into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    schema: CString,
    data: CString,
    root: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.json");
    fs::write(
        &schema,
        r#"{"attributes":[
            {"name":"sex","kind":"categorical","levels":["Male","Female"]},
            {"name":"recid","kind":"categorical","levels":["0","1"]},
            {"name":"age","kind":"numeric","bin_edges":[0,25,45,120]}
        ]}"#,
    )
    .unwrap();
    let mut csv = String::from("sex,recid,age\n");
    for i in 0..60 {
        let sex = if i % 3 == 0 { "Female" } else { "Male" };
        let recid = if i % 4 < 2 { "1" } else { "0" };
        csv.push_str(&format!("{sex},{recid},{}\n", 18 + i));
    }
    let data = dir.path().join("data.csv");
    fs::write(&data, csv).unwrap();
    Fixture {
        schema: cstr(schema.to_str().unwrap()),
        data: cstr(data.to_str().unwrap()),
        root: dir.path().to_path_buf(),
        _dir: dir,
    }
}

fn load(f: &Fixture) -> *mut DpfDatabase {
    let mut db = ptr::null_mut();
    let status = unsafe { dpf_database_load(f.schema.as_ptr(), f.data.as_ptr(), &mut db) };
    assert_eq!(status, DpfStatus::Ok, "{}", last_error());
    db
}

#[test]
fn load_count_and_free() {
    let f = fixture();
    let db = load(&f);
    unsafe {
        assert_eq!(dpf_database_row_count(db), 60);
        assert_eq!(dpf_database_attribute_count(db), 3);
        dpf_database_free(db);
        assert_eq!(dpf_database_row_count(ptr::null()), 0);
        dpf_database_free(ptr::null_mut());
    }
}

#[test]
fn missing_file_reports_io() {
    let f = fixture();
    let missing = cstr("/nonexistent/data.csv");
    let mut db = ptr::null_mut();
    let status = unsafe { dpf_database_load(f.schema.as_ptr(), missing.as_ptr(), &mut db) };
    assert_eq!(status, DpfStatus::Io);
    assert!(db.is_null());
    assert!(last_error().contains("/nonexistent/data.csv"));
}

#[test]
fn fit_save_load_sample() {
    let f = fixture();
    let db = load(&f);
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(dpf_model_fit(db, 0.0, true, 1, &mut model), DpfStatus::Ok);
        let path = cstr(f.root.join("model.json").to_str().unwrap());
        assert_eq!(dpf_model_save(model, path.as_ptr()), DpfStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(dpf_model_load(path.as_ptr(), &mut loaded), DpfStatus::Ok);

        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(dpf_model_sample(model, 100, 9, &mut a), DpfStatus::Ok);
        assert_eq!(dpf_model_sample(loaded, 100, 9, &mut b), DpfStatus::Ok);
        assert_eq!(dpf_database_row_count(a), 100);
        let (pa, pb) = (f.root.join("a.csv"), f.root.join("b.csv"));
        assert_eq!(dpf_database_write_csv(a, cstr(pa.to_str().unwrap()).as_ptr()), DpfStatus::Ok);
        assert_eq!(dpf_database_write_csv(b, cstr(pb.to_str().unwrap()).as_ptr()), DpfStatus::Ok);
        assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());

        let mut noisy = ptr::null_mut();
        assert_eq!(dpf_model_fit(db, -1.0, false, 1, &mut noisy), DpfStatus::Privacy);
        assert!(noisy.is_null());

        for d in [a, b, db] {
            dpf_database_free(d);
        }
        dpf_model_free(model);
        dpf_model_free(loaded);
    }
}

#[test]
fn corrupt_model_is_parse_error() {
    let f = fixture();
    let path = f.root.join("bad.json");
    fs::write(&path, "{not json").unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { dpf_model_load(cstr(path.to_str().unwrap()).as_ptr(), &mut model) };
    assert_eq!(status, DpfStatus::Parse);
}

#[test]
fn fairness_values_and_undefined_flags() {
    let f = fixture();
    let db = load(&f);
    let s = cstr(r#"{"attribute":"sex","op":"eq","value":"Female"}"#);
    let y = cstr(r#"{"attribute":"recid","op":"eq","value":"1"}"#);
    let preds = [1u8; 60];
    let mut values = [0.0f64; DPF_MEASURE_COUNT];
    let mut defined = [9u8; DPF_MEASURE_COUNT];
    let status = unsafe {
        dpf_fairness_evaluate(db, s.as_ptr(), y.as_ptr(), preds.as_ptr(), preds.len(), values.as_mut_ptr(), defined.as_mut_ptr())
    };
    assert_eq!(status, DpfStatus::Ok, "{}", last_error());
    // a constant positive predictor: no true negatives anywhere
    assert_eq!(defined, [1, 1, 1, 1, 1, 0]);
    assert_eq!(values[0], 0.0);
    assert!(values[5].is_nan());

    let short = unsafe {
        dpf_fairness_evaluate(db, s.as_ptr(), y.as_ptr(), preds.as_ptr(), 10, values.as_mut_ptr(), defined.as_mut_ptr())
    };
    assert_eq!(short, DpfStatus::Fairness);
    let bad = cstr("{");
    let parse = unsafe {
        dpf_fairness_evaluate(db, bad.as_ptr(), y.as_ptr(), preds.as_ptr(), 60, values.as_mut_ptr(), defined.as_mut_ptr())
    };
    assert_eq!(parse, DpfStatus::Parse);
    unsafe { dpf_database_free(db) };
}

#[test]
fn budget_conversion() {
    let mut rho = 0.0;
    assert_eq!(unsafe { dpf_epsilon_delta_to_rho(1.0, 1e-6, &mut rho) }, DpfStatus::Ok);
    assert!((rho - 0.01746890476912343).abs() < 1e-12);
    assert_eq!(unsafe { dpf_epsilon_delta_to_rho(1.0, 1.5, &mut rho) }, DpfStatus::Privacy);
    let mut g = 0.0;
    assert_eq!(unsafe { dpf_rdp_gamma(0.2, 5, 4.0, &mut g) }, DpfStatus::Ok);
    assert!((g - 0.8).abs() < 1e-12);
    assert_eq!(unsafe { dpf_rdp_gamma(0.2, 5, 0.5, &mut g) }, DpfStatus::Privacy);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/dpfair.h");
    for name in [
        "dpf_last_error",
        "dpf_database_load",
        "dpf_database_free",
        "dpf_database_row_count",
        "dpf_database_attribute_count",
        "dpf_database_write_csv",
        "dpf_model_fit",
        "dpf_model_save",
        "dpf_model_load",
        "dpf_model_sample",
        "dpf_model_free",
        "dpf_fairness_evaluate",
        "dpf_epsilon_delta_to_rho",
        "dpf_rdp_gamma",
        "DPF_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
