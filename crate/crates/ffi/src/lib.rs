//! C ABI over `dpfair`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`DpfStatus`]; on failure [`dpf_last_error`] describes what went wrong on
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dpfair::dataset::{encode_csv, load_schema};
use dpfair::fairness::evaluate;
use dpfair::privacy::{allocate, epsilon_delta_to_rho, measure, rdp_curve};
use dpfair::select::build_plan;
use dpfair::{EncodedDatabase, Error, Measure, NoiseMode, PredicateSpec, PredictionVector, SelectionPlan, StreamRng, TreeModel};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Io = 3,
    Parse = 4,
    Domain = 5,
    Marginal = 6,
    Privacy = 7,
    Model = 8,
    Fairness = 9,
    Config = 10,
    Panic = 11,
}

/// Opaque encoded database.
pub struct DpfDatabase(EncodedDatabase);

/// Opaque fitted tree model.
pub struct DpfModel(TreeModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> DpfStatus {
    match err {
        Error::Io { .. } => DpfStatus::Io,
        Error::Parse(_) => DpfStatus::Parse,
        Error::Domain(_) | Error::UnknownValue { .. } | Error::OutOfRange { .. } | Error::MissingColumn(_) => {
            DpfStatus::Domain
        }
        Error::BadClique(_) | Error::ShapeMismatch(_) | Error::NotNormalized(_) | Error::Not2Way(_) | Error::EmptyDatabase => {
            DpfStatus::Marginal
        }
        Error::NonPositiveBudget(_) | Error::NegativeSigma(_) | Error::BadAlpha(_) | Error::BadDelta(_) => {
            DpfStatus::Privacy
        }
        Error::MissingMeasurement(_) | Error::CalibrationDivergence { .. } => DpfStatus::Model,
        Error::LengthMismatch { .. }
        | Error::BadPredicate(_)
        | Error::DegenerateTarget
        | Error::SchemaMismatch(_)
        | Error::AllReplicatesUndefined(_) => DpfStatus::Fairness,
        _ => DpfStatus::Config,
    }
}

struct Failure(DpfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DpfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DpfStatus::Panic
        }
    }
}

unsafe fn string_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(DpfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(DpfStatus::InvalidString, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure(DpfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| Failure(DpfStatus::NullPointer, format!("{what} is null")))
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dpf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Load a CSV under a JSON schema.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpf_database_load(
    schema_path: *const c_char,
    csv_path: *const c_char,
    out: *mut *mut DpfDatabase,
) -> DpfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let schema = load_schema(PathBuf::from(string_arg(schema_path, "schema_path")?))?;
        let db = encode_csv(PathBuf::from(string_arg(csv_path, "csv_path")?), &schema)?;
        *out = Box::into_raw(Box::new(DpfDatabase(db)));
        Ok(())
    })
}

/// # Safety
/// `db` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dpf_database_free(db: *mut DpfDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dpf_database_row_count(db: *const DpfDatabase) -> usize {
    db.as_ref().map_or(0, |d| d.0.row_count())
}

/// Attribute count, or 0 for a null handle.
///
/// # Safety
/// `db` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dpf_database_attribute_count(db: *const DpfDatabase) -> usize {
    db.as_ref().map_or(0, |d| d.0.attribute_count())
}

/// Write the database as CSV using the schema's labels.
///
/// # Safety
/// `db` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dpf_database_write_csv(db: *const DpfDatabase, path: *const c_char) -> DpfStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        db.0.save_csv(string_arg(path, "path")?)?;
        Ok(())
    })
}

/// Select, measure and fit. A non-positive `rho` with `testing_mode` set
/// measures without noise.
///
/// # Safety
/// `db` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpf_model_fit(
    db: *const DpfDatabase,
    rho: f64,
    testing_mode: bool,
    seed: u64,
    out: *mut *mut DpfModel,
) -> DpfStatus {
    guard(|| {
        let db = &ref_arg(db, "db")?.0;
        let out = out_arg(out, "out")?;
        let mode = if testing_mode {
            NoiseMode::Disabled
        } else {
            NoiseMode::Calibrated { rho }
        };
        let plan = build_plan(db)?;
        let (measurements, _) = measure(db, &plan, mode, seed)?;
        let mut model = dpfair::model::fit(&measurements, &plan, db.domains())?;
        model.rows = db.row_count();
        *out = Box::into_raw(Box::new(DpfModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dpf_model_save(model: *const DpfModel, path: *const c_char) -> DpfStatus {
    guard(|| {
        ref_arg(model, "model")?.0.save(string_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpf_model_load(path: *const c_char, out: *mut *mut DpfModel) -> DpfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = TreeModel::load(string_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(DpfModel(model)));
        Ok(())
    })
}

/// Draw `rows` synthetic rows on the stream selected by `seed`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpf_model_sample(
    model: *const DpfModel,
    rows: usize,
    seed: u64,
    out: *mut *mut DpfDatabase,
) -> DpfStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let out = out_arg(out, "out")?;
        let mut rng = StreamRng::for_label(seed, "generate");
        let db = model.sample(rows, &mut rng)?;
        *out = Box::into_raw(Box::new(DpfDatabase(db)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn dpf_model_free(model: *mut DpfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of fairness measures written by [`dpf_fairness_evaluate`].
pub const DPF_MEASURE_COUNT: usize = 6;

/// Evaluate the six fairness measures. Predicates are JSON objects such as
/// `{"attribute":"sex","op":"eq","value":"Female"}`; `predictions` holds one
/// byte per row, nonzero meaning positive. Measure `i` goes to `values[i]`
/// and `defined[i]` is 0 when it is undefined. The order is demographic
/// parity, overall accuracy equality, equalized odds (false positive, true
/// positive), conditional use accuracy equality (true positive, true
/// negative).
///
/// # Safety
/// `predictions` must hold `len` bytes; `values` and `defined` must each
/// hold [`DPF_MEASURE_COUNT`] elements.
#[no_mangle]
pub unsafe extern "C" fn dpf_fairness_evaluate(
    db: *const DpfDatabase,
    protected_json: *const c_char,
    ground_truth_json: *const c_char,
    predictions: *const u8,
    len: usize,
    values: *mut f64,
    defined: *mut u8,
) -> DpfStatus {
    guard(|| {
        let db = &ref_arg(db, "db")?.0;
        let parse = |ptr, what| -> Result<PredicateSpec, Failure> {
            serde_json::from_str(string_arg(ptr, what)?).map_err(|e| Failure(DpfStatus::Parse, format!("{what}: {e}")))
        };
        let s = parse(protected_json, "protected_json")?;
        let y = parse(ground_truth_json, "ground_truth_json")?;
        if predictions.is_null() && len > 0 {
            return Err(Failure(DpfStatus::NullPointer, "predictions is null".into()));
        }
        if values.is_null() || defined.is_null() {
            return Err(Failure(DpfStatus::NullPointer, "output array is null".into()));
        }
        let preds = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(predictions, len).iter().map(|&b| b != 0).collect()
        };
        let report = evaluate(db, &s, &y, &PredictionVector::new(preds))?;
        let values = std::slice::from_raw_parts_mut(values, DPF_MEASURE_COUNT);
        let defined = std::slice::from_raw_parts_mut(defined, DPF_MEASURE_COUNT);
        for m in Measure::ALL {
            let v = report.get(m);
            values[m.index()] = v.unwrap_or(f64::NAN);
            defined[m.index()] = u8::from(v.is_some());
        }
        Ok(())
    })
}

/// zCDP budget for an (ε, δ) target.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpf_epsilon_delta_to_rho(epsilon: f64, delta: f64, out: *mut f64) -> DpfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = epsilon_delta_to_rho(epsilon, delta)?;
        Ok(())
    })
}

/// RDP cost at order `alpha` of spending `rho` on `attributes` one-way
/// marginals plus the `attributes - 1` edges of a spanning tree.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpf_rdp_gamma(rho: f64, attributes: usize, alpha: f64, out: *mut f64) -> DpfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let plan = SelectionPlan {
            attribute_count: attributes,
            tree_edges: (1..attributes).map(|v| (v - 1, v)).collect(),
            edge_weights: vec![0.0; attributes.saturating_sub(1)],
            forced_edge: None,
        };
        let alloc = allocate(rho, &plan)?;
        *out = rdp_curve(&alloc, alpha)?;
        Ok(())
    })
}
