//! C ABI for the DeepONet library: opaque handles, integer status codes,
//! and a thread-local last-error message. The header is generated by
//! cbindgen at build time into `include/deeponet.h`.
//!
//! Conventions:
//! - constructors return a status and write the handle through an out
//!   pointer; every handle is released with its matching `_free`;
//! - any non-`DON_OK` status leaves a human-readable explanation in
//!   `don_last_error_message()` (valid on the calling thread until the
//!   next failing call);
//! - strings returned through out pointers are released with
//!   `don_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use deeponet::capacity::{composite_measure, rademacher_bound, CapacityError, DataBounds};
use deeponet::network::{checkpoint, DeepONet};
use deeponet::operator_data::OperatorDataset;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DonStatus {
    DonOk = 0,
    DonNullArgument = 1,
    DonInvalidArgument = 2,
    DonIoError = 3,
    DonParseError = 4,
    DonShapeError = 5,
    DonUnsupported = 6,
    DonNoConvergence = 7,
    DonUtf8Error = 8,
    DonInternal = 9,
}

/// Opaque DeepONet model handle.
pub struct DonModel {
    inner: DeepONet,
}

/// Opaque operator-dataset handle.
pub struct DonDataset {
    inner: OperatorDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(status: DonStatus, message: &str) -> DonStatus {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
    status
}

fn capacity_status(e: &CapacityError) -> DonStatus {
    match e {
        CapacityError::ShapeMismatch { .. } | CapacityError::WrongDepth { .. } => {
            DonStatus::DonShapeError
        }
        CapacityError::Biased | CapacityError::Unsupported(_) => DonStatus::DonUnsupported,
        CapacityError::EmptyDataset | CapacityError::BadArgument { .. } => {
            DonStatus::DonInvalidArgument
        }
        CapacityError::Linalg(_) => DonStatus::DonNoConvergence,
    }
}

unsafe fn path_from<'a>(ptr_: *const c_char) -> Result<&'a Path, DonStatus> {
    if ptr_.is_null() {
        return Err(set_error(DonStatus::DonNullArgument, "path pointer is null"));
    }
    match CStr::from_ptr(ptr_).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(set_error(DonStatus::DonUtf8Error, "path is not valid UTF-8")),
    }
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn don_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message for the most recent failure on this thread. Valid until the
/// next failing call from the same thread.
#[no_mangle]
pub extern "C" fn don_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a JSON checkpoint into a fresh model handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn don_model_load(
    path: *const c_char,
    out: *mut *mut DonModel,
) -> DonStatus {
    if out.is_null() {
        return set_error(DonStatus::DonNullArgument, "out pointer is null");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match checkpoint::load(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(DonModel { inner }));
            DonStatus::DonOk
        }
        Err(e @ checkpoint::CheckpointError::Io { .. }) => {
            set_error(DonStatus::DonIoError, &e.to_string())
        }
        Err(e) => set_error(DonStatus::DonParseError, &e.to_string()),
    }
}

/// Saves a model handle as a JSON checkpoint.
///
/// # Safety
/// `model` must be a live handle from this library; `path` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn don_model_save(model: *const DonModel, path: *const c_char) -> DonStatus {
    let Some(model) = model.as_ref() else {
        return set_error(DonStatus::DonNullArgument, "model handle is null");
    };
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match checkpoint::save(&model.inner, path) {
        Ok(()) => DonStatus::DonOk,
        Err(e) => set_error(DonStatus::DonIoError, &e.to_string()),
    }
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn don_model_free(model: *mut DonModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the branch and trunk input dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn don_model_input_dims(
    model: *const DonModel,
    branch_dim: *mut usize,
    trunk_dim: *mut usize,
) -> DonStatus {
    let Some(model) = model.as_ref() else {
        return set_error(DonStatus::DonNullArgument, "model handle is null");
    };
    if branch_dim.is_null() || trunk_dim.is_null() {
        return set_error(DonStatus::DonNullArgument, "out pointer is null");
    }
    *branch_dim = model.inner.branch().input_dim();
    *trunk_dim = model.inner.trunk().input_dim();
    DonStatus::DonOk
}

/// Evaluates `<branch(x_B), trunk(x_T)>` into `out`.
///
/// # Safety
/// `x_b`/`x_t` must point to `x_b_len`/`x_t_len` doubles; `out` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn don_model_forward(
    model: *const DonModel,
    x_b: *const f64,
    x_b_len: usize,
    x_t: *const f64,
    x_t_len: usize,
    out: *mut f64,
) -> DonStatus {
    let Some(model) = model.as_ref() else {
        return set_error(DonStatus::DonNullArgument, "model handle is null");
    };
    if (x_b.is_null() && x_b_len > 0) || (x_t.is_null() && x_t_len > 0) || out.is_null() {
        return set_error(DonStatus::DonNullArgument, "input or output pointer is null");
    }
    let xb = std::slice::from_raw_parts(x_b, x_b_len);
    let xt = std::slice::from_raw_parts(x_t, x_t_len);
    match model.inner.forward(xb, xt) {
        Ok(v) => {
            *out = v;
            DonStatus::DonOk
        }
        Err(e) => set_error(DonStatus::DonShapeError, &e.to_string()),
    }
}

/// Writes the composite capacity measure into `out`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn don_model_composite(model: *const DonModel, out: *mut f64) -> DonStatus {
    let Some(model) = model.as_ref() else {
        return set_error(DonStatus::DonNullArgument, "model handle is null");
    };
    if out.is_null() {
        return set_error(DonStatus::DonNullArgument, "out pointer is null");
    }
    match composite_measure(&model.inner) {
        Ok(report) => {
            *out = report.composite;
            DonStatus::DonOk
        }
        Err(e) => set_error(capacity_status(&e), &e.to_string()),
    }
}

/// Returns the full capacity report as a JSON string (released with
/// `don_string_free`).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn don_model_capacity_json(
    model: *const DonModel,
    out: *mut *mut c_char,
) -> DonStatus {
    let Some(model) = model.as_ref() else {
        return set_error(DonStatus::DonNullArgument, "model handle is null");
    };
    if out.is_null() {
        return set_error(DonStatus::DonNullArgument, "out pointer is null");
    }
    match composite_measure(&model.inner) {
        Ok(report) => {
            let json = serde_json::to_string(&report).unwrap_or_default();
            match CString::new(json) {
                Ok(c) => {
                    *out = c.into_raw();
                    DonStatus::DonOk
                }
                Err(_) => set_error(DonStatus::DonInternal, "JSON contained a NUL byte"),
            }
        }
        Err(e) => set_error(capacity_status(&e), &e.to_string()),
    }
}

/// Loads a JSON Lines dataset into a fresh handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn don_dataset_load(
    path: *const c_char,
    out: *mut *mut DonDataset,
) -> DonStatus {
    if out.is_null() {
        return set_error(DonStatus::DonNullArgument, "out pointer is null");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match OperatorDataset::load(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(DonDataset { inner }));
            DonStatus::DonOk
        }
        Err(e @ deeponet::operator_data::DataError::Io { .. }) => {
            set_error(DonStatus::DonIoError, &e.to_string())
        }
        Err(e) => set_error(DonStatus::DonParseError, &e.to_string()),
    }
}

/// Releases a dataset handle. Null is a no-op.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn don_dataset_free(dataset: *mut DonDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn don_dataset_len(dataset: *const DonDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Empirical Rademacher complexity bound of the model class at the
/// model's own composite capacity, on the given dataset, with product
/// contraction constant `contraction_l` (1.0 for abs activations).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn don_empirical_rademacher_bound(
    model: *const DonModel,
    dataset: *const DonDataset,
    contraction_l: f64,
    out: *mut f64,
) -> DonStatus {
    let Some(model) = model.as_ref() else {
        return set_error(DonStatus::DonNullArgument, "model handle is null");
    };
    let Some(dataset) = dataset.as_ref() else {
        return set_error(DonStatus::DonNullArgument, "dataset handle is null");
    };
    if out.is_null() {
        return set_error(DonStatus::DonNullArgument, "out pointer is null");
    }
    let report = match composite_measure(&model.inner) {
        Ok(r) => r,
        Err(e) => return set_error(capacity_status(&e), &e.to_string()),
    };
    let bounds = match DataBounds::from_samples(&dataset.inner.samples) {
        Ok(b) => b,
        Err(e) => return set_error(capacity_status(&e), &e.to_string()),
    };
    match rademacher_bound(&report, contraction_l, &bounds, Some(&dataset.inner.samples)) {
        Ok(rb) => {
            *out = rb.empirical.unwrap_or(f64::NAN);
            DonStatus::DonOk
        }
        Err(e) => set_error(capacity_status(&e), &e.to_string()),
    }
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn don_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use deeponet::network::Activation;
    use deeponet::training::init_model;
    use std::ptr;

    fn cpath(path: &Path) -> CString {
        CString::new(path.to_str().unwrap()).unwrap()
    }

    #[test]
    fn model_round_trip_and_forward() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = init_model(&[3, 4, 2], &[1, 4, 2], Activation::Abs, 7);
        checkpoint::save(&model, &path).unwrap();

        unsafe {
            let mut handle: *mut DonModel = ptr::null_mut();
            assert_eq!(don_model_load(cpath(&path).as_ptr(), &mut handle), DonStatus::DonOk);
            let mut d1 = 0usize;
            let mut d2 = 0usize;
            assert_eq!(don_model_input_dims(handle, &mut d1, &mut d2), DonStatus::DonOk);
            assert_eq!((d1, d2), (3, 1));

            let xb = [0.3, -0.2, 0.9];
            let xt = [0.5];
            let mut out = f64::NAN;
            assert_eq!(
                don_model_forward(handle, xb.as_ptr(), 3, xt.as_ptr(), 1, &mut out),
                DonStatus::DonOk
            );
            let expect = model.forward(&xb, &xt).unwrap();
            assert_eq!(out.to_bits(), expect.to_bits());

            // Shape error surfaces with a message.
            assert_eq!(
                don_model_forward(handle, xb.as_ptr(), 2, xt.as_ptr(), 1, &mut out),
                DonStatus::DonShapeError
            );
            let msg = CStr::from_ptr(don_last_error_message()).to_str().unwrap();
            assert!(msg.contains("dimension"), "message: {msg}");

            let save_path = dir.path().join("copy.json");
            assert_eq!(don_model_save(handle, cpath(&save_path).as_ptr()), DonStatus::DonOk);
            assert_eq!(checkpoint::load(&save_path).unwrap(), model);
            don_model_free(handle);
        }
    }

    #[test]
    fn capacity_and_bound_through_ffi() {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("model.json");
        let data_path = dir.path().join("data.jsonl");
        let model = init_model(&[4, 4, 2], &[1, 4, 2], Activation::Abs, 9);
        checkpoint::save(&model, &model_path).unwrap();
        let cfg = deeponet::operator_data::AntiderivativeConfig::default_with_sensors(4);
        let ds = deeponet::operator_data::make_antiderivative_dataset(&cfg, 16, 3).unwrap();
        ds.save(&data_path).unwrap();

        unsafe {
            let mut mh: *mut DonModel = ptr::null_mut();
            let mut dh: *mut DonDataset = ptr::null_mut();
            assert_eq!(don_model_load(cpath(&model_path).as_ptr(), &mut mh), DonStatus::DonOk);
            assert_eq!(don_dataset_load(cpath(&data_path).as_ptr(), &mut dh), DonStatus::DonOk);
            assert_eq!(don_dataset_len(dh), 16);

            let mut composite = f64::NAN;
            assert_eq!(don_model_composite(mh, &mut composite), DonStatus::DonOk);
            let expect = composite_measure(&model).unwrap().composite;
            assert_eq!(composite.to_bits(), expect.to_bits());

            let mut json: *mut c_char = ptr::null_mut();
            assert_eq!(don_model_capacity_json(mh, &mut json), DonStatus::DonOk);
            let text = CStr::from_ptr(json).to_str().unwrap();
            assert!(text.contains("\"composite\""));
            don_string_free(json);

            let mut bound = f64::NAN;
            assert_eq!(
                don_empirical_rademacher_bound(mh, dh, 1.0, &mut bound),
                DonStatus::DonOk
            );
            assert!(bound.is_finite() && bound > 0.0);

            don_dataset_free(dh);
            don_model_free(mh);
        }
    }

    #[test]
    fn null_and_missing_inputs_are_reported() {
        unsafe {
            let mut handle: *mut DonModel = ptr::null_mut();
            assert_eq!(don_model_load(ptr::null(), &mut handle), DonStatus::DonNullArgument);
            let missing = CString::new("/nonexistent/model.json").unwrap();
            assert_eq!(don_model_load(missing.as_ptr(), &mut handle), DonStatus::DonIoError);
            let mut out = 0.0;
            assert_eq!(don_model_composite(ptr::null(), &mut out), DonStatus::DonNullArgument);
            don_model_free(ptr::null_mut());
            don_dataset_free(ptr::null_mut());
            don_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn version_is_non_empty() {
        unsafe {
            let v = CStr::from_ptr(don_version()).to_str().unwrap();
            assert!(!v.is_empty());
        }
    }
}
