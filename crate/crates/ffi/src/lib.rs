//! C ABI for the addnet toolkit.
//!
//! Models are opaque handles loaded from the model files the `addnet` CLI
//! writes. Every function returns an [`AddnetStatus`]; the last error
//! message is kept per thread and readable via
//! [`addnet_last_error_message`].

use addnet::compress::{forward_quantized, quantize_q8, QuantizedState};
use addnet::layers::{forward_eval, LayerState, NetworkSpec};
use addnet::mdop;
use addnet::tensor::Tensor;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    IoError = 3,
    ShapeError = 4,
    InternalError = 5,
}

fn status_of(err: &addnet::Error) -> AddnetStatus {
    match err {
        addnet::Error::Io(_) | addnet::Error::Codec(_) => AddnetStatus::IoError,
        addnet::Error::Shape(_) => AddnetStatus::ShapeError,
        _ => AddnetStatus::InternalError,
    }
}

/// An opaque loaded model: the network spec, its float weights, and a
/// lazily created int8 view.
pub struct AddnetModel {
    spec: NetworkSpec,
    state: LayerState<f32>,
    quantized: Option<QuantizedState>,
}

/// Load a model file written by the `addnet` CLI.
///
/// On success `*out` receives a handle that must be released with
/// [`addnet_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn addnet_model_load(
    path: *const c_char,
    out: *mut *mut AddnetModel,
) -> AddnetStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return AddnetStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return AddnetStatus::InvalidUtf8;
        }
    };
    match addnet::model_io::load_model(Path::new(path)) {
        Ok((spec, state)) => {
            let model = Box::new(AddnetModel { spec, state, quantized: None });
            *out = Box::into_raw(model);
            AddnetStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Release a model handle. Passing NULL is a no-op.
///
/// # Safety
/// `model` must be a pointer from [`addnet_model_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn addnet_model_free(model: *mut AddnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalars one input instance must provide.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn addnet_model_input_len(
    model: *const AddnetModel,
    out: *mut usize,
) -> AddnetStatus {
    if model.is_null() || out.is_null() {
        set_error("null pointer argument");
        return AddnetStatus::NullPointer;
    }
    *out = (*model).spec.input_len();
    AddnetStatus::Ok
}

/// Number of output logits per instance.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn addnet_model_output_len(
    model: *const AddnetModel,
    out: *mut usize,
) -> AddnetStatus {
    if model.is_null() || out.is_null() {
        set_error("null pointer argument");
        return AddnetStatus::NullPointer;
    }
    *out = (*model).spec.output_units;
    AddnetStatus::Ok
}

unsafe fn predict_impl(
    model: *mut AddnetModel,
    input: *const f32,
    input_len: usize,
    logits: *mut f32,
    logits_len: usize,
    quantized: bool,
) -> AddnetStatus {
    if model.is_null() || input.is_null() || logits.is_null() {
        set_error("null pointer argument");
        return AddnetStatus::NullPointer;
    }
    let model = &mut *model;
    if input_len != model.spec.input_len() {
        set_error(&format!(
            "input has {input_len} values, model expects {}",
            model.spec.input_len()
        ));
        return AddnetStatus::ShapeError;
    }
    if logits_len != model.spec.output_units {
        set_error(&format!(
            "output buffer holds {logits_len} values, model produces {}",
            model.spec.output_units
        ));
        return AddnetStatus::ShapeError;
    }
    let mut shape = vec![1usize];
    shape.extend_from_slice(&model.spec.input_shape);
    let data = std::slice::from_raw_parts(input, input_len).to_vec();
    let batch = match Tensor::from_data(&shape, data) {
        Ok(t) => t,
        Err(e) => {
            set_error(&e.to_string());
            return status_of(&e);
        }
    };
    let result = if quantized {
        if model.quantized.is_none() {
            match quantize_q8(&model.spec, &model.state) {
                Ok(q) => model.quantized = Some(q),
                Err(e) => {
                    set_error(&e.to_string());
                    return status_of(&e);
                }
            }
        }
        forward_quantized(&model.spec, model.quantized.as_ref().unwrap(), &batch)
    } else {
        forward_eval(&model.spec, &model.state, &batch)
    };
    match result {
        Ok(out) => {
            let dst = std::slice::from_raw_parts_mut(logits, logits_len);
            for (d, &v) in dst.iter_mut().zip(out.data()) {
                *d = v;
            }
            AddnetStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Run one instance through the float network. `input` must hold
/// `addnet_model_input_len` scalars in row-major time-by-channel order;
/// `logits` receives `addnet_model_output_len` values.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn addnet_model_predict(
    model: *mut AddnetModel,
    input: *const f32,
    input_len: usize,
    logits: *mut f32,
    logits_len: usize,
) -> AddnetStatus {
    predict_impl(model, input, input_len, logits, logits_len, false)
}

/// Like [`addnet_model_predict`] but through int8 md inference. The
/// quantized weights are built on first use and cached in the handle.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn addnet_model_predict_quantized(
    model: *mut AddnetModel,
    input: *const f32,
    input_len: usize,
    logits: *mut f32,
    logits_len: usize,
) -> AddnetStatus {
    predict_impl(model, input, input_len, logits, logits_len, true)
}

/// The multiplication-free scalar product `sgn(x*y)*(|x|+|y|)`.
#[no_mangle]
pub extern "C" fn addnet_md_scalar(x: f64, y: f64) -> f64 {
    mdop::md_scalar(x, y)
}

/// The md dot product of two equal-length vectors.
///
/// # Safety
/// `w` and `x` must point to `len` readable floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn addnet_md_dot(
    w: *const f32,
    x: *const f32,
    len: usize,
    out: *mut f32,
) -> AddnetStatus {
    if w.is_null() || x.is_null() || out.is_null() {
        set_error("null pointer argument");
        return AddnetStatus::NullPointer;
    }
    let w = std::slice::from_raw_parts(w, len);
    let x = std::slice::from_raw_parts(x, len);
    match mdop::md_dot(w, x) {
        Ok(v) => {
            *out = v;
            AddnetStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn addnet_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message of the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn addnet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use addnet::layers::init_network;
    use addnet::model_io::save_model;
    use addnet::presets;
    use addnet::rng::Rng;

    fn write_test_model(dir: &Path) -> std::path::PathBuf {
        let spec = presets::ir_table1(true, None);
        let state: LayerState<f32> = init_network(&spec, &mut Rng::new(3)).unwrap();
        let path = dir.join("model.bin");
        save_model(&path, &spec, &state).unwrap();
        path
    }

    #[test]
    fn load_predict_free() {
        let dir = std::env::temp_dir().join(format!("addnet_ffi_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = write_test_model(&dir);
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut AddnetModel = ptr::null_mut();
        unsafe {
            assert_eq!(addnet_model_load(cpath.as_ptr(), &mut handle), AddnetStatus::Ok);
            let mut in_len = 0usize;
            let mut out_len = 0usize;
            assert_eq!(addnet_model_input_len(handle, &mut in_len), AddnetStatus::Ok);
            assert_eq!(addnet_model_output_len(handle, &mut out_len), AddnetStatus::Ok);
            assert_eq!(in_len, 32);
            assert_eq!(out_len, 1);

            let input = vec![0.5f32; in_len];
            let mut logits = vec![0.0f32; out_len];
            assert_eq!(
                addnet_model_predict(handle, input.as_ptr(), in_len, logits.as_mut_ptr(), out_len),
                AddnetStatus::Ok
            );
            assert!(logits[0].is_finite());

            let mut q_logits = vec![0.0f32; out_len];
            assert_eq!(
                addnet_model_predict_quantized(
                    handle,
                    input.as_ptr(),
                    in_len,
                    q_logits.as_mut_ptr(),
                    out_len
                ),
                AddnetStatus::Ok
            );
            assert!(q_logits[0].is_finite());

            // shape error path
            let bad = addnet_model_predict(handle, input.as_ptr(), 7, logits.as_mut_ptr(), out_len);
            assert_eq!(bad, AddnetStatus::ShapeError);
            let msg = CStr::from_ptr(addnet_last_error_message());
            assert!(msg.to_str().unwrap().contains("7"));

            addnet_model_free(handle);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn null_and_missing_file_errors() {
        unsafe {
            let mut handle: *mut AddnetModel = ptr::null_mut();
            assert_eq!(
                addnet_model_load(ptr::null(), &mut handle),
                AddnetStatus::NullPointer
            );
            let cpath = CString::new("/definitely/not/here.bin").unwrap();
            assert_eq!(
                addnet_model_load(cpath.as_ptr(), &mut handle),
                AddnetStatus::IoError
            );
            assert!(handle.is_null());
        }
    }

    #[test]
    fn md_kernels_over_ffi() {
        assert_eq!(addnet_md_scalar(3.0, 0.1), 3.1);
        assert_eq!(addnet_md_scalar(5.0, 0.0), 0.0);
        let w = [1.0f32, -1.0];
        let x = [2.0f32, 3.0];
        let mut out = 0.0f32;
        unsafe {
            assert_eq!(addnet_md_dot(w.as_ptr(), x.as_ptr(), 2, &mut out), AddnetStatus::Ok);
        }
        assert_eq!(out, -1.0);
    }
}
