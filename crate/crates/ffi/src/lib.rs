//! C interface: load a checkpoint, wrap a volume, predict.
//!
//! Every function returns an [`NdStatus`]. On failure the message is kept
//! per thread and read back with [`nd_last_error`]. Handles are opaque and
//! owned by the caller until passed to the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use neurodram::model::{Checkpoint, Model};
use neurodram::volume::{read_volume, ContextRecord, LabeledCase, Volume3D};
use neurodram::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Panic = 6,
}

/// A loaded model checkpoint.
pub struct NdModel {
    model: Model,
}

/// One volume, voxels in z, y, x order.
pub struct NdVolume {
    volume: Volume3D,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NdStatus {
    match e {
        Error::Io { .. } => NdStatus::Io,
        Error::Format(_) | Error::Json { .. } => NdStatus::Format,
        Error::Data(_) | Error::Config(_) => NdStatus::Data,
        _ => NdStatus::InvalidArgument,
    }
}

struct Fail(NdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NdStatus::NullArgument, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(NdStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn context_arg(json: *const c_char) -> Result<ContextRecord, Fail> {
    if json.is_null() {
        return Ok(ContextRecord::default());
    }
    let text = str_arg(json, "context_json")?;
    let record: ContextRecord =
        serde_json::from_str(text).map_err(|e| Fail(NdStatus::InvalidArgument, format!("context_json: {e}")))?;
    record.validate()?;
    Ok(record)
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn case_for(volume: &NdVolume, context: ContextRecord) -> LabeledCase {
    LabeledCase { case_id: "ffi".into(), volume: volume.volume.clone(), context, label: 0, signal_center: None }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn nd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a volume file written by `neurodram generate`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nd_volume_read(path: *const c_char, out: *mut *mut NdVolume) -> NdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let volume = read_volume(path)?;
        *out = Box::into_raw(Box::new(NdVolume { volume }));
        Ok(())
    })
}

/// Copies `len` voxels of a `depth` x `height` x `width` volume. Trained
/// models expect values in [0, 1].
///
/// # Safety
/// `voxels` must point to `len` floats and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_volume_from_voxels(
    depth: usize,
    height: usize,
    width: usize,
    voxels: *const f32,
    len: usize,
    out: *mut *mut NdVolume,
) -> NdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if voxels.is_null() {
            return Err(null("voxels"));
        }
        if depth.checked_mul(height).and_then(|n| n.checked_mul(width)) != Some(len) {
            return Err(Fail(NdStatus::InvalidArgument, format!("{len} voxels for a {depth}x{height}x{width} volume")));
        }
        let data = std::slice::from_raw_parts(voxels, len).to_vec();
        let volume = Volume3D::new([depth, height, width], data)?;
        *out = Box::into_raw(Box::new(NdVolume { volume }));
        Ok(())
    })
}

/// Writes depth, height and width into `dims[0..3]`.
///
/// # Safety
/// `volume` must come from this library and `dims` hold three values.
#[no_mangle]
pub unsafe extern "C" fn nd_volume_dims(volume: *const NdVolume, dims: *mut usize) -> NdStatus {
    guard(|| {
        let v = volume.as_ref().ok_or_else(|| null("volume"))?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&v.volume.dims());
        Ok(())
    })
}

/// # Safety
/// `volume` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn nd_volume_free(volume: *mut NdVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Loads a checkpoint written by `neurodram train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nd_model_load(path: *const c_char, out: *mut *mut NdModel) -> NdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let ck = Checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(NdModel { model: ck.model }));
        Ok(())
    })
}

/// Glimpses per episode; 0 for the convolutional baseline.
///
/// # Safety
/// `model` must come from this library and `steps` be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_model_steps(model: *const NdModel, steps: *mut usize) -> NdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(steps, "steps")? = match &m.model {
            Model::NeuroDram(d) => d.config.steps,
            Model::Baseline(_) => 0,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn nd_model_free(model: *mut NdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Probability of class 1. `context_json` is a JSON object of context fields
/// (absent keys are missing) or null for no context.
///
/// # Safety
/// Handles must come from this library; `context_json` must be null or a
/// NUL-terminated string; `probability` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nd_model_predict(
    model: *const NdModel,
    volume: *const NdVolume,
    context_json: *const c_char,
    probability: *mut f64,
) -> NdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = volume.as_ref().ok_or_else(|| null("volume"))?;
        let out = out_arg(probability, "probability")?;
        let case = case_for(v, context_arg(context_json)?);
        *out = match &m.model {
            Model::NeuroDram(d) => d.evaluate_episodes(&[case], d.eval_mode(), 0, 1)?[0].prediction,
            Model::Baseline(b) => b.predict(&[case], 1)?[0],
        };
        Ok(())
    })
}

/// Glimpse centers in voxel coordinates, three values per step. `capacity`
/// is the length of `centers` and must be at least 3 x steps.
///
/// # Safety
/// As for [`nd_model_predict`]; `centers` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn nd_model_trace(
    model: *const NdModel,
    volume: *const NdVolume,
    context_json: *const c_char,
    centers: *mut f64,
    capacity: usize,
    probability: *mut f64,
) -> NdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = volume.as_ref().ok_or_else(|| null("volume"))?;
        let out = out_arg(probability, "probability")?;
        if centers.is_null() {
            return Err(null("centers"));
        }
        let Model::NeuroDram(d) = &m.model else {
            return Err(Fail(NdStatus::InvalidArgument, "the baseline has no glimpses".into()));
        };
        let need = 3 * d.config.steps;
        if capacity < need {
            return Err(Fail(NdStatus::InvalidArgument, format!("capacity {capacity} < {need}")));
        }
        let case = case_for(v, context_arg(context_json)?);
        let ep = d.evaluate_episodes(&[case], d.eval_mode(), 0, 1)?.remove(0);
        let dst = std::slice::from_raw_parts_mut(centers, need);
        for (chunk, g) in dst.chunks_exact_mut(3).zip(&ep.glimpses) {
            chunk.copy_from_slice(&g.center.map(|c| c as f64));
        }
        *out = ep.prediction;
        Ok(())
    })
}
