//! C ABI for the `nicenet` registration library.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`,
//! `*_load` or producing call and released with the matching `*_free`.
//! Every fallible function returns a [`NiceStatus`]; on failure the message
//! is available from [`nice_last_error_message`] on the same thread.
//! Panics never cross the boundary: they are reported as
//! `NICE_STATUS_INTERNAL`.
//!
//! Volumes are `depth × height × width` arrays of `float`, x fastest.
//! Displacement fields are three such arrays back to back (`u_x`, `u_y`,
//! `u_z`), in voxel units.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nicenet::field_ops::{njd_percent, warp_trilinear};
use nicenet::model::{Model, ModelConfig, RegistrationOutput};
use nicenet::training::load_model;
use nicenet::volumes::{load_volume, save_volume, FileFormat};
use nicenet::{DisplacementField, Error, Volume};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiceStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range or not valid UTF-8.
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Shape = 5,
    Io = 6,
    Format = 7,
    /// Non-finite values during computation.
    Numerical = 8,
    /// A panic inside the library.
    Internal = 9,
}

pub struct NiceVolume(Volume);

pub struct NiceField(DisplacementField);

pub struct NiceModel(Model);

pub struct NiceRegistration(RegistrationOutput);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NiceStatus {
    match e {
        Error::Format { .. } | Error::UnsupportedDtype { .. } => NiceStatus::Format,
        Error::Io { .. } => NiceStatus::Io,
        Error::Shape(_) => NiceStatus::Shape,
        Error::Config(_) => NiceStatus::Config,
        Error::NonFinite { .. } => NiceStatus::Numerical,
        Error::Degenerate(_) | Error::Data(_) | Error::Generation(_) | Error::EmptyEvaluation => NiceStatus::Data,
    }
}

struct Failure(NiceStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(NiceStatus::NullArgument, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NiceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NiceStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            NiceStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or point to a live `T`.
unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(NiceStatus::InvalidArgument, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `out` must be null or writable.
unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// # Safety
/// `shape` must be null or point to three writable `size_t`.
unsafe fn write_shape(shape: [usize; 3], out: *mut usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out_shape"));
    }
    unsafe { ptr::copy_nonoverlapping(shape.as_ptr(), out, 3) };
    Ok(())
}

/// # Safety
/// `out` must be null or point to `len` writable floats.
unsafe fn copy_out(src: &[f32], out: *mut f32, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < src.len() {
        return Err(Failure(
            NiceStatus::InvalidArgument,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    Ok(())
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nice_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nice_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `depth·height·width` floats into a new volume.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_volume_new(
    depth: usize,
    height: usize,
    width: usize,
    data: *const f32,
    out: *mut *mut NiceVolume,
) -> NiceStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = depth
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Failure(NiceStatus::InvalidArgument, "volume size overflows".into()))?;
        let values = unsafe { std::slice::from_raw_parts(data, n) }.to_vec();
        let vol = Volume::new([depth, height, width], values)?;
        unsafe { put(out, NiceVolume(vol)) }
    })
}

/// Reads a `.nii` file, or a raw blob with its `.txt` descriptor.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_volume_load(path: *const c_char, out: *mut *mut NiceVolume) -> NiceStatus {
    guard(|| {
        let path = unsafe { path_arg(path, "path") }?;
        let vol = load_volume(&path, FileFormat::from_path(&path))?;
        unsafe { put(out, NiceVolume(vol)) }
    })
}

/// Writes NIfTI-1 for `.nii` paths and raw otherwise.
///
/// # Safety
/// `vol` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nice_volume_save(vol: *const NiceVolume, path: *const c_char) -> NiceStatus {
    guard(|| {
        let vol = unsafe { get(vol, "vol") }?;
        let path = unsafe { path_arg(path, "path") }?;
        save_volume(&vol.0, &path, FileFormat::from_path(&path))?;
        Ok(())
    })
}

/// Writes `(depth, height, width)` to `out_shape[0..3]`.
///
/// # Safety
/// `vol` must be a live handle; `out_shape` must hold three `size_t`.
#[no_mangle]
pub unsafe extern "C" fn nice_volume_shape(vol: *const NiceVolume, out_shape: *mut usize) -> NiceStatus {
    guard(|| unsafe { write_shape(get(vol, "vol")?.0.shape(), out_shape) })
}

/// Copies the voxels into `out`, which must hold at least `len` floats.
///
/// # Safety
/// `vol` must be a live handle; `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn nice_volume_copy_data(vol: *const NiceVolume, out: *mut f32, len: usize) -> NiceStatus {
    guard(|| unsafe { copy_out(get(vol, "vol")?.0.data(), out, len) })
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nice_volume_free(vol: *mut NiceVolume) {
    if !vol.is_null() {
        drop(unsafe { Box::from_raw(vol) });
    }
}

/// Freshly initialised model. `config_json` holds a model configuration
/// object (keys as in the CLI config's `model` section) or is null for the
/// defaults.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_model_new(config_json: *const c_char, seed: u64, out: *mut *mut NiceModel) -> NiceStatus {
    guard(|| {
        let cfg = if config_json.is_null() {
            ModelConfig::default()
        } else {
            let text = unsafe { CStr::from_ptr(config_json) }
                .to_str()
                .map_err(|_| Failure(NiceStatus::InvalidArgument, "config is not UTF-8".into()))?;
            serde_json::from_str(text).map_err(|e| Failure(NiceStatus::Config, format!("model config: {e}")))?
        };
        let model = Model::new(cfg, seed)?;
        unsafe { put(out, NiceModel(model)) }
    })
}

/// Loads the network stored in a training checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_model_load(path: *const c_char, out: *mut *mut NiceModel) -> NiceStatus {
    guard(|| {
        let path = unsafe { path_arg(path, "path") }?;
        let model = load_model(&path)?;
        unsafe { put(out, NiceModel(model)) }
    })
}

/// Number of registration steps `L`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_model_levels(model: *const NiceModel, out: *mut usize) -> NiceStatus {
    guard(|| {
        let m = unsafe { get(model, "model") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = m.0.config().levels };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nice_model_free(model: *mut NiceModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Registers `moving` to `fixed` in one network pass. Dimensions must be
/// equal and multiples of 16. Safe to call concurrently on one model.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_register(
    model: *const NiceModel,
    fixed: *const NiceVolume,
    moving: *const NiceVolume,
    out: *mut *mut NiceRegistration,
) -> NiceStatus {
    guard(|| {
        let m = unsafe { get(model, "model") }?;
        let f = unsafe { get(fixed, "fixed") }?;
        let mv = unsafe { get(moving, "moving") }?;
        let reg = m.0.register(&f.0, &mv.0)?;
        unsafe { put(out, NiceRegistration(reg)) }
    })
}

/// Number of fields in a registration result (`L`).
///
/// # Safety
/// `reg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_registration_steps(reg: *const NiceRegistration, out: *mut usize) -> NiceStatus {
    guard(|| {
        let r = unsafe { get(reg, "reg") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = r.0.phi.len() };
        Ok(())
    })
}

/// Copy of the field of step `step` (0 = coarsest, `L − 1` = final, full
/// resolution).
///
/// # Safety
/// `reg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_registration_field(
    reg: *const NiceRegistration,
    step: usize,
    out: *mut *mut NiceField,
) -> NiceStatus {
    guard(|| {
        let r = unsafe { get(reg, "reg") }?;
        let field = r.0.phi.get(step).ok_or_else(|| {
            Failure(
                NiceStatus::InvalidArgument,
                format!("step {step} out of range (0..{})", r.0.phi.len()),
            )
        })?;
        unsafe { put(out, NiceField(field.clone())) }
    })
}

/// # Safety
/// `reg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nice_registration_free(reg: *mut NiceRegistration) {
    if !reg.is_null() {
        drop(unsafe { Box::from_raw(reg) });
    }
}

/// # Safety
/// `field` must be a live handle; `out_shape` must hold three `size_t`.
#[no_mangle]
pub unsafe extern "C" fn nice_field_shape(field: *const NiceField, out_shape: *mut usize) -> NiceStatus {
    guard(|| unsafe { write_shape(get(field, "field")?.0.shape(), out_shape) })
}

/// Copies `3·depth·height·width` floats (`u_x`, then `u_y`, then `u_z`).
///
/// # Safety
/// `field` must be a live handle; `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn nice_field_copy_data(field: *const NiceField, out: *mut f32, len: usize) -> NiceStatus {
    guard(|| unsafe { copy_out(get(field, "field")?.0.data(), out, len) })
}

/// Percentage of voxels whose Jacobian determinant is ≤ 0.
///
/// # Safety
/// `field` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_field_njd_percent(field: *const NiceField, out: *mut f64) -> NiceStatus {
    guard(|| {
        let f = unsafe { get(field, "field") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = njd_percent(&f.0)?;
        unsafe { *out = v };
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nice_field_free(field: *mut NiceField) {
    if !field.is_null() {
        drop(unsafe { Box::from_raw(field) });
    }
}

/// Trilinear warp `vol ∘ φ` with border clamping.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nice_warp(vol: *const NiceVolume, field: *const NiceField, out: *mut *mut NiceVolume) -> NiceStatus {
    guard(|| {
        let v = unsafe { get(vol, "vol") }?;
        let f = unsafe { get(field, "field") }?;
        let w = warp_trilinear(&v.0, &f.0)?;
        unsafe { put(out, NiceVolume(w)) }
    })
}
