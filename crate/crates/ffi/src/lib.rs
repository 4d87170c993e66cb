//! C ABI over the carp3d core: opaque model and bag handles, a forward
//! pass, and the metric and thresholding routines.
//!
//! Every fallible function returns a [`Carp3dStatus`]. On failure the
//! message is available from [`carp3d_last_error`] on the same thread.
//! Panics are caught at the boundary and reported as `INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use carp3d::data::{load_feature_bag, FeatureBag};
use carp3d::diffmath::Matrix;
use carp3d::eval::{auc, f2_sweep};
use carp3d::model::{forward, load_checkpoint, ModelConfig, ModelParams};
use carp3d::preprocess::otsu_threshold;
use carp3d::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Carp3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Numeric = 6,
    Internal = 7,
}

/// A trained model loaded from a checkpoint.
pub struct Carp3dModel {
    config: ModelConfig,
    params: ModelParams,
}

/// The patch features of one slice.
pub struct Carp3dBag {
    bag: FeatureBag,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> Carp3dStatus {
    match err {
        Error::Io { .. } => Carp3dStatus::Io,
        Error::Parse { .. }
        | Error::Manifest(_)
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Truncated { .. }
        | Error::LengthMismatch { .. } => Carp3dStatus::Format,
        Error::Dimension { .. } | Error::EmptyBag(_) | Error::InvalidBag(_) => Carp3dStatus::Dimension,
        Error::NonFinite { .. } | Error::Degenerate(_) | Error::Metric(_) => Carp3dStatus::Numeric,
        Error::Contract(_) | Error::Config(_) | Error::InsufficientData(_) => Carp3dStatus::InvalidArgument,
        Error::Fold { source, .. } => status_of(source),
    }
}

struct Fail(Carp3dStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(Carp3dStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(Carp3dStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> Carp3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Carp3dStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            Carp3dStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn out_arg<'a, T>(out: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    out.as_mut().ok_or_else(|| null(what))
}

fn labels_arg(labels: &[u8]) -> Result<Vec<usize>, Fail> {
    labels
        .iter()
        .map(|&l| match l {
            0 | 1 => Ok(l as usize),
            other => Err(invalid(format!("label {other} is not 0 or 1"))),
        })
        .collect()
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn carp3d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn carp3d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. Release with [`carp3d_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn carp3d_model_load(path: *const c_char, out: *mut *mut Carp3dModel) -> Carp3dStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let (config, params) = load_checkpoint(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(Carp3dModel { config, params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`carp3d_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn carp3d_model_free(model: *mut Carp3dModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Patch feature width the model expects.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn carp3d_model_feature_dim(model: *const Carp3dModel, out: *mut usize) -> Carp3dStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = m.config.feature_dim;
        Ok(())
    })
}

/// Neighbors per side the model was trained with.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn carp3d_model_neighbors(model: *const Carp3dModel, out: *mut usize) -> Carp3dStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = m.config.neighborhood.m;
        Ok(())
    })
}

/// Reads a feature file. Release with [`carp3d_bag_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn carp3d_bag_load(path: *const c_char, out: *mut *mut Carp3dBag) -> Carp3dStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let bag = load_feature_bag(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(Carp3dBag { bag }));
        Ok(())
    })
}

/// Builds a bag from `n_patches × dim` row-major features. `coords` holds
/// `(row, col)` pairs, `2 * n_patches` values, or is null to place the
/// patches along row 0.
///
/// # Safety
/// `features` must hold `n_patches * dim` values, `coords` (if non-null)
/// `2 * n_patches`, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn carp3d_bag_from_features(
    features: *const f64,
    n_patches: usize,
    dim: usize,
    coords: *const u32,
    patch_size_px: u32,
    out: *mut *mut Carp3dBag,
) -> Carp3dStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let len = n_patches
            .checked_mul(dim)
            .ok_or_else(|| invalid("n_patches * dim overflows"))?;
        let data = slice_arg(features, len, "features")?.to_vec();
        let coords: Vec<(u32, u32)> = if coords.is_null() {
            (0..n_patches as u32).map(|c| (0, c)).collect()
        } else {
            slice_arg(coords, 2 * n_patches, "coords")?
                .chunks_exact(2)
                .map(|p| (p[0], p[1]))
                .collect()
        };
        let bag = FeatureBag::new(Matrix::new(n_patches, dim, data)?, coords, patch_size_px)?;
        *out = Box::into_raw(Box::new(Carp3dBag { bag }));
        Ok(())
    })
}

/// # Safety
/// `bag` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn carp3d_bag_free(bag: *mut Carp3dBag) {
    if !bag.is_null() {
        drop(Box::from_raw(bag));
    }
}

/// # Safety
/// `bag` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn carp3d_bag_num_patches(bag: *const Carp3dBag, out: *mut usize) -> Carp3dStatus {
    guard(|| {
        let b = bag.as_ref().ok_or_else(|| null("bag"))?;
        *out_arg(out, "out")? = b.bag.num_patches();
        Ok(())
    })
}

/// Scores one slice of interest. `bags` lists the SOI and its neighbors in
/// depth order; `soi_pos` indexes the SOI. Writes the class-1 probability to
/// `out_prob`. When `out_attention` is non-null it receives the attention
/// over the SOI's patches and must hold `attention_len` values, which must
/// equal the SOI's patch count.
///
/// # Safety
/// `model` must be a live handle, `bags` must point to `n_bags` live bag
/// handles, and the output pointers must be writable for their lengths.
#[no_mangle]
pub unsafe extern "C" fn carp3d_predict(
    model: *const Carp3dModel,
    bags: *const *const Carp3dBag,
    n_bags: usize,
    soi_pos: usize,
    out_prob: *mut f64,
    out_attention: *mut f64,
    attention_len: usize,
) -> Carp3dStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out_prob = out_arg(out_prob, "out_prob")?;
        if n_bags == 0 {
            return Err(invalid("n_bags must be >= 1"));
        }
        let handles = slice_arg(bags, n_bags, "bags")?;
        let refs = handles
            .iter()
            .map(|&h| h.as_ref().map(|b| &b.bag).ok_or_else(|| null("bag handle")))
            .collect::<Result<Vec<_>, _>>()?;
        let pred = forward(&refs, soi_pos, &m.config, &m.params)?;
        *out_prob = pred.risk();
        if !out_attention.is_null() {
            let att = pred.soi_attention().attention;
            if att.len() != attention_len {
                return Err(Fail(
                    Carp3dStatus::Dimension,
                    format!("SOI has {} patches, attention buffer holds {attention_len}", att.len()),
                ));
            }
            std::slice::from_raw_parts_mut(out_attention, attention_len).copy_from_slice(&att);
        }
        Ok(())
    })
}

/// Area under the ROC curve; ties count one half. Labels are 0 or 1.
///
/// # Safety
/// `scores` and `labels` must hold `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn carp3d_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> Carp3dStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l = labels_arg(slice_arg(labels, n, "labels")?)?;
        *out_arg(out, "out")? = auc(s, &l)?;
        Ok(())
    })
}

/// Best F2 over all score thresholds and the threshold achieving it.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn carp3d_f2_sweep(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_f2: *mut f64,
    out_threshold: *mut f64,
) -> Carp3dStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l = labels_arg(slice_arg(labels, n, "labels")?)?;
        let (f2, t) = f2_sweep(s, &l)?;
        *out_arg(out_f2, "out_f2")? = f2;
        *out_arg(out_threshold, "out_threshold")? = t;
        Ok(())
    })
}

/// Otsu threshold of a histogram; foreground is `bin >= threshold`.
///
/// # Safety
/// `hist` must hold `n_bins` counts and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn carp3d_otsu_threshold(hist: *const u64, n_bins: usize, out: *mut usize) -> Carp3dStatus {
    guard(|| {
        let h = slice_arg(hist, n_bins, "hist")?;
        *out_arg(out, "out")? = otsu_threshold(h)?;
        Ok(())
    })
}
