//! C ABI over the `softdepth` library.
//!
//! Objects cross the boundary as opaque handles created by `sd_*_new` or
//! `sd_*_load` and released by the matching `sd_*_free`. Every fallible
//! function returns an [`SdStatus`]; on failure, [`sd_last_error`] returns a
//! message for the calling thread until the next failing call on that thread.
//! Images are row-major interleaved RGB `f32` in `[0, 1]`; outputs are
//! row-major at half the input resolution.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use softdepth::bins::{Binning, InferenceRule};
use softdepth::data::image_input;
use softdepth::loss::ScoreMap;
use softdepth::net::{predict_scores, scores_to_depth, Checkpoint};
use softdepth::tensor::{Shape4, Tensor4};
use softdepth::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent with the model.
    InvalidArgument = 2,
    /// A file could not be read.
    Io = 3,
    /// A file was read but its contents are malformed.
    Format = 4,
    /// A caller buffer is too small; the required length was written back.
    BufferTooSmall = 5,
    /// A computation produced a non-finite value.
    Numeric = 6,
    /// The library panicked; this is a bug.
    Internal = 7,
}

/// Which depth each pixel reports.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdRule {
    /// Probability-weighted sum of log bin centres.
    Soft = 0,
    /// Centre of the most probable bin.
    Hard = 1,
}

impl From<SdRule> for InferenceRule {
    fn from(r: SdRule) -> Self {
        match r {
            SdRule::Soft => InferenceRule::Soft,
            SdRule::Hard => InferenceRule::Hard,
        }
    }
}

/// Log-spaced depth bins.
pub struct SdBinning {
    inner: Binning,
}

/// A trained network together with its binning.
pub struct SdModel {
    ck: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Failure(SdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SdStatus::Io,
            Error::Format { .. } | Error::Config { .. } => SdStatus::Format,
            Error::NonFinite { .. } | Error::Diverged { .. } => SdStatus::Numeric,
            Error::Shape { .. } | Error::InvalidArgument(_) => SdStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SdStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SdStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SdStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Boxes `value` into `out`; nothing is allocated when `out` is null.
unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn write_out<T>(p: *mut T, what: &str, value: T) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

/// Message of the last failure on this thread; empty when none. The string
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates `bins` log-spaced bins over `[d_min, d_max]`.
///
/// # Safety
/// `out` must be null or valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sd_binning_new(
    d_min: f64,
    d_max: f64,
    bins: usize,
    out: *mut *mut SdBinning,
) -> SdStatus {
    guard(|| {
        let inner = Binning::new(d_min, d_max, bins)?;
        write_handle(out, SdBinning { inner })
    })
}

/// Releases a binning; null is ignored.
///
/// # Safety
/// `b` must be null or a handle from [`sd_binning_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_binning_free(b: *mut SdBinning) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Number of bins; 0 for a null handle.
///
/// # Safety
/// `b` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_binning_num_bins(b: *const SdBinning) -> usize {
    b.as_ref().map_or(0, |b| b.inner.num_bins())
}

/// Depth at the log-space centre of bin `index`.
///
/// # Safety
/// `b` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sd_binning_center(
    b: *const SdBinning,
    index: usize,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let b = &deref(b, "binning")?.inner;
        if index >= b.num_bins() {
            return Err(invalid(format!("bin {index} out of range 0..{}", b.num_bins())));
        }
        write_out(out, "out", b.bin_center(index))
    })
}

/// Bin index of a depth inside the binning range.
///
/// # Safety
/// `b` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sd_binning_quantize(
    b: *const SdBinning,
    depth: f64,
    out: *mut usize,
) -> SdStatus {
    guard(|| {
        let b = &deref(b, "binning")?.inner;
        write_out(out, "out", b.quantize(depth)?)
    })
}

/// Loads a checkpoint written by `softdepth train`.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_load(path: *const c_char, out: *mut *mut SdModel) -> SdStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let ck = Checkpoint::load(&PathBuf::from(path))?;
        write_handle(out, SdModel { ck })
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `m` must be null or a handle from [`sd_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_model_free(m: *mut SdModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of depth bins the model classifies into; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sd_model_num_bins(m: *const SdModel) -> usize {
    m.as_ref().map_or(0, |m| m.ck.binning.num_bins())
}

/// A copy of the model's binning, to be released with [`sd_binning_free`].
///
/// # Safety
/// `m` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_binning(m: *const SdModel, out: *mut *mut SdBinning) -> SdStatus {
    guard(|| {
        let inner = deref(m, "model")?.ck.binning.clone();
        write_handle(out, SdBinning { inner })
    })
}

/// Output size for a `height x width` input, or an error when the network
/// cannot take that size.
///
/// # Safety
/// `m` must be null or a live handle; `out_h` and `out_w` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sd_model_output_size(
    m: *const SdModel,
    height: usize,
    width: usize,
    out_h: *mut usize,
    out_w: *mut usize,
) -> SdStatus {
    guard(|| {
        let m = deref(m, "model")?;
        let (h, w) = output_size(m, height, width)?;
        write_out(out_h, "out_h", h)?;
        write_out(out_w, "out_w", w)
    })
}

fn output_size(m: &SdModel, height: usize, width: usize) -> Result<(usize, usize), Failure> {
    let k = m.ck.params.arch().input_multiple();
    if height == 0 || width == 0 || height % k != 0 || width % k != 0 {
        return Err(invalid(format!(
            "input {height}x{width} must be positive multiples of {k}"
        )));
    }
    Ok((height / 2, width / 2))
}

/// Per-pixel class probabilities of an interleaved RGB image, as a
/// `(1, bins, h/2, w/2)` tensor.
unsafe fn scores(
    m: &SdModel,
    rgb: *const f32,
    height: usize,
    width: usize,
) -> Result<ScoreMap<f32>, Failure> {
    output_size(m, height, width)?;
    if rgb.is_null() {
        return Err(null("rgb"));
    }
    let pixels = std::slice::from_raw_parts(rgb, height * width * 3);
    let image = Tensor4::from_fn(Shape4::new(1, 3, height, width), |_, c, y, x| {
        pixels[(y * width + x) * 3 + c]
    });
    Ok(predict_scores(&m.ck.params, &image_input::<f32>(&image)?)?)
}

/// Checks `len` against `needed`, reporting the requirement through `len`.
unsafe fn check_capacity(out: *mut f32, len: *mut usize, needed: usize) -> Result<(), Failure> {
    let have = *deref(len, "len")?;
    if out.is_null() || have < needed {
        len.write(needed);
        return Err(Failure(
            SdStatus::BufferTooSmall,
            format!("output needs {needed} floats, buffer holds {have}"),
        ));
    }
    len.write(needed);
    Ok(())
}

/// Predicts a depth map. `rgb` holds `height * width * 3` values; `out`
/// receives `(height/2) * (width/2)` depths. `*len` is the capacity of `out`
/// on entry and the number of values written (or needed) on return.
///
/// # Safety
/// Pointers must be null or valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn sd_model_predict(
    m: *const SdModel,
    rgb: *const f32,
    height: usize,
    width: usize,
    rule: SdRule,
    out: *mut f32,
    len: *mut usize,
) -> SdStatus {
    guard(|| {
        let m = deref(m, "model")?;
        let (oh, ow) = output_size(m, height, width)?;
        check_capacity(out, len, oh * ow)?;
        let probs = scores(m, rgb, height, width)?;
        let depth = scores_to_depth(&probs, &m.ck.binning, rule.into())?;
        ptr::copy_nonoverlapping(depth.data().as_ptr(), out, oh * ow);
        Ok(())
    })
}

/// Per-pixel class probabilities in planar `(bins, height/2, width/2)` order.
/// Buffer conventions match [`sd_model_predict`].
///
/// # Safety
/// Pointers must be null or valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn sd_model_scores(
    m: *const SdModel,
    rgb: *const f32,
    height: usize,
    width: usize,
    out: *mut f32,
    len: *mut usize,
) -> SdStatus {
    guard(|| {
        let m = deref(m, "model")?;
        let (oh, ow) = output_size(m, height, width)?;
        let needed = m.ck.binning.num_bins() * oh * ow;
        check_capacity(out, len, needed)?;
        let probs = scores(m, rgb, height, width)?;
        ptr::copy_nonoverlapping(probs.tensor().data().as_ptr(), out, needed);
        Ok(())
    })
}
