//! C ABI for the cmpa library.
//!
//! Scalar loss and metric routines operate directly on caller buffers;
//! trained models are exposed through an opaque handle loaded from a
//! checkpoint file. Every function returns a status code; on failure a
//! thread-local message is available via [`cmpa_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use cmpa::contour::Chunk;
use cmpa::error::Error;
use cmpa::eval::EmbeddingSet;
use cmpa::loss::{LossConfig, MarginMode, PairLabel, RatingBins};
use cmpa::model::Model;

/// Status codes returned by every cmpa FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IoError = 3,
    RuntimeError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> CmpaStatus {
    match err {
        Error::Io { .. } => CmpaStatus::IoError,
        Error::Usage(_) | Error::Parse(_) | Error::Validation(_) | Error::Shape(_) => {
            CmpaStatus::InvalidArgument
        }
        Error::Eval(_) | Error::Runtime(_) => CmpaStatus::RuntimeError,
    }
}

fn fail(err: Error) -> CmpaStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing cmpa call on the same thread.
#[no_mangle]
pub extern "C" fn cmpa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Margin selection for the batch contrastive loss.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpaMarginMode {
    Fixed = 0,
    Variable = 1,
}

macro_rules! nonnull {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error(concat!(stringify!($ptr), " is null"));
            return CmpaStatus::NullPointer;
        }
    };
}

/// Convert a frequency in Hz to normalized MIDI pitch in [0, 1];
/// 0 Hz (unvoiced) maps to exactly 0.
/// # Safety
/// `out` must be valid for writing one f64.
#[no_mangle]
pub unsafe extern "C" fn cmpa_hz_to_normalized_midi(freq_hz: f64, out: *mut f64) -> CmpaStatus {
    nonnull!(out);
    match cmpa::contour::hz_to_normalized_midi(freq_hz) {
        Ok(v) => {
            unsafe { *out = v };
            CmpaStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Bin index of a rating in [0, 1] among `bins` equal-width bins.
/// # Safety
/// `out` must be valid for writing one u32.
#[no_mangle]
pub unsafe extern "C" fn cmpa_assign_bin(rating: f64, bins: u32, out: *mut u32) -> CmpaStatus {
    nonnull!(out);
    let rating_bins = match RatingBins::new(bins as usize) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    match cmpa::loss::assign_bin(rating, &rating_bins) {
        Ok(idx) => {
            unsafe { *out = idx as u32 };
            CmpaStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Max-margin contrastive loss of one pair given its latent distance.
/// # Safety
/// `out` must be valid for writing one f64.
#[no_mangle]
pub unsafe extern "C" fn cmpa_contrastive_pair_loss(
    distance: f64,
    same_bin: bool,
    margin: f64,
    out: *mut f64,
) -> CmpaStatus {
    nonnull!(out);
    if !distance.is_finite() || distance < 0.0 || !margin.is_finite() || margin < 0.0 {
        set_error("distance and margin must be non-negative");
        return CmpaStatus::InvalidArgument;
    }
    unsafe { *out = cmpa::loss::contrastive_pair_loss(distance, same_bin, margin) };
    CmpaStatus::Ok
}

/// Variable margin |bin_a - bin_b| * s.
/// # Safety
/// `out` must be valid for writing one f64.
#[no_mangle]
pub unsafe extern "C" fn cmpa_variable_margin(
    bin_a: u32,
    bin_b: u32,
    s: f64,
    out: *mut f64,
) -> CmpaStatus {
    nonnull!(out);
    unsafe { *out = cmpa::loss::variable_margin(bin_a as usize, bin_b as usize, s) };
    CmpaStatus::Ok
}

/// Mean squared error between two vectors of length n.
/// # Safety
/// `predictions` and `targets` must point to `n` readable f64 values; `out` must be valid for writing one f64.
#[no_mangle]
pub unsafe extern "C" fn cmpa_mse_loss(
    predictions: *const f64,
    targets: *const f64,
    n: usize,
    out: *mut f64,
) -> CmpaStatus {
    nonnull!(predictions);
    nonnull!(targets);
    nonnull!(out);
    let (p, t) = unsafe {
        (
            std::slice::from_raw_parts(predictions, n),
            std::slice::from_raw_parts(targets, n),
        )
    };
    match cmpa::loss::mse_loss(p, t) {
        Ok(v) => {
            unsafe { *out = v };
            CmpaStatus::Ok
        }
        Err(e) => fail(e),
    }
}

fn ndarray_from(data: &[f64], rows: usize, cols: usize) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_vec((rows, cols), data.to_vec()).expect("shape checked")
}

/// Weighted contrastive loss over `n_pairs` latent pairs. `latents_a` and
/// `latents_b` are row-major n_pairs x dim buffers; `bins_a`/`bins_b` hold
/// the rating-bin index of each pair member.
/// # Safety
/// `latents_a`/`latents_b` must hold `n_pairs * dim` readable f64 values, `bins_a`/`bins_b` `n_pairs` readable u32 values; `out` must be valid for writing one f64.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cmpa_weighted_contrastive_batch_loss(
    latents_a: *const f64,
    latents_b: *const f64,
    n_pairs: usize,
    dim: usize,
    bins_a: *const u32,
    bins_b: *const u32,
    n_bins: u32,
    margin_s: f64,
    mode: CmpaMarginMode,
    out: *mut f64,
) -> CmpaStatus {
    nonnull!(latents_a);
    nonnull!(latents_b);
    nonnull!(bins_a);
    nonnull!(bins_b);
    nonnull!(out);
    if n_pairs == 0 || dim == 0 {
        set_error("n_pairs and dim must be positive");
        return CmpaStatus::InvalidArgument;
    }
    let (a, b, xa, xb) = unsafe {
        (
            std::slice::from_raw_parts(latents_a, n_pairs * dim),
            std::slice::from_raw_parts(latents_b, n_pairs * dim),
            std::slice::from_raw_parts(bins_a, n_pairs),
            std::slice::from_raw_parts(bins_b, n_pairs),
        )
    };
    let cfg = LossConfig {
        margin: margin_s,
        bins: n_bins as usize,
        mode: match mode {
            CmpaMarginMode::Fixed => MarginMode::FixedMargin,
            CmpaMarginMode::Variable => MarginMode::VariableMargin,
        },
        contrastive_weight: 1.0,
    };
    let arr_a = ndarray_from(a, n_pairs, dim);
    let arr_b = ndarray_from(b, n_pairs, dim);
    let labels: Vec<PairLabel> = xa
        .iter()
        .zip(xb)
        .map(|(&i, &j)| PairLabel::new(i as usize, j as usize))
        .collect();
    match cmpa::loss::weighted_contrastive_batch_loss(arr_a.view(), arr_b.view(), &labels, &cfg) {
        Ok(v) => {
            unsafe { *out = v };
            CmpaStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Coefficient of determination of predictions against ground truth.
/// # Safety
/// `y_true` and `y_pred` must point to `n` readable f64 values; `out` must be valid for writing one f64.
#[no_mangle]
pub unsafe extern "C" fn cmpa_r_squared(
    y_true: *const f64,
    y_pred: *const f64,
    n: usize,
    out: *mut f64,
) -> CmpaStatus {
    nonnull!(y_true);
    nonnull!(y_pred);
    nonnull!(out);
    let (t, p) = unsafe {
        (
            std::slice::from_raw_parts(y_true, n),
            std::slice::from_raw_parts(y_pred, n),
        )
    };
    match cmpa::eval::r_squared(t, p) {
        Ok(v) => {
            unsafe { *out = v };
            CmpaStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Davies-Bouldin index of a labeled latent set. `latents` is row-major
/// n x dim; `ratings` are in [0, 1] and are binned into `n_bins` classes.
/// # Safety
/// `latents` must hold `n * dim` readable f64 values, `ratings` `n` readable f64 values; `out` must be valid for writing one f64.
#[no_mangle]
pub unsafe extern "C" fn cmpa_davies_bouldin(
    latents: *const f64,
    n: usize,
    dim: usize,
    ratings: *const f64,
    n_bins: u32,
    out: *mut f64,
) -> CmpaStatus {
    nonnull!(latents);
    nonnull!(ratings);
    nonnull!(out);
    if n == 0 || dim == 0 {
        set_error("n and dim must be positive");
        return CmpaStatus::InvalidArgument;
    }
    let bins = match RatingBins::new(n_bins as usize) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let (flat, r) = unsafe {
        (
            std::slice::from_raw_parts(latents, n * dim),
            std::slice::from_raw_parts(ratings, n),
        )
    };
    let ids = (0..n).map(|i| i.to_string()).collect();
    let emb = match EmbeddingSet::new(ndarray_from(flat, n, dim), r.to_vec(), ids, &bins) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    match cmpa::eval::davies_bouldin(&emb) {
        Ok(v) => {
            unsafe { *out = v };
            CmpaStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Opaque trained model handle.
pub struct CmpaModel {
    model: Model,
    input_len: usize,
}

/// Load a model from a checkpoint file. The handle must be released with
/// [`cmpa_model_free`].
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn cmpa_model_load(path: *const c_char, out: *mut *mut CmpaModel) -> CmpaStatus {
    nonnull!(path);
    nonnull!(out);
    let path_str = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("checkpoint path is not valid UTF-8");
            return CmpaStatus::InvalidArgument;
        }
    };
    let load = || -> cmpa::Result<CmpaModel> {
        let ckpt = cmpa::model::load_checkpoint(Path::new(path_str))?;
        let cfg = cmpa::config::RunConfig::parse(&ckpt.config_text, &[])?;
        let model = Model::from_checkpoint(&cfg.encoder, &ckpt)?;
        Ok(CmpaModel {
            model,
            input_len: cfg.chunk_len,
        })
    };
    match load() {
        Ok(handle) => {
            unsafe { *out = Box::into_raw(Box::new(handle)) };
            CmpaStatus::Ok
        }
        Err(e) => {
            unsafe { *out = ptr::null_mut() };
            fail(e)
        }
    }
}

/// Release a model handle. Passing null is a no-op.
/// # Safety
/// `model` must be null or a pointer obtained from [`cmpa_model_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cmpa_model_free(model: *mut CmpaModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Latent vector dimension of a loaded model.
/// # Safety
/// `model` must be a live handle from [`cmpa_model_load`]; `out` must be valid for writing one usize.
#[no_mangle]
pub unsafe extern "C" fn cmpa_model_latent_dim(model: *const CmpaModel, out: *mut usize) -> CmpaStatus {
    nonnull!(model);
    nonnull!(out);
    unsafe { *out = (*model).model.latent_dim() };
    CmpaStatus::Ok
}

/// Required input chunk length of a loaded model.
/// # Safety
/// `model` must be a live handle from [`cmpa_model_load`]; `out` must be valid for writing one usize.
#[no_mangle]
pub unsafe extern "C" fn cmpa_model_input_len(model: *const CmpaModel, out: *mut usize) -> CmpaStatus {
    nonnull!(model);
    nonnull!(out);
    unsafe { *out = (*model).input_len };
    CmpaStatus::Ok
}

/// Run one chunk of normalized pitch values through the model. `values`
/// must hold `cmpa_model_input_len` samples in [0, 1]. `latent_out`, when
/// non-null, receives `cmpa_model_latent_dim` values; `rating_out`, when
/// non-null, receives the predicted rating in (0, 1).
/// # Safety
/// `model` must be a live handle; `values` must hold `n_values` readable f64 values; `latent_out`, when non-null, must be writable for the model's latent dimension; `rating_out`, when non-null, for one f64.
#[no_mangle]
pub unsafe extern "C" fn cmpa_model_forward(
    model: *const CmpaModel,
    values: *const f64,
    n_values: usize,
    latent_out: *mut f64,
    rating_out: *mut f64,
) -> CmpaStatus {
    nonnull!(model);
    nonnull!(values);
    let handle = unsafe { &*model };
    let values = unsafe { std::slice::from_raw_parts(values, n_values) };
    if values.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
        set_error("chunk values must lie in [0, 1]");
        return CmpaStatus::InvalidArgument;
    }
    let chunk = Chunk {
        recording_id: String::new(),
        values: values.to_vec(),
        start_index: 0,
    };
    match handle.model.forward(&chunk) {
        Ok((latent, rating)) => {
            if !latent_out.is_null() {
                unsafe {
                    std::ptr::copy_nonoverlapping(latent.as_ptr(), latent_out, latent.len())
                };
            }
            if !rating_out.is_null() {
                unsafe { *rating_out = rating };
            }
            CmpaStatus::Ok
        }
        Err(e) => fail(e),
    }
}
