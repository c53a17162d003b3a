//! C interface to `fsr-core`.
//!
//! Every fallible function returns an [`FsrStatus`]. On failure a description
//! is kept per thread and can be read with [`fsr_last_error_message`]. Panics
//! never cross the boundary; they are reported as `FSR_STATUS_PANIC`.
//!
//! Handles returned through `out` parameters are owned by the caller and must
//! be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fsr_core::checkpoint::Checkpoint;
use fsr_core::data::Dataset;
use fsr_core::decoder::{decode, DecodeMode, SkipConfig};
use fsr_core::lattice::{sequence_logprob, Lattice, NodeProbs};
use fsr_core::losses::ctc_forward;
use fsr_core::model::TinyTransducer;
use fsr_core::tensor::Matrix;
use fsr_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The output buffer was too small; the required size was still reported.
    BufferTooSmall = 3,
    Shape = 4,
    Config = 5,
    /// No alignment of the targets fits in the frames.
    Infeasible = 6,
    Format = 7,
    Corrupt = 8,
    Io = 9,
    Panic = 10,
    Other = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsrDecodeMode {
    Greedy = 0,
    FastSkip = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsrSkipConfig {
    pub delta: f64,
    pub w_left: usize,
    pub w_right: usize,
    pub max_symbols_per_frame: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FsrModelInfo {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    pub context: usize,
    pub subsample: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FsrDecodeStats {
    /// Number of emitted tokens, even when the token buffer was too small.
    pub num_tokens: usize,
    pub encoded_frames: usize,
    pub triggered_frames: usize,
    pub joint_calls: u64,
    pub pred_calls: u64,
    pub wall_nanos: u64,
}

/// Borrowed view of one utterance; valid while the dataset handle lives.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FsrUtterance {
    pub id: *const c_char,
    /// `frames × feat_dim`, row-major.
    pub features: *const f64,
    pub frames: usize,
    pub feat_dim: usize,
    pub targets: *const usize,
    pub target_len: usize,
}

pub struct FsrModel {
    model: TinyTransducer,
}

pub struct FsrDataset {
    data: Dataset,
    ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(FsrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Shape(_) | Error::Index(_) => FsrStatus::Shape,
            Error::Config(_) | Error::Empty(_) | Error::TooLarge(_) => FsrStatus::Config,
            Error::Infeasible { .. } => FsrStatus::Infeasible,
            Error::Format(_) => FsrStatus::Format,
            Error::Corrupt(_) => FsrStatus::Corrupt,
            Error::Io(_) => FsrStatus::Io,
            _ => FsrStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: FsrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<FsrStatus, Failure>) -> FsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            FsrStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FsrStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(fail(FsrStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(FsrStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(Path::new(s))
}

fn checked_len(a: usize, b: usize, name: &str) -> Result<usize, Failure> {
    a.checked_mul(b)
        .ok_or_else(|| fail(FsrStatus::InvalidArgument, format!("{name} size overflows")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn fsr_skip_config_default() -> FsrSkipConfig {
    let d = SkipConfig::default();
    FsrSkipConfig {
        delta: d.delta,
        w_left: d.w_left,
        w_right: d.w_right,
        max_symbols_per_frame: d.max_symbols_per_frame,
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsr_model_load(path: *const c_char, out: *mut *mut FsrModel) -> FsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FsrStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let ckpt = Checkpoint::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FsrModel { model: ckpt.model }));
        Ok(FsrStatus::Ok)
    })
}

/// # Safety
/// `model` must come from [`fsr_model_load`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fsr_model_free(model: *mut FsrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsr_model_info(model: *const FsrModel, out: *mut FsrModelInfo) -> FsrStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return Err(fail(FsrStatus::NullPointer, "model or out is null"));
        };
        let c = m.model.config;
        *out = FsrModelInfo {
            vocab_size: c.vocab_size,
            feat_dim: c.feat_dim,
            hidden: c.hidden,
            context: c.context,
            subsample: c.subsample,
        };
        Ok(FsrStatus::Ok)
    })
}

/// Decode one utterance. Token ids (1-based, blank excluded) are written to
/// `tokens` up to `capacity`; `stats` always receives the full count. Pass
/// null `skip` for the default skip configuration.
///
/// # Safety
/// `features` must hold `frames * feat_dim` doubles, `tokens` must hold
/// `capacity` values (may be null when `capacity` is 0), and `stats` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fsr_decode(
    model: *const FsrModel,
    features: *const f64,
    frames: usize,
    feat_dim: usize,
    mode: FsrDecodeMode,
    skip: *const FsrSkipConfig,
    tokens: *mut u32,
    capacity: usize,
    stats: *mut FsrDecodeStats,
) -> FsrStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return Err(fail(FsrStatus::NullPointer, "model is null"));
        };
        if stats.is_null() {
            return Err(fail(FsrStatus::NullPointer, "stats is null"));
        }
        let skip = skip.as_ref().copied().unwrap_or_else(|| fsr_skip_config_default());
        let cfg = SkipConfig {
            delta: skip.delta,
            w_left: skip.w_left,
            w_right: skip.w_right,
            max_symbols_per_frame: skip.max_symbols_per_frame,
        };
        cfg.validate()?;
        let data = slice(features, checked_len(frames, feat_dim, "features")?, "features")?;
        let feats = Matrix::from_vec(frames, feat_dim, data.to_vec())?;
        let encoded = m.model.encode(&feats)?;
        let mode = match mode {
            FsrDecodeMode::Greedy => DecodeMode::Greedy,
            FsrDecodeMode::FastSkip => DecodeMode::FastSkip,
        };
        let trace = decode(&m.model, &encoded, mode, &cfg);
        *stats = FsrDecodeStats {
            num_tokens: trace.tokens.len(),
            encoded_frames: trace.triggered.len(),
            triggered_frames: trace.triggered_count(),
            joint_calls: trace.joint_calls,
            pred_calls: trace.pred_calls,
            wall_nanos: trace.wall_nanos,
        };
        if trace.tokens.len() > capacity {
            return Err(fail(
                FsrStatus::BufferTooSmall,
                format!("{} tokens do not fit in {capacity}", trace.tokens.len()),
            ));
        }
        if !trace.tokens.is_empty() {
            if tokens.is_null() {
                return Err(fail(FsrStatus::NullPointer, "tokens is null"));
            }
            for (i, e) in trace.tokens.iter().enumerate() {
                *tokens.add(i) = e.token as u32;
            }
        }
        Ok(FsrStatus::Ok)
    })
}

/// `ln P(y|x)` of a transducer lattice. `blank_lp` is `frames × (target_len + 1)`
/// and `label_lp` is `frames × target_len`, both row-major by frame, where
/// `label_lp[t][u]` is the log-probability of emitting target `u + 1` at node `(t, u)`.
///
/// # Safety
/// The arrays must hold the stated number of doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsr_transducer_logprob(
    blank_lp: *const f64,
    label_lp: *const f64,
    frames: usize,
    target_len: usize,
    out: *mut f64,
) -> FsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FsrStatus::NullPointer, "out is null"));
        }
        let nb = checked_len(frames, target_len + 1, "blank_lp")?;
        let nl = checked_len(frames, target_len, "label_lp")?;
        let blank = slice(blank_lp, nb, "blank_lp")?.to_vec();
        let label = slice(label_lp, nl, "label_lp")?.to_vec();
        let lattice = Lattice::new(NodeProbs::new(frames, target_len, blank, label)?)?;
        *out = sequence_logprob(&lattice);
        Ok(FsrStatus::Ok)
    })
}

/// `ln P_CTC(y|x)` from per-frame log-softmax rows (`frames × num_classes`,
/// blank at class 0) and target ids in `1..num_classes`.
///
/// # Safety
/// `frame_logprobs` must hold `frames * num_classes` doubles, `targets` must
/// hold `target_len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsr_ctc_logprob(
    frame_logprobs: *const f64,
    frames: usize,
    num_classes: usize,
    targets: *const u32,
    target_len: usize,
    out: *mut f64,
) -> FsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FsrStatus::NullPointer, "out is null"));
        }
        let lp = slice(frame_logprobs, checked_len(frames, num_classes, "frame_logprobs")?, "frame_logprobs")?;
        let y: Vec<usize> = slice(targets, target_len, "targets")?.iter().map(|&k| k as usize).collect();
        let m = Matrix::from_vec(frames, num_classes, lp.to_vec())?;
        *out = ctc_forward(&m, &y)?;
        Ok(FsrStatus::Ok)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fsr_dataset_load(path: *const c_char, out: *mut *mut FsrDataset) -> FsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(FsrStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let data = Dataset::load(path_arg(path)?)?;
        let ids = data
            .utterances
            .iter()
            .map(|u| CString::new(u.id.clone()).map_err(|_| fail(FsrStatus::Format, "utterance id contains NUL")))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(FsrDataset { data, ids }));
        Ok(FsrStatus::Ok)
    })
}

/// # Safety
/// `dataset` must come from [`fsr_dataset_load`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fsr_dataset_free(dataset: *mut FsrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of utterances; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsr_dataset_len(dataset: *const FsrDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.len())
}

/// # Safety
/// `dataset` must be a live handle and `vocab_size`, `feat_dim` writable.
#[no_mangle]
pub unsafe extern "C" fn fsr_dataset_dims(
    dataset: *const FsrDataset,
    vocab_size: *mut usize,
    feat_dim: *mut usize,
) -> FsrStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else {
            return Err(fail(FsrStatus::NullPointer, "dataset is null"));
        };
        if vocab_size.is_null() || feat_dim.is_null() {
            return Err(fail(FsrStatus::NullPointer, "output pointer is null"));
        }
        *vocab_size = d.data.vocab_size;
        *feat_dim = d.data.feat_dim;
        Ok(FsrStatus::Ok)
    })
}

/// # Safety
/// `dataset` must be a live handle and `out` writable. The view borrows from
/// the handle.
#[no_mangle]
pub unsafe extern "C" fn fsr_dataset_utterance(
    dataset: *const FsrDataset,
    index: usize,
    out: *mut FsrUtterance,
) -> FsrStatus {
    guard(|| {
        let Some(d) = dataset.as_ref() else {
            return Err(fail(FsrStatus::NullPointer, "dataset is null"));
        };
        if out.is_null() {
            return Err(fail(FsrStatus::NullPointer, "out is null"));
        }
        let Some(u) = d.data.utterances.get(index) else {
            return Err(fail(
                FsrStatus::InvalidArgument,
                format!("index {index} out of range for {} utterances", d.data.len()),
            ));
        };
        *out = FsrUtterance {
            id: d.ids[index].as_ptr(),
            features: u.features.as_slice().as_ptr(),
            frames: u.features.rows(),
            feat_dim: u.features.cols(),
            targets: u.targets.as_ptr(),
            target_len: u.targets.len(),
        };
        Ok(FsrStatus::Ok)
    })
}
