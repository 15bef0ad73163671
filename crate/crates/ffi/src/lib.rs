//! C interface to the `tmaxer` library.
//!
//! Objects are opaque handles created by `tmx_*_new`/`tmx_*_load`/
//! `tmx_*_read` and released with the matching `tmx_*_free`. Every fallible
//! call returns a `TmxStatus`; on failure `tmx_last_error_message` describes
//! the most recent error on the calling thread. Panics never cross the
//! boundary and are reported as `TMX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tmaxer::eval::{infer_video, tiou, DecodeConfig, InferConfig, NmsConfig, NmsMode, ScoredSegment};
use tmaxer::io::{read_checkpoint, read_feature_file, write_checkpoint, write_feature_file, Checkpoint};
use tmaxer::model::{count_macs, init_params, ModelConfig, ModelParams, TcmVariant};
use tmaxer::numerics::SeqTensor;
use tmaxer::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NonFinite = 3,
    Format = 4,
    Schema = 5,
    Io = 6,
    Config = 7,
    Diverged = 8,
    OutOfRange = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(TmxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => TmxStatus::InvalidArgument,
            Error::NonFinite(_) => TmxStatus::NonFinite,
            Error::Format { .. } => TmxStatus::Format,
            Error::Schema { .. } => TmxStatus::Schema,
            Error::Diverged { .. } => TmxStatus::Diverged,
            Error::Config(_) => TmxStatus::Config,
            Error::Io { .. } => TmxStatus::Io,
        };
        let mut msg = e.to_string();
        if let Error::Io { source, .. } = &e {
            msg = format!("{msg}: {source}");
        }
        Failure(status, msg)
    }
}

fn null(what: &str) -> Failure {
    Failure(TmxStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TmxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TmxStatus::Ok
        }
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
            set_error(format!("panic: {msg}"));
            TmxStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(TmxStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next `tmx_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tmx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tmx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// TCM variant codes.
pub const TMX_TCM_MAXPOOL: u32 = 0;
pub const TMX_TCM_AVGPOOL: u32 = 1;
pub const TMX_TCM_SUBSAMPLE: u32 = 2;
pub const TMX_TCM_CONV: u32 = 3;
pub const TMX_TCM_ATTENTION: u32 = 4;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TmxModelConfig {
    pub input_dim: u32,
    pub embed_dim: u32,
    pub num_levels: u32,
    /// One of the `TMX_TCM_*` codes.
    pub tcm_variant: u32,
    pub tcm_kernel: u32,
    pub num_classes: u32,
    pub head_kernel: u32,
}

impl From<&ModelConfig> for TmxModelConfig {
    fn from(c: &ModelConfig) -> Self {
        TmxModelConfig {
            input_dim: c.input_dim as u32,
            embed_dim: c.embed_dim as u32,
            num_levels: c.num_levels as u32,
            tcm_variant: c.tcm_variant.code(),
            tcm_kernel: c.tcm_kernel as u32,
            num_classes: c.num_classes as u32,
            head_kernel: c.head_kernel as u32,
        }
    }
}

fn model_config(c: &TmxModelConfig) -> Result<ModelConfig, Failure> {
    let variant = TcmVariant::from_code(c.tcm_variant).ok_or_else(|| {
        Failure(
            TmxStatus::InvalidArgument,
            format!("unknown TCM variant code {}", c.tcm_variant),
        )
    })?;
    let cfg = ModelConfig {
        input_dim: c.input_dim as usize,
        embed_dim: c.embed_dim as usize,
        num_levels: c.num_levels as usize,
        tcm_variant: variant,
        tcm_kernel: c.tcm_kernel as usize,
        num_classes: c.num_classes as usize,
        head_kernel: c.head_kernel as usize,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the default model configuration to `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `TmxModelConfig`.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_config_default(out: *mut TmxModelConfig) -> TmxStatus {
    guard(|| {
        *out_arg(out, "out")? = TmxModelConfig::from(&ModelConfig::default());
        Ok(())
    })
}

/// Opaque model: configuration plus weights.
pub struct TmxModel {
    config: ModelConfig,
    params: ModelParams,
}

fn into_handle<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

/// Freshly initialized model.
///
/// # Safety
/// `config` must be null or valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_new(config: *const TmxModelConfig, seed: u64, out: *mut *mut TmxModel) -> TmxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = model_config(ref_arg(config, "config")?)?;
        let params = init_params(&config, seed);
        into_handle(TmxModel { config, params }, out);
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_load(path: *const c_char, out: *mut *mut TmxModel) -> TmxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ckpt = read_checkpoint(path_arg(path)?)?;
        into_handle(
            TmxModel {
                config: ckpt.config,
                params: ckpt.params,
            },
            out,
        );
        Ok(())
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must be null or a live handle; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_save(model: *const TmxModel, path: *const c_char) -> TmxStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let ckpt = Checkpoint {
            config: model.config.clone(),
            params: model.params.clone(),
        };
        write_checkpoint(path_arg(path)?, &ckpt)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_config(model: *const TmxModel, out: *mut TmxModelConfig) -> TmxStatus {
    guard(|| {
        *out_arg(out, "out")? = TmxModelConfig::from(&ref_arg(model, "model")?.config);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_count_params(model: *const TmxModel, out: *mut u64) -> TmxStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.params.count() as u64;
        Ok(())
    })
}

/// Multiply-accumulates of one forward pass over `length` clips.
///
/// # Safety
/// `model` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_count_macs(model: *const TmxModel, length: u64, out: *mut u64) -> TmxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = ref_arg(model, "model")?;
        *out = count_macs(&model.config, length as usize)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tmx_model_free(model: *mut TmxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Opaque `T x D` clip-feature sequence.
pub struct TmxFeatures(SeqTensor);

/// Copies `rows * cols` time-major values.
///
/// # Safety
/// `data` must be null or point to `rows * cols` readable doubles; `out`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_features_new(
    data: *const f64,
    rows: u64,
    cols: u64,
    out: *mut *mut TmxFeatures,
) -> TmxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = (rows as usize)
            .checked_mul(cols as usize)
            .ok_or_else(|| Failure(TmxStatus::InvalidArgument, format!("shape {rows}x{cols} overflows")))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let seq = SeqTensor::from_vec(rows as usize, cols as usize, values)?;
        if !seq.is_finite() {
            return Err(Error::NonFinite("feature data".into()).into());
        }
        into_handle(TmxFeatures(seq), out);
        Ok(())
    })
}

/// # Safety
/// `path` must be null or NUL-terminated; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_features_read(path: *const c_char, out: *mut *mut TmxFeatures) -> TmxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        into_handle(TmxFeatures(read_feature_file(path_arg(path)?)?), out);
        Ok(())
    })
}

/// # Safety
/// `features` must be null or a live handle; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tmx_features_write(features: *const TmxFeatures, path: *const c_char) -> TmxStatus {
    guard(|| {
        write_feature_file(path_arg(path)?, &ref_arg(features, "features")?.0)?;
        Ok(())
    })
}

/// # Safety
/// `features` must be null or a live handle; `rows`/`cols` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_features_shape(features: *const TmxFeatures, rows: *mut u64, cols: *mut u64) -> TmxStatus {
    guard(|| {
        let (r, c) = ref_arg(features, "features")?.0.shape();
        *out_arg(rows, "rows")? = r as u64;
        *out_arg(cols, "cols")? = c as u64;
        Ok(())
    })
}

/// # Safety
/// `features` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tmx_features_free(features: *mut TmxFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Decoding and suppression knobs of `tmx_infer`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TmxInferOptions {
    pub score_threshold: f64,
    pub pre_nms_topk: u32,
    /// Non-zero clips segments to the video extent.
    pub clip_to_video: u8,
    /// Non-zero selects hard NMS instead of Gaussian Soft-NMS.
    pub hard_nms: u8,
    pub sigma: f64,
    pub min_score: f64,
    pub iou_threshold: f64,
    pub max_segments: u32,
}

impl From<&InferConfig> for TmxInferOptions {
    fn from(c: &InferConfig) -> Self {
        TmxInferOptions {
            score_threshold: c.decode.score_threshold,
            pre_nms_topk: c.decode.pre_nms_topk as u32,
            clip_to_video: c.decode.clip_to_video as u8,
            hard_nms: (c.nms.mode == NmsMode::Hard) as u8,
            sigma: c.nms.sigma,
            min_score: c.nms.min_score,
            iou_threshold: c.nms.iou_threshold,
            max_segments: c.nms.max_segments as u32,
        }
    }
}

impl From<&TmxInferOptions> for InferConfig {
    fn from(o: &TmxInferOptions) -> Self {
        InferConfig {
            decode: DecodeConfig {
                score_threshold: o.score_threshold,
                pre_nms_topk: o.pre_nms_topk as usize,
                clip_to_video: o.clip_to_video != 0,
            },
            nms: NmsConfig {
                mode: if o.hard_nms != 0 { NmsMode::Hard } else { NmsMode::Soft },
                sigma: o.sigma,
                min_score: o.min_score,
                iou_threshold: o.iou_threshold,
                max_segments: o.max_segments as usize,
            },
        }
    }
}

/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_infer_options_default(out: *mut TmxInferOptions) -> TmxStatus {
    guard(|| {
        *out_arg(out, "out")? = TmxInferOptions::from(&InferConfig::default());
        Ok(())
    })
}

/// Opaque list of scored segments, best first.
pub struct TmxSegments(Vec<ScoredSegment>);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TmxSegment {
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub label: u32,
}

/// Runs the model on one video. `options` may be null for defaults.
///
/// # Safety
/// `model` and `features` must be null or live handles; `options` null or
/// valid; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_infer(
    model: *const TmxModel,
    features: *const TmxFeatures,
    options: *const TmxInferOptions,
    out: *mut *mut TmxSegments,
) -> TmxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = ref_arg(model, "model")?;
        let features = ref_arg(features, "features")?;
        let config = options.as_ref().map_or_else(InferConfig::default, InferConfig::from);
        let segs = infer_video(&features.0, "", &model.params, &model.config, &config)?;
        into_handle(TmxSegments(segs), out);
        Ok(())
    })
}

/// # Safety
/// `segments` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_segments_len(segments: *const TmxSegments, out: *mut u64) -> TmxStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(segments, "segments")?.0.len() as u64;
        Ok(())
    })
}

/// # Safety
/// `segments` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tmx_segments_get(segments: *const TmxSegments, index: u64, out: *mut TmxSegment) -> TmxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let list = &ref_arg(segments, "segments")?.0;
        let s = list.get(index as usize).ok_or_else(|| {
            Failure(
                TmxStatus::OutOfRange,
                format!("segment index {index} out of range for {} segments", list.len()),
            )
        })?;
        *out = TmxSegment {
            start: s.start,
            end: s.end,
            score: s.score,
            label: s.label as u32,
        };
        Ok(())
    })
}

/// # Safety
/// `segments` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tmx_segments_free(segments: *mut TmxSegments) {
    if !segments.is_null() {
        drop(Box::from_raw(segments));
    }
}

/// Temporal IoU of `[a_start, a_end]` and `[b_start, b_end]`.
#[no_mangle]
pub extern "C" fn tmx_tiou(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> f64 {
    tiou([a_start, a_end], [b_start, b_end])
}
