//! C ABI over the segrl library.
//!
//! Conventions:
//! - Fallible functions return an `int32_t` status, `SEGRL_OK` on success.
//!   On failure `segrl_last_error()` describes the error for the calling
//!   thread until its next call into the library.
//! - Objects are opaque handles created by `*_new`, `*_load`, `*_from_json`
//!   or `*_generate` and released with the matching `*_free`. Free functions
//!   accept NULL.
//! - Strings returned through out-parameters are NUL-terminated UTF-8 owned
//!   by the caller and released with `segrl_string_free`.
//! - Masks cross the boundary as `width * height` bytes, row-major, nonzero
//!   meaning foreground.
//! - Pointers must be valid for the access the function documents; input
//!   strings must be NUL-terminated UTF-8.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use segrl::env::{detokenize, feature_bucket, greedy_decode, ReferringTask};
use segrl::grpo::{self, GrpoError};
use segrl::mask::{self, BitMask, MaskError, RleMask};
use segrl::provider::OracleProvider;
use segrl::reward::{self, RewardConfig, RewardError};
use segrl::train::{self, Checkpoint, Split, TrainConfig, TrainError, Trainer};

pub const SEGRL_OK: i32 = 0;
pub const SEGRL_ERR_NULL_POINTER: i32 = 1;
pub const SEGRL_ERR_INVALID_ARGUMENT: i32 = 2;
pub const SEGRL_ERR_PARSE: i32 = 3;
pub const SEGRL_ERR_IO: i32 = 4;
pub const SEGRL_ERR_PROVIDER: i32 = 5;
pub const SEGRL_ERR_NUMERIC: i32 = 6;
pub const SEGRL_ERR_CONFIG: i32 = 7;
pub const SEGRL_ERR_BUFFER_TOO_SMALL: i32 = 8;
pub const SEGRL_ERR_PANIC: i32 = 99;

/// Reward settings.
pub struct SegrlRewardConfig(RewardConfig);
/// A referring-segmentation task.
pub struct SegrlTask(ReferringTask);
/// A saved training state.
pub struct SegrlCheckpoint(Checkpoint);
/// A training run in progress.
pub struct SegrlTrainer(Trainer);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct FfiError {
    code: i32,
    message: String,
}

type FfiResult<T> = Result<T, FfiError>;

fn err(code: i32, message: impl Into<String>) -> FfiError {
    FfiError {
        code,
        message: message.into(),
    }
}

impl From<MaskError> for FfiError {
    fn from(e: MaskError) -> Self {
        err(SEGRL_ERR_INVALID_ARGUMENT, e.to_string())
    }
}

impl From<GrpoError> for FfiError {
    fn from(e: GrpoError) -> Self {
        let code = match e {
            GrpoError::Numeric(_) => SEGRL_ERR_NUMERIC,
            _ => SEGRL_ERR_INVALID_ARGUMENT,
        };
        err(code, e.to_string())
    }
}

impl From<RewardError> for FfiError {
    fn from(e: RewardError) -> Self {
        let code = match e {
            RewardError::Domain(_) => SEGRL_ERR_INVALID_ARGUMENT,
            RewardError::Config(_) => SEGRL_ERR_CONFIG,
            RewardError::Provider { .. } | RewardError::Mask { .. } => SEGRL_ERR_PROVIDER,
        };
        err(code, e.to_string())
    }
}

impl From<TrainError> for FfiError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Config(_) => SEGRL_ERR_CONFIG,
            TrainError::Io { .. } | TrainError::Manifest { .. } => SEGRL_ERR_IO,
            TrainError::Provider(_) => SEGRL_ERR_PROVIDER,
            TrainError::Numeric(_) => SEGRL_ERR_NUMERIC,
        };
        err(code, e.to_string())
    }
}

impl From<serde_json::Error> for FfiError {
    fn from(e: serde_json::Error) -> Self {
        err(SEGRL_ERR_PARSE, e.to_string())
    }
}

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("no interior NUL"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            SEGRL_OK
        }
        Ok(Err(e)) => {
            set_last_error(Some(e.message));
            e.code
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            SEGRL_ERR_PANIC
        }
    }
}

unsafe fn input_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(err(SEGRL_ERR_NULL_POINTER, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| err(SEGRL_ERR_PARSE, format!("{what} is not valid UTF-8")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| err(SEGRL_ERR_NULL_POINTER, format!("{what} is NULL")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| err(SEGRL_ERR_NULL_POINTER, format!("{what} is NULL")))
}

unsafe fn input_slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(err(SEGRL_ERR_NULL_POINTER, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output_slice<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(err(SEGRL_ERR_NULL_POINTER, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior NUL").into_raw()
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    *out_ref(out, "output string pointer")? = owned_string(s);
    Ok(())
}

unsafe fn mask_arg(p: *const u8, width: u32, height: u32, what: &str) -> FfiResult<BitMask> {
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| err(SEGRL_ERR_INVALID_ARGUMENT, "mask size overflows"))?;
    let bytes = input_slice(p, n, what)?;
    Ok(BitMask::from_fn(width, height, |x, y| {
        bytes[y as usize * width as usize + x as usize] != 0
    })?)
}

fn new_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn segrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the calling thread's last failed call, or NULL. Valid until
/// the thread's next call into the library.
#[no_mangle]
pub extern "C" fn segrl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn segrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// IoU of two `width * height` masks; 1 when both are empty.
#[no_mangle]
pub unsafe extern "C" fn segrl_iou(a: *const u8, b: *const u8, width: u32, height: u32, out_iou: *mut f64) -> i32 {
    guard(|| {
        let a = mask_arg(a, width, height, "a")?;
        let b = mask_arg(b, width, height, "b")?;
        *out_ref(out_iou, "out_iou")? = mask::iou(&a, &b)?;
        Ok(())
    })
}

/// Run-length encodes a mask as `{"size":[h,w],"counts":[...]}`.
#[no_mangle]
pub unsafe extern "C" fn segrl_rle_encode(mask: *const u8, width: u32, height: u32, out_json: *mut *mut c_char) -> i32 {
    guard(|| {
        let m = mask_arg(mask, width, height, "mask")?;
        put_string(out_json, serde_json::to_string(&mask::encode_rle(&m))?)
    })
}

/// Decodes RLE JSON into `out_mask` (capacity in bytes). The dimensions are
/// written even when the buffer is too small.
#[no_mangle]
pub unsafe extern "C" fn segrl_rle_decode(
    json: *const c_char,
    out_mask: *mut u8,
    capacity: usize,
    out_width: *mut u32,
    out_height: *mut u32,
) -> i32 {
    guard(|| {
        let rle: RleMask = serde_json::from_str(input_str(json, "json")?)?;
        let m = mask::decode_rle(&rle)?;
        *out_ref(out_width, "out_width")? = m.width();
        *out_ref(out_height, "out_height")? = m.height();
        let n = m.len();
        if capacity < n {
            return Err(err(
                SEGRL_ERR_BUFFER_TOO_SMALL,
                format!("mask needs {n} bytes, buffer holds {capacity}"),
            ));
        }
        let out = output_slice(out_mask, n, "out_mask")?;
        for (dst, bit) in out.iter_mut().zip(m.to_bools()) {
            *dst = u8::from(bit);
        }
        Ok(())
    })
}

/// Group-normalized advantages of `n` rewards into `out_advantages[n]`.
#[no_mangle]
pub unsafe extern "C" fn segrl_compute_advantages(
    rewards: *const f64,
    n: usize,
    std_floor: f64,
    out_advantages: *mut f64,
) -> i32 {
    guard(|| {
        let adv = grpo::compute_advantages(input_slice(rewards, n, "rewards")?, std_floor)?;
        output_slice(out_advantages, n, "out_advantages")?.copy_from_slice(&adv);
        Ok(())
    })
}

/// Per-token KL estimate `u - ln u - 1`, `u = exp(logp_ref - logp_theta)`.
#[no_mangle]
pub unsafe extern "C" fn segrl_kl_term(logp_theta: f64, logp_ref: f64, out_value: *mut f64) -> i32 {
    guard(|| {
        *out_ref(out_value, "out_value")? = grpo::kl_term(logp_theta, logp_ref)?;
        Ok(())
    })
}

/// Clipped surrogate of one token; `out_clipped` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn segrl_surrogate_token(
    ratio: f64,
    advantage: f64,
    eps_low: f64,
    eps_high: f64,
    out_value: *mut f64,
    out_clipped: *mut bool,
) -> i32 {
    guard(|| {
        if !(ratio >= 0.0 && ratio.is_finite() && advantage.is_finite()) {
            return Err(err(
                SEGRL_ERR_INVALID_ARGUMENT,
                "ratio and advantage must be finite, ratio >= 0",
            ));
        }
        let (v, clipped) = grpo::surrogate_token(ratio, advantage, eps_low, eps_high);
        *out_ref(out_value, "out_value")? = v;
        if let Some(c) = out_clipped.as_mut() {
            *c = clipped;
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn segrl_reward_config_default() -> *mut SegrlRewardConfig {
    new_handle(SegrlRewardConfig(RewardConfig::default()))
}

/// Parses a reward config; omitted fields take their defaults.
#[no_mangle]
pub unsafe extern "C" fn segrl_reward_config_from_json(
    json: *const c_char,
    out_config: *mut *mut SegrlRewardConfig,
) -> i32 {
    guard(|| {
        let cfg: RewardConfig = serde_json::from_str(input_str(json, "json")?)?;
        cfg.validate()?;
        *out_ref(out_config, "out_config")? = new_handle(SegrlRewardConfig(cfg));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_reward_config_free(config: *mut SegrlRewardConfig) {
    free_handle(config);
}

unsafe fn reward_cfg(config: *const SegrlRewardConfig, default: &RewardConfig) -> &RewardConfig {
    match config.as_ref() {
        Some(c) => &c.0,
        None => default,
    }
}

/// Accuracy score for an IoU; `config` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn segrl_tiered_accuracy_reward(
    iou: f64,
    config: *const SegrlRewardConfig,
    out_score: *mut i64,
) -> i32 {
    guard(|| {
        let default = RewardConfig::default();
        *out_ref(out_score, "out_score")? = reward::tiered_accuracy_reward(iou, reward_cfg(config, &default))?;
        Ok(())
    })
}

/// Parses and validates a task JSON document.
#[no_mangle]
pub unsafe extern "C" fn segrl_task_from_json(json: *const c_char, out_task: *mut *mut SegrlTask) -> i32 {
    guard(|| {
        let task: ReferringTask = serde_json::from_str(input_str(json, "json")?)?;
        task.validate()
            .map_err(|e| err(SEGRL_ERR_INVALID_ARGUMENT, e.to_string()))?;
        *out_ref(out_task, "out_task")? = new_handle(SegrlTask(task));
        Ok(())
    })
}

/// Task `index` of the dataset generated from `seed` with default scenes.
#[no_mangle]
pub unsafe extern "C" fn segrl_task_generate(seed: u64, index: usize, out_task: *mut *mut SegrlTask) -> i32 {
    guard(|| {
        let task = train::dataset::generate_task(seed, index, &Default::default())?;
        *out_ref(out_task, "out_task")? = new_handle(SegrlTask(task));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_task_to_json(task: *const SegrlTask, out_json: *mut *mut c_char) -> i32 {
    guard(|| {
        let t = handle(task, "task")?;
        put_string(out_json, serde_json::to_string(&t.0)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_task_free(task: *mut SegrlTask) {
    free_handle(task);
}

/// Scores a response against a task with the oracle segmenter; writes the
/// reward breakdown as JSON. `config` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn segrl_total_reward(
    response: *const c_char,
    task: *const SegrlTask,
    config: *const SegrlRewardConfig,
    out_json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let text = input_str(response, "response")?;
        let t = handle(task, "task")?;
        let default = RewardConfig::default();
        let b = reward::total_reward(text, &t.0, &OracleProvider::new(), reward_cfg(config, &default))?;
        put_string(out_json, serde_json::to_string(&b)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_checkpoint_load(path: *const c_char, out_checkpoint: *mut *mut SegrlCheckpoint) -> i32 {
    guard(|| {
        let c = Checkpoint::load(Path::new(input_str(path, "path")?))?;
        *out_ref(out_checkpoint, "out_checkpoint")? = new_handle(SegrlCheckpoint(c));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_checkpoint_free(checkpoint: *mut SegrlCheckpoint) {
    free_handle(checkpoint);
}

/// Greedy response text of the checkpoint's policy for a task.
#[no_mangle]
pub unsafe extern "C" fn segrl_checkpoint_greedy_response(
    checkpoint: *const SegrlCheckpoint,
    task: *const SegrlTask,
    out_text: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let c = &handle(checkpoint, "checkpoint")?.0;
        let t = &handle(task, "task")?.0;
        let pcfg = &c.config.policy;
        let tokens = greedy_decode(
            &c.policy,
            feature_bucket(t, c.policy.num_buckets),
            pcfg.vocab.end(),
            pcfg.max_len,
        );
        put_string(
            out_text,
            detokenize(&tokens, t.scene.width, t.scene.height, &pcfg.vocab, &pcfg.flag),
        )
    })
}

/// Evaluation report JSON for one split (`"train"` or `"eval"`) of a
/// dataset directory.
#[no_mangle]
pub unsafe extern "C" fn segrl_checkpoint_evaluate(
    checkpoint: *const SegrlCheckpoint,
    dataset_dir: *const c_char,
    split: *const c_char,
    out_json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let c = &handle(checkpoint, "checkpoint")?.0;
        let dir = Path::new(input_str(dataset_dir, "dataset_dir")?);
        let split: Split = input_str(split, "split")?.parse()?;
        let report = train::evaluate_checkpoint(c, dir, split)?;
        put_string(out_json, serde_json::to_string(&report)?)
    })
}

/// Starts a run from a JSON training config; omitted fields take defaults.
#[no_mangle]
pub unsafe extern "C" fn segrl_trainer_new(config_json: *const c_char, out_trainer: *mut *mut SegrlTrainer) -> i32 {
    guard(|| {
        let cfg: TrainConfig = serde_json::from_str(input_str(config_json, "config_json")?)
            .map_err(|e| err(SEGRL_ERR_CONFIG, e.to_string()))?;
        let t = Trainer::new(cfg)?;
        *out_ref(out_trainer, "out_trainer")? = new_handle(SegrlTrainer(t));
        Ok(())
    })
}

/// Resumes a run from a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn segrl_trainer_from_checkpoint(
    path: *const c_char,
    out_trainer: *mut *mut SegrlTrainer,
) -> i32 {
    guard(|| {
        let c = Checkpoint::load(Path::new(input_str(path, "path")?))?;
        *out_ref(out_trainer, "out_trainer")? = new_handle(SegrlTrainer(Trainer::from_checkpoint(c)?));
        Ok(())
    })
}

/// One training iteration; writes its metrics JSON if `out_metrics_json`
/// is not NULL.
#[no_mangle]
pub unsafe extern "C" fn segrl_trainer_step(trainer: *mut SegrlTrainer, out_metrics_json: *mut *mut c_char) -> i32 {
    guard(|| {
        let t = out_ref(trainer, "trainer")?;
        let m = t.0.step()?;
        if !out_metrics_json.is_null() {
            put_string(out_metrics_json, serde_json::to_string(&m)?)?;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_trainer_is_done(trainer: *const SegrlTrainer, out_done: *mut bool) -> i32 {
    guard(|| {
        *out_ref(out_done, "out_done")? = handle(trainer, "trainer")?.0.is_done();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_trainer_save_checkpoint(trainer: *const SegrlTrainer, path: *const c_char) -> i32 {
    guard(|| {
        let t = handle(trainer, "trainer")?;
        t.0.checkpoint().save(Path::new(input_str(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn segrl_trainer_free(trainer: *mut SegrlTrainer) {
    free_handle(trainer);
}
