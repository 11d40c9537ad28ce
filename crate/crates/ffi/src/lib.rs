//! C ABI over the `felix` crate.
//!
//! Every fallible function returns a [`FelixStatus`]. On failure the
//! message is available from [`felix_last_error`] on the same thread until
//! the next call. Strings returned through out-parameters are owned by the
//! caller and must be released with [`felix_string_free`]; pipelines with
//! [`felix_pipeline_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use felix::cli::{INSERTION_CHECKPOINT, TAGGER_CHECKPOINT};
use felix::config::RunConfig;
use felix::corpus::AlignedRecord;
use felix::metrics::{self, SariVariant};
use felix::models::checkpoint::Checkpoint;
use felix::models::FelixModels;
use felix::text::{detokenize, tokenize, TokenSeq};
use felix::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FelixStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration text or setting.
    Config = 3,
    /// Malformed or inconsistent data, including checkpoints.
    Data = 4,
    /// A file could not be read or written.
    Io = 5,
    /// Input violates a model limit or contains a reserved token.
    InvalidInput = 6,
    /// The pair cannot be expressed under the configured constraints.
    Unalignable = 7,
    /// A computation produced NaN or infinity.
    NonFinite = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

/// Sentence-level SARI and its components, as percentages.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FelixSari {
    pub sari: f64,
    pub add: f64,
    pub keep: f64,
    pub del: f64,
}

/// Sentence TER (percentage) and its edit counts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FelixTer {
    pub ter: f64,
    pub ins: usize,
    pub del: usize,
    pub sub: usize,
    pub shift: usize,
}

/// Trained tagger and insertion model.
pub struct FelixPipeline {
    models: FelixModels,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> FelixStatus {
    match err {
        Error::Config(_) => FelixStatus::Config,
        Error::Io { .. } => FelixStatus::Io,
        Error::NonFinite(_) => FelixStatus::NonFinite,
        Error::TooLong { .. } | Error::Sentinel(_) => FelixStatus::InvalidInput,
        _ => FelixStatus::Data,
    }
}

struct Failure(FelixStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic for `felix_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FelixStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FelixStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            FelixStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(FelixStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(FelixStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

fn out_arg<T>(ptr: *mut T, name: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        Err(Failure(FelixStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(FelixStatus::Data, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next `felix_*` call on this thread.
#[no_mangle]
pub extern "C" fn felix_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn felix_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the checkpoints written by `felix train` from `model_dir`.
///
/// # Safety
/// `model_dir` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn felix_pipeline_load(
    model_dir: *const c_char,
    out: *mut *mut FelixPipeline,
) -> FelixStatus {
    guard(|| {
        out_arg(out, "out")?;
        let dir = Path::new(str_arg(model_dir, "model_dir")?);
        let tagger = Checkpoint::load(&dir.join(TAGGER_CHECKPOINT))?;
        let insertion = Checkpoint::load(&dir.join(INSERTION_CHECKPOINT))?;
        let models = Checkpoint::assemble(&tagger, &insertion)?;
        *out = Box::into_raw(Box::new(FelixPipeline { models }));
        Ok(())
    })
}

/// Edits one whitespace-tokenized sentence. The result goes to `*out`.
///
/// # Safety
/// `pipeline` must come from `felix_pipeline_load`; `source` must be a
/// valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn felix_pipeline_predict(
    pipeline: *const FelixPipeline,
    source: *const c_char,
    out: *mut *mut c_char,
) -> FelixStatus {
    guard(|| {
        out_arg(out, "out")?;
        let Some(pipeline) = pipeline.as_ref() else {
            return Err(Failure(FelixStatus::NullArgument, "`pipeline` is null".into()));
        };
        let source = tokenize(str_arg(source, "source")?);
        let prediction = pipeline.models.predict(&source)?;
        *out = into_c_string(detokenize(&prediction.tokens)?)?;
        Ok(())
    })
}

/// # Safety
/// `pipeline` must be null or come from `felix_pipeline_load` and not be
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn felix_pipeline_free(pipeline: *mut FelixPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Aligns a pair and writes the aligned record as JSON to `*out`.
/// `config_toml` may be null for the defaults. Returns
/// `FELIX_STATUS_UNALIGNABLE` when the pair has no plan.
///
/// # Safety
/// String arguments must be valid C strings (or null where allowed) and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn felix_align_json(
    source: *const c_char,
    target: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut c_char,
) -> FelixStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml(str_arg(config_toml, "config_toml")?, &[])?
        };
        let source = tokenize(str_arg(source, "source")?);
        let target = tokenize(str_arg(target, "target")?);
        let record = AlignedRecord::build(&source, &target, &cfg.alignment())?
            .map_err(|reason| Failure(FelixStatus::Unalignable, reason.to_string()))?;
        let json = serde_json::to_string(&record).map_err(|e| Failure(FelixStatus::Data, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// Sentence SARI of `prediction` given `source` and `n_references`
/// references. `all_f1` selects F1 for the deletion component instead of
/// precision.
///
/// # Safety
/// `references` must point to `n_references` valid C strings; the other
/// pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn felix_sari(
    source: *const c_char,
    prediction: *const c_char,
    references: *const *const c_char,
    n_references: usize,
    all_f1: bool,
    out: *mut FelixSari,
) -> FelixStatus {
    guard(|| {
        out_arg(out, "out")?;
        if references.is_null() && n_references > 0 {
            return Err(Failure(FelixStatus::NullArgument, "`references` is null".into()));
        }
        let refs: Vec<TokenSeq> = (0..n_references)
            .map(|i| str_arg(*references.add(i), "references[i]").map(tokenize))
            .collect::<Result<_, _>>()?;
        let variant = if all_f1 {
            SariVariant::AllF1
        } else {
            SariVariant::Original
        };
        let s = metrics::sari(
            &tokenize(str_arg(source, "source")?),
            &tokenize(str_arg(prediction, "prediction")?),
            &refs,
            variant,
        )?;
        *out = FelixSari {
            sari: s.sari,
            add: s.add,
            keep: s.keep,
            del: s.del,
        };
        Ok(())
    })
}

/// Sentence TER of `prediction` against `reference`.
///
/// # Safety
/// String arguments must be valid C strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn felix_ter(
    prediction: *const c_char,
    reference: *const c_char,
    out: *mut FelixTer,
) -> FelixStatus {
    guard(|| {
        out_arg(out, "out")?;
        let t = metrics::ter(
            &tokenize(str_arg(prediction, "prediction")?),
            &tokenize(str_arg(reference, "reference")?),
        )?;
        *out = FelixTer {
            ter: t.ter,
            ins: t.counts.ins,
            del: t.counts.del,
            sub: t.counts.sub,
            shift: t.counts.shift,
        };
        Ok(())
    })
}
