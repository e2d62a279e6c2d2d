//! C ABI for the simulstream engine.
//!
//! Every function returns a [`SimulStatus`]; on failure a message is kept
//! per thread and can be read with [`simulstream_last_error`]. Strings handed
//! out by the library must be released with [`simulstream_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use simulstream::config::FileConfig;
use simulstream::harness::Engine;
use simulstream::metrics::{self, EvalUnits, Granularity};
use simulstream::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Model = 5,
    InvalidInput = 6,
    UndefinedMetric = 7,
    Panic = 99,
}

/// Opaque engine handle.
pub struct SimulEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> SimulStatus {
    match err {
        Error::Config(_) | Error::Precondition(_) => SimulStatus::Config,
        Error::Io { .. } | Error::Parse { .. } => SimulStatus::Io,
        Error::Model(_) | Error::Continuation { .. } | Error::TooLong { .. } => SimulStatus::Model,
        Error::UndefinedMetric(_) => SimulStatus::UndefinedMetric,
        _ => SimulStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SimulStatus, String)>) -> SimulStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SimulStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SimulStatus::Panic
        }
    }
}

fn fail(err: Error) -> (SimulStatus, String) {
    (status_of(&err), err.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SimulStatus, String)> {
    if p.is_null() {
        return Err((SimulStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            SimulStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn granularity(g: u32) -> Result<Granularity, (SimulStatus, String)> {
    match g {
        0 => Ok(Granularity::Word),
        1 => Ok(Granularity::Character),
        _ => Err((
            SimulStatus::InvalidInput,
            format!("unknown granularity {g}"),
        )),
    }
}

/// Builds an engine from TOML configuration text (same format as the CLI's
/// `--config` file).
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string and `out` a valid
/// pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn simulstream_engine_new(
    config_toml: *const c_char,
    out: *mut *mut SimulEngine,
) -> SimulStatus {
    guard(|| {
        if out.is_null() {
            return Err((SimulStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let text = read_str(config_toml, "config_toml")?;
        let engine = FileConfig::from_toml_str(text)
            .and_then(|c| c.engine())
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(SimulEngine { inner: engine }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from [`simulstream_engine_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn simulstream_engine_free(engine: *mut SimulEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Simulates one whitespace-tokenized source sentence and returns its
/// trajectory as a JSON object in `out_json`.
///
/// # Safety
/// `engine` must be a live handle, `source` a valid NUL-terminated string and
/// `out_json` a valid pointer. The returned string must be released with
/// [`simulstream_string_free`].
#[no_mangle]
pub unsafe extern "C" fn simulstream_engine_simulate(
    engine: *const SimulEngine,
    source: *const c_char,
    sentence_id: u64,
    out_json: *mut *mut c_char,
) -> SimulStatus {
    guard(|| {
        if engine.is_null() || out_json.is_null() {
            return Err((
                SimulStatus::NullPointer,
                "engine or out_json is null".into(),
            ));
        }
        *out_json = ptr::null_mut();
        let source = read_str(source, "source")?;
        let traj = (*engine)
            .inner
            .simulate(source, sentence_id)
            .map_err(fail)?;
        let json = CString::new(traj.to_json_line()).expect("JSON has no NUL bytes");
        *out_json = json.into_raw();
        Ok(())
    })
}

unsafe fn units(
    delays: *const usize,
    len: usize,
    source_len: usize,
    ref_len: usize,
) -> Result<EvalUnits, (SimulStatus, String)> {
    if delays.is_null() && len > 0 {
        return Err((SimulStatus::NullPointer, "delays is null".into()));
    }
    let slice = if len == 0 {
        &[][..]
    } else {
        std::slice::from_raw_parts(delays, len)
    };
    EvalUnits::new(Granularity::Word, source_len, slice.to_vec(), ref_len).map_err(fail)
}

/// Length-adaptive average lagging of one hypothesis whose per-unit delays
/// are given in source units.
///
/// # Safety
/// `delays` must point to `len` readable values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn simulstream_laal(
    delays: *const usize,
    len: usize,
    source_len: usize,
    ref_len: usize,
    out: *mut f64,
) -> SimulStatus {
    guard(|| {
        if out.is_null() {
            return Err((SimulStatus::NullPointer, "out is null".into()));
        }
        *out = metrics::laal(&units(delays, len, source_len, ref_len)?).map_err(fail)?;
        Ok(())
    })
}

/// Average lagging; arguments as for [`simulstream_laal`].
///
/// # Safety
/// `delays` must point to `len` readable values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn simulstream_average_lagging(
    delays: *const usize,
    len: usize,
    source_len: usize,
    ref_len: usize,
    out: *mut f64,
) -> SimulStatus {
    guard(|| {
        if out.is_null() {
            return Err((SimulStatus::NullPointer, "out is null".into()));
        }
        *out = metrics::average_lagging(&units(delays, len, source_len, ref_len)?).map_err(fail)?;
        Ok(())
    })
}

/// Corpus BLEU-4 over `count` hypothesis/reference lines. `granularity_code` is
/// 0 for words, 1 for characters.
///
/// # Safety
/// `hypotheses` and `references` must each point to `count` valid
/// NUL-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn simulstream_bleu(
    hypotheses: *const *const c_char,
    references: *const *const c_char,
    count: usize,
    granularity_code: u32,
    out: *mut f64,
) -> SimulStatus {
    guard(|| {
        if out.is_null() || (count > 0 && (hypotheses.is_null() || references.is_null())) {
            return Err((SimulStatus::NullPointer, "null argument".into()));
        }
        let g = granularity(granularity_code)?;
        let mut hyps = Vec::with_capacity(count);
        let mut refs = Vec::with_capacity(count);
        for i in 0..count {
            hyps.push(read_str(*hypotheses.add(i), "hypothesis")?.to_string());
            refs.push(read_str(*references.add(i), "reference")?.to_string());
        }
        *out = metrics::corpus_bleu(&hyps, &refs, g).map_err(fail)?;
        Ok(())
    })
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn simulstream_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn simulstream_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
