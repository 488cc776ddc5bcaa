//! C ABI over the core library.
//!
//! Conventions:
//! - Every fallible function returns an [`ApStatus`] and writes results
//!   through out-pointers, which are left untouched on failure.
//! - [`ap_last_error`] describes the most recent failure on the calling
//!   thread.
//! - Strings returned through out-pointers are owned by the caller and
//!   released with [`ap_string_free`]; handles are released with their
//!   `_free` function. Passing NULL to any `_free` function is a no-op.
//! - Panics never cross the boundary; they surface as `AP_STATUS_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use audiopedia::eval::{aqa_accuracy, retrieval_f1};
use audiopedia::kb::{
    ingest_triplets, load_kb, parse_records, EntityId, KnowledgeBase, KnowledgeSource,
};
use audiopedia::linking::{build_entity_index, link, noise_inject, EncoderChoice, EntityIndex};
use audiopedia::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    ErrNull = 1,
    /// A string argument was not valid UTF-8.
    ErrUtf8 = 2,
    /// Malformed or out-of-range input.
    ErrInvalid = 3,
    ErrIo = 4,
    /// Unknown entity id or name.
    ErrNotFound = 5,
    ErrPanic = 6,
}

/// Parsed knowledge base.
pub struct ApKb(KnowledgeBase);

/// Entity index built from a knowledge base under one knowledge source.
pub struct ApIndex(EntityIndex);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Failure(ApStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => ApStatus::ErrIo,
            Error::UnknownEntity(_) | Error::UnknownEntityName(_) => ApStatus::ErrNotFound,
            _ => ApStatus::ErrInvalid,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> ApStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ApStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ApStatus::ErrPanic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(ApStatus::ErrNull, format!("{name} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ApStatus::ErrUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

fn source_arg(s: &str) -> FfiResult<KnowledgeSource> {
    s.parse().map_err(Failure::from)
}

fn check_out<T>(out: *mut T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        Err(null(name))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn ap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses tab-separated (or JSON-lines) triplets.
///
/// # Safety
/// `text` must be NULL or a NUL-terminated string; `out` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ap_kb_from_text(text: *const c_char, out: *mut *mut ApKb) -> ApStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        check_out(out, "out")?;
        let (kb, _) = ingest_triplets(parse_records(text)?)?;
        write(out, Box::into_raw(Box::new(ApKb(kb))), "out")
    })
}

/// Loads a knowledge base file.
///
/// # Safety
/// As [`ap_kb_from_text`].
#[no_mangle]
pub unsafe extern "C" fn ap_kb_from_path(path: *const c_char, out: *mut *mut ApKb) -> ApStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        check_out(out, "out")?;
        let (kb, _) = load_kb(path)?;
        write(out, Box::into_raw(Box::new(ApKb(kb))), "out")
    })
}

/// # Safety
/// `kb` must be NULL or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ap_kb_free(kb: *mut ApKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// # Safety
/// `kb` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_kb_entity_count(kb: *const ApKb, out: *mut usize) -> ApStatus {
    guard(|| write(out, handle(kb, "kb")?.0.len(), "out"))
}

/// Dense id of the entity with this (normalized) name.
///
/// # Safety
/// `kb` must be a live handle; `name` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_kb_lookup(
    kb: *const ApKb,
    name: *const c_char,
    out: *mut u32,
) -> ApStatus {
    guard(|| {
        let kb = handle(kb, "kb")?;
        let name = str_arg(name, "name")?;
        write(out, kb.0.resolve(name)?.0, "out")
    })
}

/// Canonical name of entity `id`. Free the result with [`ap_string_free`].
///
/// # Safety
/// `kb` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_kb_entity_name(
    kb: *const ApKb,
    id: u32,
    out: *mut *mut c_char,
) -> ApStatus {
    guard(|| {
        let kb = handle(kb, "kb")?;
        check_out(out, "out")?;
        let name = kb.0.name(EntityId(id))?.to_string();
        write(out, c_string(name), "out")
    })
}

/// Knowledge text of entity `id` under `source` (`name`, `full`,
/// `partial=<f>[:<seed>]`). Free the result with [`ap_string_free`].
///
/// # Safety
/// `kb` must be a live handle; `source` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_kb_knowledge_view(
    kb: *const ApKb,
    id: u32,
    source: *const c_char,
    out: *mut *mut c_char,
) -> ApStatus {
    guard(|| {
        let kb = handle(kb, "kb")?;
        let source = source_arg(str_arg(source, "source")?)?;
        check_out(out, "out")?;
        let text = kb.0.knowledge_view(EntityId(id), &source)?;
        write(out, c_string(text), "out")
    })
}

/// Builds a TF-IDF entity index. The index does not borrow `kb`.
///
/// # Safety
/// `kb` must be a live handle; `source` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_index_build(
    kb: *const ApKb,
    source: *const c_char,
    out: *mut *mut ApIndex,
) -> ApStatus {
    guard(|| {
        let kb = handle(kb, "kb")?;
        let source = source_arg(str_arg(source, "source")?)?;
        check_out(out, "out")?;
        let index = build_entity_index(&kb.0, source, &EncoderChoice::TfIdf)?;
        write(out, Box::into_raw(Box::new(ApIndex(index))), "out")
    })
}

/// # Safety
/// `index` must be NULL or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ap_index_free(index: *mut ApIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Links a transcript to the best-scoring entity. `out_score` may be NULL.
///
/// # Safety
/// `index` must be a live handle; `transcript` NUL-terminated; `out_id`
/// writable; `out_score` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ap_index_link(
    index: *const ApIndex,
    transcript: *const c_char,
    out_id: *mut u32,
    out_score: *mut f64,
) -> ApStatus {
    guard(|| {
        let index = handle(index, "index")?;
        let transcript = str_arg(transcript, "transcript")?;
        check_out(out_id, "out_id")?;
        let r = link(transcript, &index.0)?;
        let score = r
            .scores
            .iter()
            .find(|(id, _)| *id == r.chosen)
            .map_or(0.0, |(_, s)| *s);
        write(out_id, r.chosen.0, "out_id")?;
        if !out_score.is_null() {
            out_score.write(score);
        }
        Ok(())
    })
}

/// 1.0 when the normalized gold answer occurs in the generated text.
///
/// # Safety
/// `generated` and `gold` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_aqa_accuracy(
    generated: *const c_char,
    gold: *const c_char,
    out: *mut f64,
) -> ApStatus {
    guard(|| {
        let generated = str_arg(generated, "generated")?;
        let gold = str_arg(gold, "gold")?;
        write(out, aqa_accuracy(generated, gold)?, "out")
    })
}

unsafe fn index_slice<'a>(p: *const usize, len: usize, name: &str) -> FfiResult<&'a [usize]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// F1 between retained and gold index sets of a pool. Arrays may be NULL
/// when their length is 0.
///
/// # Safety
/// Non-empty arrays must hold the given number of elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_retrieval_f1(
    retained: *const usize,
    retained_len: usize,
    gold: *const usize,
    gold_len: usize,
    pool_len: usize,
    out: *mut f64,
) -> ApStatus {
    guard(|| {
        let retained = index_slice(retained, retained_len, "retained")?;
        let gold = index_slice(gold, gold_len, "gold")?;
        write(out, retrieval_f1(retained, gold, pool_len)?, "out")
    })
}

/// Replaces each character with probability `rate` by a different
/// lowercase letter. Free the result with [`ap_string_free`].
///
/// # Safety
/// `text` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ap_noise_inject(
    text: *const c_char,
    rate: f64,
    seed: u64,
    out: *mut *mut c_char,
) -> ApStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        check_out(out, "out")?;
        write(out, c_string(noise_inject(text, rate, seed)?), "out")
    })
}
