//! C ABI over the rule parser, trigger handlers and the reference replay.
//!
//! Every fallible call returns a [`MetStatus`]. On failure the message (and,
//! for syntax errors, the byte offset) is kept per thread and can be read
//! with [`met_last_error_message`] / [`met_last_error_offset`]. Strings
//! returned by this library must be released with [`met_string_free`]; every
//! handle has its own `_free` function. Passing NULL to a `_free` function is
//! a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use met_core::event::WireEvent;
use met_core::oracle;
use met_core::rule::{self, NormalizedRule, RuleError};
use met_core::trigger::{FiringRecord, TriggerError, TriggerHandler};
use met_core::wire::InvocationPayload;
use met_core::Event;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    SyntaxError = 3,
    CaseExplosion = 4,
    UnknownEventType = 5,
    Backpressure = 6,
    InvalidJson = 7,
    Panic = 8,
}

/// A compiled rule.
pub struct MetRule {
    rule: NormalizedRule,
}

/// A trigger handler: per-type FIFO sets plus the compiled rule.
pub struct MetHandler {
    handler: TriggerHandler,
}

/// One firing produced by [`met_handler_ingest`].
pub struct MetFiring {
    record: FiringRecord,
}

struct LastError {
    message: CString,
    offset: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(status: MetStatus, message: impl Into<String>, offset: Option<usize>) -> MetStatus {
    let message = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError {
            message,
            offset: offset.map_or(-1, |o| o as i64),
        })
    });
    status
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn rule_error(e: RuleError) -> MetStatus {
    let status = match e {
        RuleError::Syntax { .. } => MetStatus::SyntaxError,
        RuleError::CaseExplosion { .. } => MetStatus::CaseExplosion,
    };
    set_error(status, e.to_string(), e.offset())
}

fn trigger_error(e: TriggerError) -> MetStatus {
    let status = match e {
        TriggerError::Backpressure { .. } => MetStatus::Backpressure,
        _ => MetStatus::UnknownEventType,
    };
    set_error(status, e.to_string(), None)
}

/// Borrows a C string as UTF-8.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, MetStatus> {
    if p.is_null() {
        return Err(set_error(MetStatus::NullArgument, format!("{name} is NULL"), None));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| set_error(MetStatus::InvalidUtf8, format!("{name} is not UTF-8"), None))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

fn guard(f: impl FnOnce() -> Result<(), MetStatus>) -> MetStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MetStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => set_error(MetStatus::Panic, "internal panic", None),
    }
}

/// Last error message on this thread, or NULL. Valid until the next call
/// into this library on the same thread.
#[no_mangle]
pub extern "C" fn met_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null(), |e| e.message.as_ptr())
    })
}

/// Byte offset of the last syntax error on this thread, or -1.
#[no_mangle]
pub extern "C" fn met_last_error_offset() -> i64 {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(-1, |e| e.offset))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn met_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and normalizes `text`.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn met_rule_parse(text: *const c_char, out: *mut *mut MetRule) -> MetStatus {
    guard(|| {
        if out.is_null() {
            return Err(set_error(MetStatus::NullArgument, "out is NULL", None));
        }
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let rule = rule::parse(text)
            .and_then(|ast| rule::normalize(&ast))
            .map_err(rule_error)?;
        *out = Box::into_raw(Box::new(MetRule { rule }));
        Ok(())
    })
}

/// # Safety
/// `rule` must come from [`met_rule_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn met_rule_free(rule: *mut MetRule) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// Number of cases in the rule's normal form, 0 for NULL.
///
/// # Safety
/// `rule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn met_rule_case_count(rule: *const MetRule) -> usize {
    rule.as_ref().map_or(0, |r| r.rule.cases.len())
}

/// Canonical text of the rule. Free with [`met_string_free`].
///
/// # Safety
/// `rule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn met_rule_canonical(rule: *const MetRule) -> *mut c_char {
    rule.as_ref()
        .map_or(ptr::null_mut(), |r| to_c_string(r.rule.source_text.clone()))
}

/// The normalized cases as a JSON array. Free with [`met_string_free`].
///
/// # Safety
/// `rule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn met_rule_cases_json(rule: *const MetRule) -> *mut c_char {
    rule.as_ref().map_or(ptr::null_mut(), |r| {
        to_c_string(serde_json::to_string(&r.rule.cases).expect("cases serialize"))
    })
}

/// Creates a handler for `rule_text`. The function URL is left empty; the
/// caller decides what to do with firings.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn met_handler_new(
    trigger_id: *const c_char,
    rule_text: *const c_char,
    out: *mut *mut MetHandler,
) -> MetStatus {
    guard(|| {
        if out.is_null() {
            return Err(set_error(MetStatus::NullArgument, "out is NULL", None));
        }
        *out = ptr::null_mut();
        let id = str_arg(trigger_id, "trigger_id")?;
        let text = str_arg(rule_text, "rule_text")?;
        let rule = NormalizedRule::compile(text).map_err(rule_error)?;
        *out = Box::into_raw(Box::new(MetHandler {
            handler: TriggerHandler::new(id, rule, ""),
        }));
        Ok(())
    })
}

/// # Safety
/// `handler` must come from [`met_handler_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn met_handler_free(handler: *mut MetHandler) {
    if !handler.is_null() {
        drop(Box::from_raw(handler));
    }
}

/// Adds one event. `*out_firing` is set to a new firing when the event
/// fulfils the rule and to NULL otherwise. `payload` may be NULL when
/// `payload_len` is 0.
///
/// # Safety
/// `handler` must be live and not used concurrently; strings NUL-terminated;
/// `payload` readable for `payload_len` bytes; `out_firing` writable.
#[no_mangle]
pub unsafe extern "C" fn met_handler_ingest(
    handler: *mut MetHandler,
    event_id: *const c_char,
    event_type: *const c_char,
    created_at_ns: i64,
    payload: *const u8,
    payload_len: usize,
    out_firing: *mut *mut MetFiring,
) -> MetStatus {
    guard(|| {
        if out_firing.is_null() {
            return Err(set_error(MetStatus::NullArgument, "out_firing is NULL", None));
        }
        *out_firing = ptr::null_mut();
        let Some(h) = handler.as_mut() else {
            return Err(set_error(MetStatus::NullArgument, "handler is NULL", None));
        };
        let id = str_arg(event_id, "event_id")?;
        let ty = str_arg(event_type, "event_type")?;
        let bytes = if payload_len == 0 {
            Vec::new()
        } else if payload.is_null() {
            return Err(set_error(MetStatus::NullArgument, "payload is NULL", None));
        } else {
            std::slice::from_raw_parts(payload, payload_len).to_vec()
        };
        let event = Event::new(id, ty).with_payload(bytes).created_at(created_at_ns);
        if let Some(record) = h.handler.ingest(event).map_err(trigger_error)? {
            *out_firing = Box::into_raw(Box::new(MetFiring { record }));
        }
        Ok(())
    })
}

/// Number of queued events of `event_type`.
///
/// # Safety
/// `handler` must be live; `event_type` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn met_handler_queue_len(
    handler: *const MetHandler,
    event_type: *const c_char,
    out: *mut usize,
) -> MetStatus {
    guard(|| {
        let (Some(h), false) = (handler.as_ref(), out.is_null()) else {
            return Err(set_error(MetStatus::NullArgument, "handler or out is NULL", None));
        };
        let ty = str_arg(event_type, "event_type")?;
        match h.handler.queue_len(ty) {
            Some(n) => {
                *out = n;
                Ok(())
            }
            None => Err(set_error(
                MetStatus::UnknownEventType,
                format!("{ty} is not used by this rule"),
                None,
            )),
        }
    })
}

/// Queue lengths and counters as JSON. Free with [`met_string_free`].
///
/// # Safety
/// `handler` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn met_handler_snapshot_json(handler: *const MetHandler) -> *mut c_char {
    handler.as_ref().map_or(ptr::null_mut(), |h| {
        to_c_string(serde_json::to_string(&h.handler.snapshot()).expect("snapshot serializes"))
    })
}

/// # Safety
/// `firing` must come from [`met_handler_ingest`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn met_firing_free(firing: *mut MetFiring) {
    if !firing.is_null() {
        drop(Box::from_raw(firing));
    }
}

/// Index of the fulfilled case, or -1 for NULL.
///
/// # Safety
/// `firing` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn met_firing_case_index(firing: *const MetFiring) -> i64 {
    firing.as_ref().map_or(-1, |f| f.record.case_index as i64)
}

/// Number of consumed events, 0 for NULL.
///
/// # Safety
/// `firing` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn met_firing_event_count(firing: *const MetFiring) -> usize {
    firing.as_ref().map_or(0, |f| f.record.consumed_count())
}

/// The invocation body a function would receive, as JSON. Free with
/// [`met_string_free`].
///
/// # Safety
/// `firing` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn met_firing_json(firing: *const MetFiring) -> *mut c_char {
    firing.as_ref().map_or(ptr::null_mut(), |f| {
        to_c_string(
            serde_json::to_string(&InvocationPayload::from(&f.record)).expect("payload serializes"),
        )
    })
}

/// Replays a JSON array of events (`{id, type, createdAt, payload?}`, payload
/// base64) through the reference evaluator. `*out_json` receives a JSON array
/// of invocation bodies; free it with [`met_string_free`].
///
/// # Safety
/// String arguments must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn met_oracle_replay_json(
    rule_text: *const c_char,
    events_json: *const c_char,
    out_json: *mut *mut c_char,
) -> MetStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(set_error(MetStatus::NullArgument, "out_json is NULL", None));
        }
        *out_json = ptr::null_mut();
        let text = str_arg(rule_text, "rule_text")?;
        let json = str_arg(events_json, "events_json")?;
        let wire: Vec<WireEvent> = serde_json::from_str(json).map_err(|e| {
            set_error(MetStatus::InvalidJson, e.to_string(), Some(e.column().saturating_sub(1)))
        })?;
        let events: Vec<Event> = wire.into_iter().map(Event::from).collect();
        let firings = oracle::replay(text, &events).map_err(rule_error)?;
        let payloads: Vec<InvocationPayload> = firings.iter().map(InvocationPayload::from).collect();
        *out_json = to_c_string(serde_json::to_string(&payloads).expect("payloads serialize"));
        Ok(())
    })
}
