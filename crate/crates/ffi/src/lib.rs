//! C ABI over `relu_regions`.
//!
//! Networks and bound reports cross the boundary as opaque handles that the
//! caller releases with the matching `*_free` function. Every entry point
//! returns an [`RrStatus`]; results come back through out-pointers, and the
//! message of the most recent failure on the calling thread is available
//! from [`rr_last_error_message`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use relu_regions::model::random_network;
use relu_regions::netfile::{load_network, network_from_str};
use relu_regions::oracle::{check_soundness, segment_pieces};
use relu_regions::{forward, local_region_bound, Ball, BoundReport, Error, Network};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidNetwork = 4,
    Io = 5,
    Parse = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque network handle.
pub struct RrNetwork(Network);

/// Opaque bound report handle.
pub struct RrBoundReport(BoundReport);

struct Failure {
    status: RrStatus,
    message: String,
}

impl Failure {
    fn new(status: RrStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InputShape { .. } => RrStatus::DimensionMismatch,
            Error::InvalidNetwork(_) => RrStatus::InvalidNetwork,
            Error::Parse { .. } => RrStatus::Parse,
            Error::Io { .. } | Error::MissingData { .. } => RrStatus::Io,
            _ => RrStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> RrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RrStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            RrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(RrStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(RrStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(RrStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(RrStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure::new(RrStatus::InvalidArgument, format!("{name} is not UTF-8: {e}")))
}

fn check_dim(net: &Network, len: usize) -> Result<(), Failure> {
    if len != net.input_dim() {
        return Err(Error::InputShape { expected: net.input_dim(), actual: len }.into());
    }
    Ok(())
}

fn publish<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a network from a JSON network file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_network_load(path: *const c_char, out: *mut *mut RrNetwork) -> RrStatus {
    guarded(|| {
        let out = out_ref(out, "out")?;
        let net = load_network(string(path, "path")?)?;
        publish(out, RrNetwork(net));
        Ok(())
    })
}

/// Parses a network from JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_network_from_json(json: *const c_char, out: *mut *mut RrNetwork) -> RrStatus {
    guarded(|| {
        let out = out_ref(out, "out")?;
        let net = network_from_str(string(json, "json")?)?;
        publish(out, RrNetwork(net));
        Ok(())
    })
}

/// Random network with i.i.d. normal weights and biases; `widths` lists the
/// input width followed by each layer width. The last layer is linear.
///
/// # Safety
/// `widths` must point to `widths_len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rr_network_random(
    widths: *const usize,
    widths_len: usize,
    seed: u64,
    init_stddev: f64,
    out: *mut *mut RrNetwork,
) -> RrStatus {
    guarded(|| {
        let out = out_ref(out, "out")?;
        let net = random_network(slice(widths, widths_len, "widths")?, seed, init_stddev)?;
        publish(out, RrNetwork(net));
        Ok(())
    })
}

/// Releases a network. Null is accepted.
///
/// # Safety
/// `net` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rr_network_free(net: *mut RrNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rr_network_input_dim(net: *const RrNetwork, out: *mut usize) -> RrStatus {
    guarded(|| {
        *out_ref(out, "out")? = deref(net, "net")?.0.input_dim();
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rr_network_output_dim(net: *const RrNetwork, out: *mut usize) -> RrStatus {
    guarded(|| {
        *out_ref(out, "out")? = deref(net, "net")?.0.output_dim();
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rr_network_layer_count(net: *const RrNetwork, out: *mut usize) -> RrStatus {
    guarded(|| {
        *out_ref(out, "out")? = deref(net, "net")?.0.layer_count();
        Ok(())
    })
}

/// Evaluates the network at `x`; `out_len` must equal the output width.
///
/// # Safety
/// `x` must hold `x_len` values and `out` must have room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn rr_network_forward(
    net: *const RrNetwork,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> RrStatus {
    guarded(|| {
        let net = &deref(net, "net")?.0;
        check_dim(net, x_len)?;
        let x = slice(x, x_len, "x")?;
        if out_len != net.output_dim() {
            return Err(Failure::new(
                RrStatus::DimensionMismatch,
                format!("output buffer holds {out_len} values, network produces {}", net.output_dim()),
            ));
        }
        if out.is_null() {
            return Err(Failure::new(RrStatus::NullPointer, "out is null"));
        }
        let trace = forward(net, x)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(trace.output());
        Ok(())
    })
}

/// Bounds the number of linear regions meeting the ball of `radius` around
/// `center`.
///
/// # Safety
/// `center` must hold `center_len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rr_local_region_bound(
    net: *const RrNetwork,
    center: *const f64,
    center_len: usize,
    radius: f64,
    out: *mut *mut RrBoundReport,
) -> RrStatus {
    guarded(|| {
        let out = out_ref(out, "out")?;
        let net = &deref(net, "net")?.0;
        check_dim(net, center_len)?;
        let ball = Ball::new(slice(center, center_len, "center")?.to_vec(), radius)?;
        publish(out, RrBoundReport(local_region_bound(net, &ball)?));
        Ok(())
    })
}

/// Number of neurons whose sign may flip; the region bound is `2^C`.
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rr_report_c(report: *const RrBoundReport, out: *mut usize) -> RrStatus {
    guarded(|| {
        *out_ref(out, "out")? = deref(report, "report")?.0.c;
        Ok(())
    })
}

/// Copies the per-layer S counts into `buf`. `written` receives the number
/// of layers; when `buf_len` is smaller, nothing is copied and the status is
/// `BufferTooSmall`.
///
/// # Safety
/// `buf` must have room for `buf_len` values and `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rr_report_s_counts(
    report: *const RrBoundReport,
    buf: *mut usize,
    buf_len: usize,
    written: *mut usize,
) -> RrStatus {
    guarded(|| {
        let counts = &deref(report, "report")?.0.per_layer_s_counts;
        *out_ref(written, "written")? = counts.len();
        if buf_len < counts.len() {
            return Err(Failure::new(
                RrStatus::BufferTooSmall,
                format!("buffer holds {buf_len} values, report has {}", counts.len()),
            ));
        }
        if !counts.is_empty() {
            if buf.is_null() {
                return Err(Failure::new(RrStatus::NullPointer, "buf is null"));
            }
            std::slice::from_raw_parts_mut(buf, counts.len()).copy_from_slice(counts);
        }
        Ok(())
    })
}

/// Releases a report. Null is accepted.
///
/// # Safety
/// `report` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rr_report_free(report: *mut RrBoundReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Samples the ball and counts violations of the certified conditions.
/// Any of the out-pointers may be null.
///
/// # Safety
/// `center` must hold `center_len` values; non-null outs must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn rr_check_soundness(
    net: *const RrNetwork,
    center: *const f64,
    center_len: usize,
    radius: f64,
    samples: usize,
    seed: u64,
    violations: *mut usize,
    distinct_patterns: *mut usize,
    c: *mut usize,
) -> RrStatus {
    guarded(|| {
        let net = &deref(net, "net")?.0;
        check_dim(net, center_len)?;
        let ball = Ball::new(slice(center, center_len, "center")?.to_vec(), radius)?;
        let report = check_soundness(net, &ball, samples, seed)?;
        if let Some(v) = violations.as_mut() {
            *v = report.violations.len();
        }
        if let Some(d) = distinct_patterns.as_mut() {
            *d = report.distinct_patterns;
        }
        if let Some(k) = c.as_mut() {
            *k = report.c;
        }
        Ok(())
    })
}

/// Number of linear pieces of the network restricted to the segment `a`–`b`.
///
/// # Safety
/// `a` and `b` must each hold `len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rr_segment_piece_count(
    net: *const RrNetwork,
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut usize,
) -> RrStatus {
    guarded(|| {
        let out = out_ref(out, "out")?;
        let net = &deref(net, "net")?.0;
        check_dim(net, len)?;
        *out = segment_pieces(net, slice(a, len, "a")?, slice(b, len, "b")?)?.piece_count();
        Ok(())
    })
}
