//! C interface.
//!
//! Services are opaque handles created by `qc_service_*` and released with
//! [`qc_service_free`]. Every fallible call returns a [`QcStatus`] and writes
//! its result through an out pointer; on failure a message is kept per thread
//! and can be read with [`qc_last_error_message`]. Rates are packets per slot,
//! capacities bits per slot, entropies bits.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use queuecap::capacity_opt::{
    closed_form_capacity, feedback_capacity, weak_feedback_bound, SolverOptions,
};
use queuecap::distributions::{geometric_entropy, Pmf, ServiceModel};
use queuecap::error::Error;
use queuecap::gap_checker::{critical_lambda_binary, gap_at};

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnstableRate = 3,
    NonConvergence = 4,
    BudgetExceeded = 5,
    Internal = 6,
}

/// A service-time law.
pub struct QcService {
    inner: ServiceModel,
}

/// Both entropy suprema at one rate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QcGap {
    pub lambda: f64,
    pub h_feedback_bits: f64,
    pub h_weak_bits: f64,
    pub gap_bits: f64,
    pub strict: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QcStatus {
    match e {
        Error::UnstableRate { .. } => QcStatus::UnstableRate,
        Error::NonConvergence { .. } | Error::TruncationInadequate { .. } => QcStatus::NonConvergence,
        Error::BudgetExceeded { .. } | Error::Undersampled { .. } => QcStatus::BudgetExceeded,
        Error::Io(_) => QcStatus::Internal,
        _ => QcStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> QcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QcStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            QcStatus::Internal
        }
    }
}

fn make_service(f: impl FnOnce() -> Result<ServiceModel, Error>) -> *mut QcService {
    let mut out = ptr::null_mut();
    guard(|| {
        out = Box::into_raw(Box::new(QcService { inner: f()? }));
        Ok(())
    });
    out
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Uniform service on {1, 2}.
#[no_mangle]
pub extern "C" fn qc_service_binary12() -> *mut QcService {
    make_service(|| Ok(ServiceModel::binary12()))
}

/// Geometric service on {1, 2, ...} with rate `mu`; NULL on bad input.
#[no_mangle]
pub extern "C" fn qc_service_geometric(mu: f64) -> *mut QcService {
    make_service(|| ServiceModel::geometric(mu))
}

/// Service of exactly `k >= 1` slots; NULL on bad input.
#[no_mangle]
pub extern "C" fn qc_service_deterministic(k: usize) -> *mut QcService {
    make_service(|| ServiceModel::deterministic(k))
}

/// Service with `P(S = i) = probs[i]`, `i < len`; NULL on bad input.
///
/// # Safety
/// `probs` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_service_custom(probs: *const f64, len: usize) -> *mut QcService {
    if probs.is_null() || len == 0 {
        set_error("null or empty probability array".into());
        return ptr::null_mut();
    }
    let dense = std::slice::from_raw_parts(probs, len).to_vec();
    make_service(move || ServiceModel::custom(Pmf::from_dense(&dense, 0.0)?))
}

/// Releases a service; NULL is ignored.
///
/// # Safety
/// `service` must come from a `qc_service_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qc_service_free(service: *mut QcService) {
    if !service.is_null() {
        drop(Box::from_raw(service));
    }
}

/// Service rate `1 / E[S]`, or NaN for NULL.
///
/// # Safety
/// `service` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qc_service_mu(service: *const QcService) -> f64 {
    service.as_ref().map_or(f64::NAN, |s| s.inner.mu())
}

unsafe fn with_service(
    service: *const QcService,
    out: *mut f64,
    f: impl FnOnce(&ServiceModel) -> Result<f64, Error>,
) -> QcStatus {
    let (Some(s), false) = (service.as_ref(), out.is_null()) else {
        set_error("null pointer argument".into());
        return QcStatus::NullPointer;
    };
    guard(|| {
        *out = f(&s.inner)?;
        Ok(())
    })
}

/// Feedback capacity at rate `lambda`, bits per slot.
///
/// # Safety
/// `service` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_feedback_capacity(
    service: *const QcService,
    lambda: f64,
    out: *mut f64,
) -> QcStatus {
    with_service(service, out, |s| {
        Ok(feedback_capacity(lambda, s, &SolverOptions::default())?.value_bits_per_slot)
    })
}

/// Upper bound on the weak-feedback capacity at rate `lambda`, bits per slot.
///
/// # Safety
/// `service` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_weak_feedback_bound(
    service: *const QcService,
    lambda: f64,
    out: *mut f64,
) -> QcStatus {
    with_service(service, out, |s| {
        Ok(weak_feedback_bound(lambda, s, &SolverOptions::default())?.value_bits_per_slot)
    })
}

/// `lambda (H(g_lambda) - H(S))`, bits per slot.
///
/// # Safety
/// `service` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_closed_form_capacity(
    service: *const QcService,
    lambda: f64,
    out: *mut f64,
) -> QcStatus {
    with_service(service, out, |s| Ok(closed_form_capacity(lambda, s)?.value_bits_per_slot))
}

/// Both entropy suprema at `lambda` and their difference.
///
/// # Safety
/// `service` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_gap_check(
    service: *const QcService,
    lambda: f64,
    out: *mut QcGap,
) -> QcStatus {
    let (Some(s), false) = (service.as_ref(), out.is_null()) else {
        set_error("null pointer argument".into());
        return QcStatus::NullPointer;
    };
    guard(|| {
        let r = gap_at(&s.inner, lambda, &SolverOptions::default())?;
        *out = QcGap {
            lambda,
            h_feedback_bits: r.h_feedback_side,
            h_weak_bits: r.h_weak_side,
            gap_bits: r.gap,
            strict: r.strict,
        };
        Ok(())
    })
}

/// Entropy of the geometric law on {1, 2, ...} with mean `1 / lambda`, bits.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_geometric_entropy(lambda: f64, out: *mut f64) -> QcStatus {
    if out.is_null() {
        set_error("null pointer argument".into());
        return QcStatus::NullPointer;
    }
    guard(|| {
        *out = geometric_entropy(lambda)?;
        Ok(())
    })
}

/// The rate at which the two binary-service optimal output laws could coincide.
#[no_mangle]
pub extern "C" fn qc_critical_lambda_binary() -> f64 {
    critical_lambda_binary()
}
