//! C ABI over the `lincomb` solvers and losses.
//!
//! Results live behind opaque handles that the caller releases with the
//! matching `*_free` function. Every fallible call returns an [`LcStatus`];
//! on failure [`lc_last_error_message`] describes the error for the current
//! thread. Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lincomb::alignment::{gsa_gengrad, gsa_loss, solve_gsa, AlignGrid, AlignResult};
use lincomb::assignment::{matching_loss, solve_assignment, CostMatrix, MatchingResult};
use lincomb::grad::{LpSpec, SolverOutcome};
use lincomb::lpref::solve_lp;
use lincomb::{Error, Matrix};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    InvalidInput = 1,
    DimensionMismatch = 2,
    NonFinite = 3,
    Infeasible = 4,
    Unbounded = 5,
    Degenerate = 6,
    SolverError = 7,
    NullPointer = 8,
    Panic = 9,
}

impl From<&Error> for LcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch(_) | Error::ShapeMismatch(_) | Error::NonSquare { .. } => {
                LcStatus::DimensionMismatch
            }
            Error::NonFinite(_) => LcStatus::NonFinite,
            Error::Infeasible => LcStatus::Infeasible,
            Error::Unbounded => LcStatus::Unbounded,
            Error::DegenerateInstance(_) => LcStatus::Degenerate,
            Error::Solver(_) => LcStatus::SolverError,
            _ => LcStatus::InvalidInput,
        }
    }
}

/// Result of an assignment solve.
pub struct LcMatching(MatchingResult);

/// Result of an alignment solve, with the gradient w.r.t. the match costs.
pub struct LcAlignment {
    result: AlignResult,
    gradient: Matrix,
}

/// Result of an LP solve.
pub struct LcLp(SolverOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), LcFail>) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LcStatus::Ok
        }
        Ok(Err(LcFail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LcStatus::Panic
        }
    }
}

struct LcFail(LcStatus, String);

impl From<Error> for LcFail {
    fn from(e: Error) -> Self {
        LcFail(LcStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> LcFail {
    LcFail(LcStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], LcFail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], LcFail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(have: usize, want: usize, what: &str) -> Result<(), LcFail> {
    if have != want {
        return Err(LcFail(
            LcStatus::DimensionMismatch,
            format!("{what} has room for {have} values, needs {want}"),
        ));
    }
    Ok(())
}

fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), LcFail> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Solves the `n x n` assignment problem for `cost`.
///
/// # Safety
/// `cost` must point to `n * n` doubles and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn lc_assignment_solve(cost: *const f64, n: usize, out: *mut *mut LcMatching) -> LcStatus {
    guard(|| {
        let c = slice(cost, n * n, "cost")?;
        let c = CostMatrix::new(Matrix::from_vec(n, n, c.to_vec())?)?;
        boxed(out, LcMatching(solve_assignment(&c)?))
    })
}

/// # Safety
/// `h` must be a live handle from [`lc_assignment_solve`].
#[no_mangle]
pub unsafe extern "C" fn lc_matching_z_star(h: *const LcMatching) -> f64 {
    h.as_ref().map_or(f64::NAN, |m| m.0.z_star)
}

/// # Safety
/// `h` must be a live handle from [`lc_assignment_solve`].
#[no_mangle]
pub unsafe extern "C" fn lc_matching_unique(h: *const LcMatching) -> bool {
    h.as_ref().is_some_and(|m| m.0.unique)
}

/// Writes `perm` (`len` must equal `n`).
///
/// # Safety
/// `h` must be a live handle and `perm` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn lc_matching_perm(h: *const LcMatching, perm: *mut usize, len: usize) -> LcStatus {
    guard(|| {
        let m = h.as_ref().ok_or_else(|| null("handle"))?;
        check_len(len, m.0.perm.len(), "perm")?;
        slice_mut(perm, len, "perm")?.copy_from_slice(&m.0.perm);
        Ok(())
    })
}

/// Writes the row and column duals (`len` must equal `n` for each).
///
/// # Safety
/// `h` must be a live handle; `u` and `v` must each have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn lc_matching_duals(h: *const LcMatching, u: *mut f64, v: *mut f64, len: usize) -> LcStatus {
    guard(|| {
        let m = h.as_ref().ok_or_else(|| null("handle"))?;
        check_len(len, m.0.duals_u.len(), "duals")?;
        slice_mut(u, len, "u")?.copy_from_slice(&m.0.duals_u);
        slice_mut(v, len, "v")?.copy_from_slice(&m.0.duals_v);
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`lc_assignment_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_matching_free(h: *mut LcMatching) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Minimum-cost alignment over a `tp x tt` match-cost grid with gap scale `gamma > 1`.
///
/// # Safety
/// `match_costs` must point to `tp * tt` doubles and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn lc_gsa_solve(
    match_costs: *const f64,
    tp: usize,
    tt: usize,
    gamma: f64,
    out: *mut *mut LcAlignment,
) -> LcStatus {
    guard(|| {
        let m = slice(match_costs, tp * tt, "match_costs")?;
        let grid = AlignGrid::new(Matrix::from_vec(tp, tt, m.to_vec())?, gamma)?;
        let result = solve_gsa(&grid);
        let gradient = gsa_gengrad(&result, &grid);
        boxed(out, LcAlignment { result, gradient })
    })
}

/// # Safety
/// `h` must be a live handle from [`lc_gsa_solve`].
#[no_mangle]
pub unsafe extern "C" fn lc_alignment_z_star(h: *const LcAlignment) -> f64 {
    h.as_ref().map_or(f64::NAN, |a| a.result.z_star)
}

/// # Safety
/// `h` must be a live handle from [`lc_gsa_solve`].
#[no_mangle]
pub unsafe extern "C" fn lc_alignment_unique(h: *const LcAlignment) -> bool {
    h.as_ref().is_some_and(|a| a.result.unique)
}

/// Writes the `tp x tt` gradient of `z*` w.r.t. the match costs.
///
/// # Safety
/// `h` must be a live handle; `grad` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn lc_alignment_gradient(h: *const LcAlignment, grad: *mut f64, len: usize) -> LcStatus {
    guard(|| {
        let a = h.as_ref().ok_or_else(|| null("handle"))?;
        check_len(len, a.gradient.as_slice().len(), "grad")?;
        slice_mut(grad, len, "grad")?.copy_from_slice(a.gradient.as_slice());
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`lc_gsa_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_alignment_free(h: *mut LcAlignment) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Solves `min c.u  s.t.  A u = b, u >= 0` with `A` of shape `m x p`.
///
/// # Safety
/// `c` must hold `p`, `a` `m * p` and `b` `m` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lc_lp_solve(
    c: *const f64,
    p: usize,
    a: *const f64,
    m: usize,
    b: *const f64,
    out: *mut *mut LcLp,
) -> LcStatus {
    guard(|| {
        let spec = LpSpec::new(
            slice(c, p, "c")?.to_vec(),
            Matrix::from_vec(m, p, slice(a, m * p, "A")?.to_vec())?,
            slice(b, m, "b")?.to_vec(),
        )?;
        boxed(out, LcLp(solve_lp(&spec)?))
    })
}

/// # Safety
/// `h` must be a live handle from [`lc_lp_solve`].
#[no_mangle]
pub unsafe extern "C" fn lc_lp_z_star(h: *const LcLp) -> f64 {
    h.as_ref().map_or(f64::NAN, |l| l.0.z_star)
}

/// # Safety
/// `h` must be a live handle from [`lc_lp_solve`].
#[no_mangle]
pub unsafe extern "C" fn lc_lp_unique(h: *const LcLp) -> bool {
    h.as_ref().is_some_and(|l| l.0.unique)
}

unsafe fn lp_vector(h: *const LcLp, pick: fn(&SolverOutcome) -> Option<&Vec<f64>>, out: *mut f64, len: usize, what: &'static str) -> LcStatus {
    guard(|| {
        let l = h.as_ref().ok_or_else(|| null("handle"))?;
        let v = pick(&l.0).ok_or(Error::MissingWitness(what))?;
        check_len(len, v.len(), what)?;
        slice_mut(out, len, what)?.copy_from_slice(v);
        Ok(())
    })
}

/// Writes the primal solution `u*` (gradient w.r.t. `c`).
///
/// # Safety
/// `h` must be a live handle; `u` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn lc_lp_primal(h: *const LcLp, u: *mut f64, len: usize) -> LcStatus {
    lp_vector(h, |o| o.u_star.as_ref(), u, len, "primal solution")
}

/// Writes the dual solution `v*` (gradient w.r.t. `b`).
///
/// # Safety
/// `h` must be a live handle; `v` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn lc_lp_dual(h: *const LcLp, v: *mut f64, len: usize) -> LcStatus {
    lp_vector(h, |o| o.v_star.as_ref(), v, len, "dual solution")
}

/// # Safety
/// `h` must be null or a handle from [`lc_lp_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_lp_free(h: *mut LcLp) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Bag matching loss for `b x d` log-probabilities and `b` labels; writes the
/// loss and its `b x d` gradient.
///
/// # Safety
/// `logp` must hold `b * d` doubles, `labels` `b` values, `grad` room for `b * d`.
#[no_mangle]
pub unsafe extern "C" fn lc_matching_loss(
    logp: *const f64,
    b: usize,
    d: usize,
    labels: *const usize,
    loss: *mut f64,
    grad: *mut f64,
) -> LcStatus {
    guard(|| {
        let lp = Matrix::from_vec(b, d, slice(logp, b * d, "logp")?.to_vec())?;
        let r = matching_loss(&lp, slice(labels, b, "labels")?)?;
        *loss.as_mut().ok_or_else(|| null("loss"))? = r.loss;
        slice_mut(grad, b * d, "grad")?.copy_from_slice(r.grad_logp.as_slice());
        Ok(())
    })
}

/// Alignment loss for `tp x d` log-probabilities against `tt` target tokens;
/// writes the loss and its `tp x d` gradient.
///
/// # Safety
/// `logp` must hold `tp * d` doubles, `targets` `tt` values, `grad` room for `tp * d`.
#[no_mangle]
pub unsafe extern "C" fn lc_gsa_loss(
    logp: *const f64,
    tp: usize,
    d: usize,
    targets: *const usize,
    tt: usize,
    gamma: f64,
    loss: *mut f64,
    grad: *mut f64,
) -> LcStatus {
    guard(|| {
        let lp = Matrix::from_vec(tp, d, slice(logp, tp * d, "logp")?.to_vec())?;
        let r = gsa_loss(&lp, slice(targets, tt, "targets")?, gamma)?;
        *loss.as_mut().ok_or_else(|| null("loss"))? = r.loss;
        slice_mut(grad, tp * d, "grad")?.copy_from_slice(r.grad_logp.as_slice());
        Ok(())
    })
}
