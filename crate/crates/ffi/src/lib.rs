//! C ABI over `pba-core`.
//!
//! Every fallible function returns a [`PbaStatus`]; on failure the message is
//! available from [`pba_last_error_message`] on the same thread. Matrices are
//! row-major. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use pba_core::bayes_linear::{adjust, BeliefSpec, JointSpec};
use pba_core::cli::{cmd_run_pba, RunConfig, RunOptions};
use pba_core::emulator::{fit_emulator, BasisSpec, CorrelationFamily, CorrelationSpec, EmulatorPosterior};
use pba_core::engine::{posterior_belief_assessment, MomentEstimates, PbaResult};
use pba_core::exchangeability::GVector;
use pba_core::PbaError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Specification = 3,
    Degenerate = 4,
    Estimation = 5,
    Emulator = 6,
    Calibration = 7,
    Config = 8,
    Io = 9,
    Panic = 10,
}

impl From<&PbaError> for PbaStatus {
    fn from(e: &PbaError) -> Self {
        match e.root() {
            PbaError::Argument(_) => PbaStatus::InvalidArgument,
            PbaError::Specification { .. } => PbaStatus::Specification,
            PbaError::Degenerate(_) => PbaStatus::Degenerate,
            PbaError::Estimation(_) => PbaStatus::Estimation,
            PbaError::Policy(_) | PbaError::Collinearity { .. } | PbaError::Conditioning(_) | PbaError::Fit(_) => {
                PbaStatus::Emulator
            }
            PbaError::Initialization(_) | PbaError::Mixing(_) => PbaStatus::Calibration,
            PbaError::Config(_) => PbaStatus::Config,
            PbaError::Io { .. } | PbaError::Artifact { .. } => PbaStatus::Io,
            PbaError::Stage { .. } => unreachable!("root looks through stages"),
        }
    }
}

/// Correlation family selector for [`pba_emulator_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbaCorrelation {
    /// Uses the `exponent` argument, in (0, 2].
    PowerExponential = 0,
    Matern32 = 1,
    Matern52 = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbaBasis {
    Constant = 0,
    /// Constant plus one linear term per input.
    Linear = 1,
}

/// Fitted Gaussian-process emulator.
pub struct PbaEmulator(EmulatorPosterior);

/// Result of a posterior belief assessment.
pub struct PbaAssessment(PbaResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PbaStatus, String);

impl From<PbaError> for Failure {
    fn from(e: PbaError) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PbaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PbaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PbaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PbaStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller promises `len` readable values.
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn vector(p: *const f64, len: usize, what: &str) -> Result<DVector<f64>, Failure> {
    Ok(DVector::from_column_slice(slice(p, len, what)?))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, Failure> {
    Ok(DMatrix::from_row_slice(rows, cols, slice(p, rows * cols, what)?))
}

unsafe fn write_out(src: impl Iterator<Item = f64>, dst: *mut f64) {
    for (i, v) in src.enumerate() {
        *dst.add(i) = v;
    }
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// Message of the last failure on this thread, or null if none. The pointer is
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pba_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Bayes linear adjustment of `B` (dimension `nb`) by data `D` (dimension `nd`).
///
/// `var_b` is `nb x nb`, `var_d` is `nd x nd` and `cov_bd` is `nb x nd`.
/// Writes `nb` values to `out_mean` and, when `out_variance` is not null,
/// `nb x nb` values to `out_variance`.
///
/// # Safety
/// Every input pointer must reference the stated number of readable values and
/// the outputs the stated number of writable values.
#[no_mangle]
pub unsafe extern "C" fn pba_adjust(
    nb: usize,
    nd: usize,
    e_b: *const f64,
    var_b: *const f64,
    e_d: *const f64,
    var_d: *const f64,
    cov_bd: *const f64,
    observed_d: *const f64,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> PbaStatus {
    guard(|| {
        if out_mean.is_null() {
            return Err(null("out_mean"));
        }
        let joint = JointSpec::new(
            BeliefSpec::new(vector(e_b, nb, "e_b")?, matrix(var_b, nb, nb, "var_b")?)?,
            BeliefSpec::new(vector(e_d, nd, "e_d")?, matrix(var_d, nd, nd, "var_d")?)?,
            matrix(cov_bd, nb, nd, "cov_bd")?,
        )?;
        let adj = adjust(&joint, &vector(observed_d, nd, "observed_d")?)?;
        write_out(adj.adjusted_mean.iter().copied(), out_mean);
        if !out_variance.is_null() {
            write_out(row_major(&adj.adjusted_variance), out_variance);
        }
        Ok(())
    })
}

/// Fits an emulator to `n` runs at `r`-dimensional inputs in `[0, 1]`
/// (`points` is `n x r`) with the correlation hyperparameters given.
///
/// # Safety
/// `points` must hold `n * r` values, `y` `n` values and `kappa` `r` values.
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pba_emulator_fit(
    n: usize,
    r: usize,
    points: *const f64,
    y: *const f64,
    basis: PbaBasis,
    family: PbaCorrelation,
    exponent: f64,
    kappa: *const f64,
    nugget: f64,
    out: *mut *mut PbaEmulator,
) -> PbaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let family = match family {
            PbaCorrelation::PowerExponential => CorrelationFamily::PowerExponential { p: exponent },
            PbaCorrelation::Matern32 => CorrelationFamily::Matern32,
            PbaCorrelation::Matern52 => CorrelationFamily::Matern52,
        };
        let basis = match basis {
            PbaBasis::Constant => BasisSpec::constant(r),
            PbaBasis::Linear => BasisSpec::linear(r),
        };
        let corr = CorrelationSpec::new(family, slice(kappa, r, "kappa")?.to_vec(), nugget)?;
        let fit = fit_emulator(&matrix(points, n, r, "points")?, &vector(y, n, "y")?, &basis, &corr)?;
        *out = Box::into_raw(Box::new(PbaEmulator(fit)));
        Ok(())
    })
}

/// Predictive mean and variance at one input `x` of the emulator's dimension.
///
/// # Safety
/// `handle` must come from [`pba_emulator_fit`]; `x` must hold as many values
/// as the fitted inputs have dimensions.
#[no_mangle]
pub unsafe extern "C" fn pba_emulator_predict(
    handle: *const PbaEmulator,
    x: *const f64,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> PbaStatus {
    guard(|| {
        let em = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out_mean.is_null() || out_variance.is_null() {
            return Err(null("output"));
        }
        let (m, v) = em.0.predict(slice(x, em.0.dims(), "x")?);
        *out_mean = m;
        *out_variance = v;
        Ok(())
    })
}

/// Input dimension of a fitted emulator, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or come from [`pba_emulator_fit`].
#[no_mangle]
pub unsafe extern "C" fn pba_emulator_dims(handle: *const PbaEmulator) -> usize {
    handle.as_ref().map_or(0, |e| e.0.dims())
}

/// # Safety
/// `handle` must be null or come from [`pba_emulator_fit`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pba_emulator_free(handle: *mut PbaEmulator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Posterior belief assessment from already estimated moments of `(y, G)`.
///
/// `y` has dimension `ny`; `G` has `ng` entries made of `ng / ny` blocks, the
/// baseline analysis first. `var_y` is `ny x ny`, `var_g` is `ng x ng`,
/// `cov_y_g` is `ny x ng`; `observed_g` holds `ng` values.
///
/// # Safety
/// Every pointer must reference the stated number of readable values and `out`
/// must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_from_moments(
    ny: usize,
    ng: usize,
    e_y: *const f64,
    var_y: *const f64,
    e_g: *const f64,
    var_g: *const f64,
    cov_y_g: *const f64,
    observed_g: *const f64,
    replicates: usize,
    out: *mut *mut PbaAssessment,
) -> PbaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if ny == 0 || ng == 0 || ng % ny != 0 {
            return Err(Failure(PbaStatus::InvalidArgument, format!("ng = {ng} is not a positive multiple of ny = {ny}")));
        }
        let moments = MomentEstimates {
            e_y: vector(e_y, ny, "e_y")?,
            var_y: matrix(var_y, ny, ny, "var_y")?,
            e_g: vector(e_g, ng, "e_g")?,
            var_g: matrix(var_g, ng, ng, "var_g")?,
            cov_y_g: matrix(cov_y_g, ny, ng, "cov_y_g")?,
            e_g_se: DVector::zeros(ng),
            cov_y_g_se: DMatrix::zeros(ny, ng),
            replicates,
            degenerate: false,
        };
        let g = slice(observed_g, ng, "observed_g")?;
        let g = GVector { components: g.chunks(ny).map(DVector::from_column_slice).collect() };
        let result = posterior_belief_assessment(&moments, &g)?;
        *out = Box::into_raw(Box::new(PbaAssessment(result)));
        Ok(())
    })
}

/// Dimension of `y` in an assessment, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live assessment handle.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_y_dim(handle: *const PbaAssessment) -> usize {
    handle.as_ref().map_or(0, |a| a.0.e_gy.len())
}

/// Number of entries of `G` in an assessment, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live assessment handle.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_g_dim(handle: *const PbaAssessment) -> usize {
    handle.as_ref().map_or(0, |a| a.0.observed_g.len())
}

unsafe fn read_assessment(handle: *const PbaAssessment, out: *mut f64, f: impl FnOnce(&PbaResult) -> Vec<f64>) -> PbaStatus {
    guard(|| {
        let a = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("output"));
        }
        write_out(f(&a.0).into_iter(), out);
        Ok(())
    })
}

/// Writes `E_G[y]` (`ny` values).
///
/// # Safety
/// `handle` must be a live assessment handle and `out` hold `ny` writable values.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_e_gy(handle: *const PbaAssessment, out: *mut f64) -> PbaStatus {
    read_assessment(handle, out, |r| r.e_gy.clone())
}

/// Writes the adjusted variance (`ny x ny`).
///
/// # Safety
/// `handle` must be a live assessment handle and `out` hold `ny * ny` writable values.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_adjusted_variance(handle: *const PbaAssessment, out: *mut f64) -> PbaStatus {
    read_assessment(handle, out, |r| row_major(&r.adjusted_variance).collect())
}

/// Writes the coefficients on `G` (`ny x ng`).
///
/// # Safety
/// `handle` must be a live assessment handle and `out` hold `ny * ng` writable values.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_coefficients(handle: *const PbaAssessment, out: *mut f64) -> PbaStatus {
    read_assessment(handle, out, |r| row_major(&r.coefficients).collect())
}

/// Writes the intercept (`ny` values).
///
/// # Safety
/// `handle` must be a live assessment handle and `out` hold `ny` writable values.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_intercept(handle: *const PbaAssessment, out: *mut f64) -> PbaStatus {
    read_assessment(handle, out, |r| r.intercept.clone())
}

/// Writes the resolution lower bound (`ny` values in `[0, 1]`).
///
/// # Safety
/// `handle` must be a live assessment handle and `out` hold `ny` writable values.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_resolution_lower_bound(handle: *const PbaAssessment, out: *mut f64) -> PbaStatus {
    read_assessment(handle, out, |r| r.resolution_lower_bound.clone())
}

/// # Safety
/// `handle` must be null or a live assessment handle, not freed twice.
#[no_mangle]
pub unsafe extern "C" fn pba_assessment_free(handle: *mut PbaAssessment) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Runs the full assessment described by a TOML config, as `pba run-pba`
/// does. When `output_dir` is not null it replaces the configured directory.
/// On success `*out` (if not null) receives the assessment handle.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `output_dir` null or a
/// NUL-terminated string; `out` null or a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pba_run_config(
    config_path: *const c_char,
    output_dir: *const c_char,
    out: *mut *mut PbaAssessment,
) -> PbaStatus {
    guard(|| {
        if !out.is_null() {
            *out = ptr::null_mut();
        }
        if config_path.is_null() {
            return Err(null("config_path"));
        }
        let text = |p: *const c_char| {
            CStr::from_ptr(p)
                .to_str()
                .map(PathBuf::from)
                .map_err(|_| Failure(PbaStatus::InvalidArgument, "path is not UTF-8".into()))
        };
        let mut cfg = RunConfig::load(&text(config_path)?, &[])?;
        if !output_dir.is_null() {
            cfg.paths.output_dir = text(output_dir)?;
        }
        let outcome = cmd_run_pba(&cfg, &RunOptions::default())?;
        let result = outcome
            .result
            .ok_or_else(|| Failure(PbaStatus::Estimation, "run finished without a result".into()))?;
        if !out.is_null() {
            *out = Box::into_raw(Box::new(PbaAssessment(result)));
        }
        Ok(())
    })
}
