//! C ABI over `odpp`.
//!
//! Every fallible function returns an [`OdppStatus`]; on failure the message is
//! kept per thread and can be copied out with [`odpp_last_error_message`].
//! Objects cross the boundary as opaque handles that the caller must release
//! with the matching `*_free` function. Panics are caught and reported as
//! [`OdppStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use odpp::grid::{BBox, CovariateTable, GridSpec, PairedPattern, Point, PointPattern};
use odpp::mcmc::{ChainConfig, PosteriorChain};
use odpp::ppm::{fit_intensity, IntensityKind, IntensityModelSpec};
use odpp::recovery::{bicrps, cond_logdensity, fit_conditional_constant, sigma_from_psi, KernelPriors, Sym2};
use odpp::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdppStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Dimension = 5,
    Numerical = 6,
    Panic = 7,
}

/// Intensity model family for [`odpp_fit_intensity`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdppIntensityKind {
    Nhpp = 0,
    Lgcp = 1,
}

/// Opaque analysis grid.
pub struct OdppGrid {
    inner: GridSpec,
}

/// Opaque posterior sample.
pub struct OdppChain {
    inner: PosteriorChain,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> OdppStatus {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => OdppStatus::InvalidArgument,
        Error::Io { .. } => OdppStatus::Io,
        Error::Data(_) | Error::Assignment { .. } | Error::Geometry(_) | Error::Covariate(_) => OdppStatus::Data,
        Error::Dimension(_) => OdppStatus::Dimension,
        _ => OdppStatus::Numerical,
    }
}

/// Run `f`, translating errors and panics into a status and the thread's last error.
fn guard<F>(f: F) -> OdppStatus
where
    F: FnOnce() -> Result<(), FfiError>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            OdppStatus::Ok
        }
        Ok(Err(FfiError::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            OdppStatus::NullPointer
        }
        Ok(Err(FfiError::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OdppStatus::Panic
        }
    }
}

enum FfiError {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for FfiError {
    fn from(e: Error) -> Self {
        FfiError::Lib(e)
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), FfiError> {
    if p.is_null() {
        Err(FfiError::Null(what))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null only when `n == 0`, otherwise valid for `n` reads.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], FfiError> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `xy` must hold `2n` doubles `x0, y0, x1, y1, ...` (or be null with `n == 0`).
unsafe fn points(xy: *const f64, n: usize, what: &'static str) -> Result<Vec<Point>, FfiError> {
    let v = slice(xy, 2 * n, what)?;
    Ok(v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
}

/// Copy `s` NUL-terminated into `buf` (truncating); returns the length `s` needs including NUL.
///
/// # Safety
/// `buf` must be valid for `len` writes or null.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize) -> usize {
    let bytes = s.as_bytes();
    if !buf.is_null() && len > 0 {
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
    }
    bytes.len() + 1
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn odpp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the calling thread's last error message into `buf`.
///
/// Returns the buffer size the full message needs, including the NUL; 1 means
/// no error is recorded. Pass a null `buf` to query the size.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn odpp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_out(&e.borrow(), buf, len))
}

/// Regular `nx × ny` grid over `[xmin, xmax] × [ymin, ymax]`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free with [`odpp_grid_free`].
#[no_mangle]
pub unsafe extern "C" fn odpp_grid_regular(
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    nx: usize,
    ny: usize,
    out: *mut *mut OdppGrid,
) -> OdppStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = GridSpec::regular(BBox::new(xmin, xmax, ymin, ymax)?, nx, ny)?;
        *out = Box::into_raw(Box::new(OdppGrid { inner }));
        Ok(())
    })
}

/// Number of cells, 0 for a null handle.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn odpp_grid_len(grid: *const OdppGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.len())
}

/// Cell containing `(x, y)`; `Data` status if it lies outside the grid.
///
/// # Safety
/// `grid` must be a live handle and `cell` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn odpp_grid_locate(grid: *const OdppGrid, x: f64, y: f64, cell: *mut usize) -> OdppStatus {
    guard(|| {
        non_null(grid, "grid")?;
        non_null(cell, "cell")?;
        let p = Point::new(x, y);
        let k = (*grid)
            .inner
            .locate(&p)
            .ok_or(Error::Assignment { index: 0, x, y })?;
        *cell = k;
        Ok(())
    })
}

/// # Safety
/// `grid` must come from [`odpp_grid_regular`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn odpp_grid_free(grid: *mut OdppGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Fit an NHPP or LGCP intensity to `n` points `xy` on `grid`.
///
/// `covariates` is a row-major `K × p` matrix (null when `p == 0`); the
/// intercept is added automatically and columns are named `x0, x1, ...` in the
/// chain (`beta_x0`, ...). The chain keeps `keep` draws after `burn_in`.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` receives a handle to
/// free with [`odpp_chain_free`].
#[no_mangle]
pub unsafe extern "C" fn odpp_fit_intensity(
    grid: *const OdppGrid,
    xy: *const f64,
    n: usize,
    covariates: *const f64,
    p: usize,
    kind: OdppIntensityKind,
    burn_in: usize,
    keep: usize,
    seed: u64,
    out: *mut *mut OdppChain,
) -> OdppStatus {
    guard(|| {
        non_null(grid, "grid")?;
        non_null(out, "out")?;
        let grid = &(*grid).inner;
        let pattern = PointPattern::new(points(xy, n, "xy")?, "ffi")?;
        let k = grid.len();
        let (table, names) = if p == 0 {
            (CovariateTable::intercept_only(k), vec![])
        } else {
            let vals = slice(covariates, k * p, "covariates")?;
            let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
            let table = CovariateTable::new(names.clone(), DMatrix::from_row_slice(k, p, vals))?;
            (table, names)
        };
        let kind = match kind {
            OdppIntensityKind::Nhpp => IntensityKind::Nhpp,
            OdppIntensityKind::Lgcp => IntensityKind::Lgcp,
        };
        let spec = IntensityModelSpec::new(kind, names);
        let inner = fit_intensity(&pattern, grid, &table, &spec, &ChainConfig::new(burn_in, keep, seed))?;
        *out = Box::into_raw(Box::new(OdppChain { inner }));
        Ok(())
    })
}

/// Fit the constant recovery kernel `(sigma1, sigma2, rho)` to `n` theft/recovery pairs.
///
/// # Safety
/// `thefts` and `recoveries` must each hold `2n` doubles; `out` receives a
/// handle to free with [`odpp_chain_free`].
#[no_mangle]
pub unsafe extern "C" fn odpp_fit_conditional_constant(
    thefts: *const f64,
    recoveries: *const f64,
    n: usize,
    burn_in: usize,
    keep: usize,
    seed: u64,
    out: *mut *mut OdppChain,
) -> OdppStatus {
    guard(|| {
        non_null(out, "out")?;
        let pairs = PairedPattern::complete(points(thefts, n, "thefts")?, points(recoveries, n, "recoveries")?)?;
        let inner = fit_conditional_constant(&pairs, &KernelPriors::default(), &ChainConfig::new(burn_in, keep, seed))?;
        *out = Box::into_raw(Box::new(OdppChain { inner }));
        Ok(())
    })
}

/// Number of kept draws, 0 for a null handle.
///
/// # Safety
/// `chain` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn odpp_chain_len(chain: *const OdppChain) -> usize {
    chain.as_ref().map_or(0, |c| c.inner.len())
}

/// Number of scalar parameters (the last one is the data log-likelihood).
///
/// # Safety
/// `chain` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn odpp_chain_param_count(chain: *const OdppChain) -> usize {
    chain.as_ref().map_or(0, |c| c.inner.param_names.len())
}

/// Copy the name of parameter `index` into `buf`; returns the size it needs
/// (including NUL), or 0 if `chain` is null or `index` out of range.
///
/// # Safety
/// `chain` must be a live handle or null; `buf` valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn odpp_chain_param_name(
    chain: *const OdppChain,
    index: usize,
    buf: *mut c_char,
    len: usize,
) -> usize {
    match chain.as_ref().and_then(|c| c.inner.param_names.get(index)) {
        Some(name) => copy_out(name, buf, len),
        None => 0,
    }
}

/// Trace of the parameter called `name`, written to `out` (`len` ≥ chain length).
///
/// # Safety
/// `chain` must be a live handle, `name` a NUL-terminated string, and `out`
/// valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn odpp_chain_trace(
    chain: *const OdppChain,
    name: *const c_char,
    out: *mut f64,
    len: usize,
) -> OdppStatus {
    guard(|| {
        non_null(chain, "chain")?;
        non_null(name, "name")?;
        non_null(out, "out")?;
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Error::InvalidArgument("parameter name is not UTF-8".into()))?;
        let c = &(*chain).inner;
        let trace = c
            .param(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))?;
        if len < trace.len() {
            return Err(Error::Dimension(format!("buffer holds {len} values, trace has {}", trace.len())).into());
        }
        ptr::copy_nonoverlapping(trace.as_ptr(), out, trace.len());
        Ok(())
    })
}

/// Posterior mean of the parameter called `name`.
///
/// # Safety
/// `chain` must be a live handle, `name` NUL-terminated, `mean` valid.
#[no_mangle]
pub unsafe extern "C" fn odpp_chain_param_mean(chain: *const OdppChain, name: *const c_char, mean: *mut f64) -> OdppStatus {
    guard(|| {
        non_null(chain, "chain")?;
        non_null(name, "name")?;
        non_null(mean, "mean")?;
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Error::InvalidArgument("parameter name is not UTF-8".into()))?;
        let s = (*chain)
            .inner
            .summary(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter `{name}`")))?;
        *mean = s.mean;
        Ok(())
    })
}

/// # Safety
/// `chain` must come from a fit function and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn odpp_chain_free(chain: *mut OdppChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Log density of a recovery at `(rx, ry)` for a theft at `(tx, ty)` under
/// the kernel `[[sxx, sxy], [sxy, syy]]`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn odpp_cond_logdensity(
    rx: f64,
    ry: f64,
    tx: f64,
    ty: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
    out: *mut f64,
) -> OdppStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = cond_logdensity(&Point::new(rx, ry), &Point::new(tx, ty), &Sym2::new(sxx, sxy, syy))?;
        Ok(())
    })
}

/// Kernel matrix `(xx, xy, yy)` of the spatially varying kernel at `(ψx, ψy)`.
///
/// # Safety
/// `out` must be valid for 3 writes.
#[no_mangle]
pub unsafe extern "C" fn odpp_kernel_sigma(psi_x: f64, psi_y: f64, sigma: f64, a: f64, out: *mut f64) -> OdppStatus {
    guard(|| {
        non_null(out, "out")?;
        if !(sigma > 0.0 && a > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma and A must be positive (got {sigma}, {a})")).into());
        }
        let s = sigma_from_psi(psi_x, psi_y, sigma, a);
        *out = s.xx;
        *out.add(1) = s.xy;
        *out.add(2) = s.yy;
        Ok(())
    })
}

/// Energy score of `n` predictive samples `xy` against the observation `(ox, oy)`.
///
/// # Safety
/// `xy` must hold `2n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn odpp_bicrps(xy: *const f64, n: usize, ox: f64, oy: f64, out: *mut f64) -> OdppStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = bicrps(&points(xy, n, "xy")?, &Point::new(ox, oy));
        Ok(())
    })
}
