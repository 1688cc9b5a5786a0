//! C ABI over the sccn library. Every entry point returns an [`SccnStatus`];
//! results come back through out-pointers and handles are freed by the
//! matching `*_free` function. The message of the last failure on the
//! calling thread is available from [`sccn_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sccn::baselines::bh_fdr;
use sccn::config::DetectConfig;
use sccn::intra::detect_within;
use sccn::mdl::mdl_statistic;
use sccn::model::{DetectionReport, InferenceMatrix, Matrix, Voxel, VoxelGrid};
use sccn::pipeline::detect_matrix;
use sccn::spatial::build_infrastructure;
use sccn::SccnError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SccnStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numeric = 3,
    InvalidArgument = 4,
    Panic = 5,
    Io = 6,
}

/// Detection configuration.
pub struct SccnConfig(DetectConfig);

/// Voxel coordinates of one region.
pub struct SccnGrid(VoxelGrid);

/// Result of a detection run.
pub struct SccnReport {
    report: DetectionReport,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &SccnError) -> SccnStatus {
    match e.root() {
        SccnError::InvalidArgument(_) => SccnStatus::InvalidArgument,
        SccnError::Io { .. } => SccnStatus::Io,
        _ => match e.exit_code() {
            2 => SccnStatus::Validation,
            3 => SccnStatus::Numeric,
            _ => SccnStatus::InvalidArgument,
        },
    }
}

struct Fail(SccnStatus, String);

impl From<SccnError> for Fail {
    fn from(e: SccnError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SccnStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SccnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SccnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SccnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SccnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(SccnStatus::InvalidArgument, format!("{what} is too large")))?;
    Ok(Matrix::from_vec(rows, cols, slice_arg(p, len, what)?.to_vec())?)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sccn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sccn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a configuration with default values.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sccn_config_new(out: *mut *mut SccnConfig) -> SccnStatus {
    guard(|| put(out, Box::into_raw(Box::new(SccnConfig(DetectConfig::default()))), "out"))
}

/// Sets one `key = value` entry, with the keys of the config file format.
///
/// # Safety
/// `cfg` must come from [`sccn_config_new`]; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sccn_config_set(cfg: *mut SccnConfig, key: *const c_char, value: *const c_char) -> SccnStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let (key, value) = (str_arg(key, "key")?, str_arg(value, "value")?);
        let mut next = cfg.0.clone();
        next.set(key, value)?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or come from [`sccn_config_new`], freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sccn_config_free(cfg: *mut SccnConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Region from `n` voxels: ids in `ids`, coordinates as `n` `(x, y, z)`
/// triples in `xyz`. Voxels are sorted by id and renumbered `0..n`.
///
/// # Safety
/// `region` must be NUL-terminated; `ids` must hold `n` and `xyz` `3 n`
/// values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_grid_new(
    region: *const c_char,
    ids: *const u32,
    xyz: *const i32,
    n: usize,
    out: *mut *mut SccnGrid,
) -> SccnStatus {
    guard(|| {
        let region = str_arg(region, "region")?;
        let ids = slice_arg(ids, n, "ids")?;
        let len = n
            .checked_mul(3)
            .ok_or_else(|| Fail(SccnStatus::InvalidArgument, "too many voxels".into()))?;
        let xyz = slice_arg(xyz, len, "xyz")?;
        let voxels = ids
            .iter()
            .zip(xyz.chunks_exact(3))
            .map(|(&id, c)| Voxel {
                id,
                x: c[0],
                y: c[1],
                z: c[2],
            })
            .collect();
        let grid = VoxelGrid::new(region, voxels)?;
        put(out, Box::into_raw(Box::new(SccnGrid(grid))), "out")
    })
}

/// Full `nx x ny x nz` box, ids in x-fastest order.
///
/// # Safety
/// `region` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_grid_box(
    region: *const c_char,
    nx: usize,
    ny: usize,
    nz: usize,
    out: *mut *mut SccnGrid,
) -> SccnStatus {
    guard(|| {
        let region = str_arg(region, "region")?;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Fail(SccnStatus::InvalidArgument, "box dimensions must be positive".into()));
        }
        put(out, Box::into_raw(Box::new(SccnGrid(VoxelGrid::box_grid(region, [nx, ny, nz])))), "out")
    })
}

/// # Safety
/// `grid` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_grid_len(grid: *const SccnGrid, out: *mut usize) -> SccnStatus {
    guard(|| put(out, handle(grid, "grid")?.0.len(), "out"))
}

/// # Safety
/// `grid` must be null or come from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sccn_grid_free(grid: *mut SccnGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

fn finish(report: DetectionReport) -> Result<*mut SccnReport, Fail> {
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Fail(SccnStatus::InvalidArgument, format!("report serialization: {e}")))?;
    let json = CString::new(json).map_err(|e| Fail(SccnStatus::InvalidArgument, e.to_string()))?;
    Ok(Box::into_raw(Box::new(SccnReport { report, json })))
}

/// Bipartite detection on a precomputed screened inference matrix `w` and
/// edge statistics `z`, both `n x m` row-major with `n` the size of `a` and
/// `m` the size of `b`. The null shuffles edges.
///
/// # Safety
/// `w` and `z` must hold `n m` values; handles must come from this library;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_detect_matrix(
    w: *const f64,
    z: *const f64,
    n: usize,
    m: usize,
    a: *const SccnGrid,
    b: *const SccnGrid,
    cfg: *const SccnConfig,
    out: *mut *mut SccnReport,
) -> SccnStatus {
    guard(|| {
        let cfg = &handle(cfg, "cfg")?.0;
        let (ga, gb) = (&handle(a, "a")?.0, &handle(b, "b")?.0);
        let w = InferenceMatrix::new(matrix_arg(w, n, m, "w")?, cfg.regression.screen_p, matrix_arg(z, n, m, "z")?)?;
        let sa = build_infrastructure(ga, cfg.epsilon_a)?;
        let sb = build_infrastructure(gb, cfg.epsilon_b)?;
        let det = detect_matrix(w, &sa, &sb, cfg)?;
        put(out, finish(det.report)?, "out")
    })
}

/// Single-region detection on a symmetric `n x n` matrix with a zero
/// diagonal.
///
/// # Safety
/// As for [`sccn_detect_matrix`] with `m = n`.
#[no_mangle]
pub unsafe extern "C" fn sccn_detect_within(
    w: *const f64,
    z: *const f64,
    n: usize,
    grid: *const SccnGrid,
    cfg: *const SccnConfig,
    out: *mut *mut SccnReport,
) -> SccnStatus {
    guard(|| {
        let cfg = &handle(cfg, "cfg")?.0;
        let g = &handle(grid, "grid")?.0;
        let w = InferenceMatrix::new(matrix_arg(w, n, n, "w")?, cfg.regression.screen_p, matrix_arg(z, n, n, "z")?)?;
        let s = build_infrastructure(g, cfg.epsilon_a)?;
        let det = detect_within(w, &s, cfg)?;
        put(out, finish(det.report)?, "out")
    })
}

/// Number of sub-areas on each side.
///
/// # Safety
/// `report` must come from this library; `c` and `d` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_report_shape(report: *const SccnReport, c: *mut usize, d: *mut usize) -> SccnStatus {
    guard(|| {
        let r = &handle(report, "report")?.report;
        put(c, r.c_hat, "c")?;
        put(d, r.d_hat, "d")
    })
}

/// Number of significant sub-area pairs.
///
/// # Safety
/// `report` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_report_significant_count(report: *const SccnReport, out: *mut usize) -> SccnStatus {
    guard(|| put(out, handle(report, "report")?.report.significant.len(), "out"))
}

/// Copies the labels of side `side` (0 for the rows, 1 for the columns)
/// into `labels`, which must have exactly as many slots as that side has
/// voxels.
///
/// # Safety
/// `report` must come from this library; `labels` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sccn_report_labels(
    report: *const SccnReport,
    side: u32,
    labels: *mut u32,
    len: usize,
) -> SccnStatus {
    guard(|| {
        let r = &handle(report, "report")?.report;
        let src = match side {
            0 => &r.partition.u_labels,
            1 => &r.partition.v_labels,
            _ => return Err(Fail(SccnStatus::InvalidArgument, format!("side {side} is not 0 or 1"))),
        };
        if len != src.len() {
            return Err(Fail(
                SccnStatus::InvalidArgument,
                format!("label buffer holds {len}, side has {}", src.len()),
            ));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let dst = std::slice::from_raw_parts_mut(labels, len);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s as u32;
        }
        Ok(())
    })
}

/// The report as JSON. The string is owned by the report.
///
/// # Safety
/// `report` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_report_json(report: *const SccnReport, out: *mut *const c_char) -> SccnStatus {
    guard(|| put(out, handle(report, "report")?.json.as_ptr(), "out"))
}

/// # Safety
/// `report` must be null or come from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sccn_report_free(report: *mut SccnReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Benjamini-Hochberg step-up at level `q`; `mask[k]` is set to 1 for
/// rejected hypotheses and 0 otherwise.
///
/// # Safety
/// `p` and `mask` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sccn_bh_fdr(p: *const f64, len: usize, q: f64, mask: *mut u8) -> SccnStatus {
    guard(|| {
        let p = slice_arg(p, len, "p")?;
        let rejected = bh_fdr(p, q)?;
        if len > 0 && mask.is_null() {
            return Err(null("mask"));
        }
        for (k, r) in rejected.into_iter().enumerate() {
            *mask.add(k) = r as u8;
        }
        Ok(())
    })
}

/// Description length of the block `u x v` of the `n x m` statistic
/// matrix `z`, with additive entropy constant `c_mdl`.
///
/// # Safety
/// `u`, `v` and `z` must hold `nu`, `nv` and `n m` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sccn_mdl_statistic(
    u: *const usize,
    nu: usize,
    v: *const usize,
    nv: usize,
    z: *const f64,
    n: usize,
    m: usize,
    c_mdl: f64,
    out: *mut f64,
) -> SccnStatus {
    guard(|| {
        let z = matrix_arg(z, n, m, "z")?;
        let value = mdl_statistic(slice_arg(u, nu, "u")?, slice_arg(v, nv, "v")?, &z, c_mdl)?;
        put(out, value, "out")
    })
}
