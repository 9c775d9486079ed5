//! C ABI for the solver: opaque handles, integer status codes, and a
//! thread-local error message. The committed header lives in
//! `include/gamblet.h`; keep it in sync with the exported symbols.
//!
//! Conventions:
//! * every fallible call returns a `gamblet_status`; `GAMBLET_OK` is 0,
//! * output handles are written through `out` pointers and owned by the
//!   caller, to be released with the matching `_free`,
//! * `gamblet_last_error()` describes the most recent failure on the calling
//!   thread,
//! * panics never cross the boundary; they surface as `GAMBLET_ERR_PANIC`.

use gamblet::fast::LocalizationSchedule;
use gamblet::sparse::mm;
use gamblet::transform::{self, TransformConfig};
use gamblet::{Error, HierarchyOperators, IndexTree, SparseMatrix};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes mirrored in include/gamblet.h.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GambletStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotSpd = 4,
    Solver = 5,
    Io = 6,
    Utf8 = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> GambletStatus {
    match err {
        Error::NotSpd { .. } => GambletStatus::NotSpd,
        Error::Invalid(_) | Error::Capacity(_) | Error::RankDeficient(_) => {
            GambletStatus::InvalidArgument
        }
        Error::Structure(_) => GambletStatus::DimensionMismatch,
        Error::Breakdown { .. } | Error::NotConverged { .. } | Error::LevelSolve { .. } => {
            GambletStatus::Solver
        }
        Error::Io(_) | Error::Parse { .. } | Error::Json(_) => GambletStatus::Io,
    }
}

fn fail(err: Error) -> GambletStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

/// Runs a closure, converting panics into `GAMBLET_ERR_PANIC`.
fn guarded(f: impl FnOnce() -> GambletStatus) -> GambletStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in gamblet".into());
            set_error(&msg);
            GambletStatus::Panic
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, GambletStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(GambletStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        GambletStatus::Utf8
    })
}

/// Opaque sparse matrix handle.
pub struct GambletMatrix {
    inner: SparseMatrix,
}

/// Opaque hierarchy-operator handle (nesting/wavelet matrices plus the tree).
pub struct GambletOps {
    ops: HierarchyOperators,
    tree: IndexTree,
}

/// Opaque handle over the computed per-level operators of a matrix.
pub struct GambletHierarchy {
    hierarchy: transform::GambletHierarchy,
    ops: HierarchyOperators,
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gamblet_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a matrix from CSR arrays (row_offsets has nrows+1 entries; columns
/// must be strictly increasing within each row).
///
/// # Safety
/// The array pointers must reference allocations of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn gamblet_matrix_from_csr(
    nrows: usize,
    ncols: usize,
    row_offsets: *const usize,
    col_indices: *const usize,
    values: *const f64,
    out: *mut *mut GambletMatrix,
) -> GambletStatus {
    guarded(|| {
        if row_offsets.is_null() || col_indices.is_null() || values.is_null() || out.is_null() {
            set_error("null pointer argument");
            return GambletStatus::NullArgument;
        }
        let offsets = std::slice::from_raw_parts(row_offsets, nrows + 1).to_vec();
        let nnz = *offsets.last().unwrap_or(&0);
        let cols = std::slice::from_raw_parts(col_indices, nnz).to_vec();
        let vals = std::slice::from_raw_parts(values, nnz).to_vec();
        match SparseMatrix::from_csr(nrows, ncols, offsets, cols, vals) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(GambletMatrix { inner: m }));
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Reads a Matrix Market coordinate file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gamblet_matrix_read_mm(
    path: *const c_char,
    out: *mut *mut GambletMatrix,
) -> GambletStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return GambletStatus::NullArgument;
        }
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match mm::read_matrix(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(GambletMatrix { inner: m }));
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the matrix as a Matrix Market coordinate file.
///
/// # Safety
/// `m` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gamblet_matrix_write_mm(
    m: *const GambletMatrix,
    path: *const c_char,
) -> GambletStatus {
    guarded(|| {
        let Some(m) = m.as_ref() else {
            set_error("null matrix handle");
            return GambletStatus::NullArgument;
        };
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match mm::write_matrix(path, &m.inner) {
            Ok(()) => GambletStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Number of rows; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gamblet_matrix_nrows(m: *const GambletMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.nrows())
}

/// Number of stored entries; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gamblet_matrix_nnz(m: *const GambletMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.nnz())
}

/// Releases a matrix handle (accepts null).
///
/// # Safety
/// `m` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gamblet_matrix_free(m: *mut GambletMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Standard grid hierarchy: `branch^dim` children per cell, `depth` levels,
/// orthonormal cellular operators.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gamblet_ops_grid(
    dim: usize,
    depth: usize,
    branch: usize,
    out: *mut *mut GambletOps,
) -> GambletStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return GambletStatus::NullArgument;
        }
        let tree = match IndexTree::grid(dim, depth, branch) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        match HierarchyOperators::standard(&tree) {
            Ok(ops) => {
                *out = Box::into_raw(Box::new(GambletOps { ops, tree }));
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads operators saved as `pi_k.mtx` / `w_k.mtx` / `ops.json`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gamblet_ops_load(
    dir: *const c_char,
    out: *mut *mut GambletOps,
) -> GambletStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return GambletStatus::NullArgument;
        }
        let dir = match cstr_arg(dir) {
            Ok(p) => p,
            Err(code) => return code,
        };
        let ops = match HierarchyOperators::load(dir) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
        match IndexTree::from_cellular_ops(&ops) {
            Ok(tree) => {
                *out = Box::into_raw(Box::new(GambletOps { ops, tree }));
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Hierarchy depth; 0 for a null handle.
///
/// # Safety
/// `ops` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gamblet_ops_depth(ops: *const GambletOps) -> usize {
    ops.as_ref().map_or(0, |o| o.ops.depth())
}

/// Number of unknowns the hierarchy covers; 0 for a null handle.
///
/// # Safety
/// `ops` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gamblet_ops_n_dofs(ops: *const GambletOps) -> usize {
    ops.as_ref().map_or(0, |o| o.ops.n_dofs())
}

/// Releases an operator handle (accepts null).
///
/// # Safety
/// `ops` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gamblet_ops_free(ops: *mut GambletOps) {
    if !ops.is_null() {
        drop(Box::from_raw(ops));
    }
}

/// Runs the exact transform of `a` over `ops`.
///
/// # Safety
/// `a` and `ops` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gamblet_build(
    a: *const GambletMatrix,
    ops: *const GambletOps,
    out: *mut *mut GambletHierarchy,
) -> GambletStatus {
    guarded(|| {
        let (Some(a), Some(o)) = (a.as_ref(), ops.as_ref()) else {
            set_error("null handle argument");
            return GambletStatus::NullArgument;
        };
        if out.is_null() {
            set_error("null output pointer");
            return GambletStatus::NullArgument;
        }
        if a.inner.nrows() != o.ops.n_dofs() {
            set_error("matrix size does not match the hierarchy");
            return GambletStatus::DimensionMismatch;
        }
        match transform::gamblet_transform(&a.inner, &o.ops, TransformConfig::default()) {
            Ok(h) => {
                *out = Box::into_raw(Box::new(GambletHierarchy {
                    hierarchy: h,
                    ops: o.ops.clone(),
                }));
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Solves `A u = b` through a built hierarchy; writes `len` entries to `u`.
///
/// # Safety
/// `h` must be a live handle; `b` and `u` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gamblet_solve(
    h: *const GambletHierarchy,
    b: *const f64,
    len: usize,
    u: *mut f64,
) -> GambletStatus {
    guarded(|| {
        let Some(h) = h.as_ref() else {
            set_error("null hierarchy handle");
            return GambletStatus::NullArgument;
        };
        if b.is_null() || u.is_null() {
            set_error("null vector argument");
            return GambletStatus::NullArgument;
        }
        if len != h.hierarchy.n_dofs() {
            set_error("vector length does not match the hierarchy");
            return GambletStatus::DimensionMismatch;
        }
        let rhs = std::slice::from_raw_parts(b, len);
        match transform::gamblet_solve(&h.hierarchy, &h.ops, rhs) {
            Ok(s) => {
                std::slice::from_raw_parts_mut(u, len).copy_from_slice(&s.u);
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the level-`level` subband component of the solve into `v`.
///
/// # Safety
/// As for [`gamblet_solve`].
#[no_mangle]
pub unsafe extern "C" fn gamblet_solve_subband(
    h: *const GambletHierarchy,
    b: *const f64,
    len: usize,
    level: usize,
    v: *mut f64,
) -> GambletStatus {
    guarded(|| {
        let Some(h) = h.as_ref() else {
            set_error("null hierarchy handle");
            return GambletStatus::NullArgument;
        };
        if b.is_null() || v.is_null() {
            set_error("null vector argument");
            return GambletStatus::NullArgument;
        }
        if len != h.hierarchy.n_dofs() {
            set_error("vector length does not match the hierarchy");
            return GambletStatus::DimensionMismatch;
        }
        if level == 0 || level > h.hierarchy.depth() {
            set_error("subband level out of range");
            return GambletStatus::InvalidArgument;
        }
        let rhs = std::slice::from_raw_parts(b, len);
        match transform::gamblet_solve(&h.hierarchy, &h.ops, rhs) {
            Ok(s) => {
                std::slice::from_raw_parts_mut(v, len).copy_from_slice(&s.v[level - 1]);
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Hierarchy depth; 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gamblet_hierarchy_depth(h: *const GambletHierarchy) -> usize {
    h.as_ref().map_or(0, |h| h.hierarchy.depth())
}

/// Releases a hierarchy handle (accepts null).
///
/// # Safety
/// `h` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gamblet_hierarchy_free(h: *mut GambletHierarchy) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// One-shot localized solve: builds the schedule from `(h_param, epsilon,
/// c_a)` and writes the assembled solution into `u`.
///
/// # Safety
/// `a` and `ops` must be live handles; `b` and `u` must point to `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn gamblet_fast_solve(
    a: *const GambletMatrix,
    ops: *const GambletOps,
    b: *const f64,
    len: usize,
    h_param: f64,
    epsilon: f64,
    c_a: f64,
    u: *mut f64,
) -> GambletStatus {
    guarded(|| {
        let (Some(a), Some(o)) = (a.as_ref(), ops.as_ref()) else {
            set_error("null handle argument");
            return GambletStatus::NullArgument;
        };
        if b.is_null() || u.is_null() {
            set_error("null vector argument");
            return GambletStatus::NullArgument;
        }
        if len != o.ops.n_dofs() || a.inner.nrows() != len {
            set_error("vector length does not match the hierarchy");
            return GambletStatus::DimensionMismatch;
        }
        if !(h_param > 0.0 && h_param < 1.0) || !(epsilon > 0.0 && epsilon < 1.0) || c_a <= 0.0 {
            set_error("schedule parameters out of range (need 0<H<1, 0<eps<1, c_a>0)");
            return GambletStatus::InvalidArgument;
        }
        let schedule = LocalizationSchedule::default_schedule(h_param, o.ops.depth(), epsilon, c_a);
        let rhs = std::slice::from_raw_parts(b, len);
        match gamblet::fast::fast_gamblet_solve(&a.inner, &o.ops, &o.tree, rhs, &schedule) {
            Ok((s, _)) => {
                std::slice::from_raw_parts_mut(u, len).copy_from_slice(&s.u);
                GambletStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    unsafe fn grid_matrix_2x2() -> *mut GambletMatrix {
        // tridiag(-1, 2, -1) on two unknowns
        let offsets = [0usize, 2, 4];
        let cols = [0usize, 1, 0, 1];
        let vals = [2.0, -1.0, -1.0, 2.0];
        let mut out: *mut GambletMatrix = ptr::null_mut();
        let code = gamblet_matrix_from_csr(
            2,
            2,
            offsets.as_ptr(),
            cols.as_ptr(),
            vals.as_ptr(),
            &mut out,
        );
        assert_eq!(code, GambletStatus::Ok);
        out
    }

    #[test]
    fn csr_round_trip_and_accessors() {
        unsafe {
            let m = grid_matrix_2x2();
            assert_eq!(gamblet_matrix_nrows(m), 2);
            assert_eq!(gamblet_matrix_nnz(m), 4);
            gamblet_matrix_free(m);
        }
    }

    #[test]
    fn null_arguments_are_rejected_with_message() {
        unsafe {
            let mut out: *mut GambletMatrix = ptr::null_mut();
            let code =
                gamblet_matrix_from_csr(2, 2, ptr::null(), ptr::null(), ptr::null(), &mut out);
            assert_eq!(code, GambletStatus::NullArgument);
            let msg = CStr::from_ptr(gamblet_last_error()).to_str().unwrap();
            assert!(msg.contains("null"));
        }
    }

    #[test]
    fn exact_solve_through_the_abi() {
        unsafe {
            let mut ops: *mut GambletOps = ptr::null_mut();
            assert_eq!(gamblet_ops_grid(2, 3, 2, &mut ops), GambletStatus::Ok);
            assert_eq!(gamblet_ops_depth(ops), 3);
            assert_eq!(gamblet_ops_n_dofs(ops), 64);

            let prob = gamblet::problems::standard_fem(3).unwrap();
            let dense_ref = prob.matrix.to_dense();
            let mut mat: *mut GambletMatrix = ptr::null_mut();
            let ro = prob.matrix.row_offsets().to_vec();
            let ci = prob.matrix.col_indices().to_vec();
            let va = prob.matrix.values().to_vec();
            assert_eq!(
                gamblet_matrix_from_csr(64, 64, ro.as_ptr(), ci.as_ptr(), va.as_ptr(), &mut mat),
                GambletStatus::Ok
            );

            let mut h: *mut GambletHierarchy = ptr::null_mut();
            assert_eq!(gamblet_build(mat, ops, &mut h), GambletStatus::Ok);
            assert_eq!(gamblet_hierarchy_depth(h), 3);

            let b = gamblet::problems::rhs_smooth(&prob);
            let mut u = vec![0.0f64; 64];
            assert_eq!(
                gamblet_solve(h, b.as_ptr(), 64, u.as_mut_ptr()),
                GambletStatus::Ok
            );
            let x = dense_ref.solve(&gamblet::DenseMatrix::column(&b)).unwrap();
            for i in 0..64 {
                assert!((u[i] - x[(i, 0)]).abs() <= 1e-8);
            }

            // per-subband components sum to u
            let mut total = vec![0.0f64; 64];
            for level in 1..=3usize {
                let mut v = vec![0.0f64; 64];
                assert_eq!(
                    gamblet_solve_subband(h, b.as_ptr(), 64, level, v.as_mut_ptr()),
                    GambletStatus::Ok
                );
                for i in 0..64 {
                    total[i] += v[i];
                }
            }
            for i in 0..64 {
                assert!((total[i] - u[i]).abs() <= 1e-10);
            }

            // dimension mismatch is reported, not UB
            assert_eq!(
                gamblet_solve(h, b.as_ptr(), 32, u.as_mut_ptr()),
                GambletStatus::DimensionMismatch
            );

            gamblet_hierarchy_free(h);
            gamblet_matrix_free(mat);
            gamblet_ops_free(ops);
        }
    }

    #[test]
    fn fast_solve_through_the_abi() {
        unsafe {
            let mut ops: *mut GambletOps = ptr::null_mut();
            assert_eq!(gamblet_ops_grid(2, 3, 2, &mut ops), GambletStatus::Ok);
            let prob = gamblet::problems::standard_fem(3).unwrap();
            let mut mat: *mut GambletMatrix = ptr::null_mut();
            let ro = prob.matrix.row_offsets().to_vec();
            let ci = prob.matrix.col_indices().to_vec();
            let va = prob.matrix.values().to_vec();
            gamblet_matrix_from_csr(64, 64, ro.as_ptr(), ci.as_ptr(), va.as_ptr(), &mut mat);
            let b = gamblet::problems::rhs_smooth(&prob);
            let mut u = vec![0.0f64; 64];
            assert_eq!(
                gamblet_fast_solve(mat, ops, b.as_ptr(), 64, 0.5, 1e-6, 1.0, u.as_mut_ptr()),
                GambletStatus::Ok
            );
            let x = prob
                .matrix
                .to_dense()
                .solve(&gamblet::DenseMatrix::column(&b))
                .unwrap();
            for i in 0..64 {
                assert!(
                    (u[i] - x[(i, 0)]).abs() <= 1e-4,
                    "{} vs {}",
                    u[i],
                    x[(i, 0)]
                );
            }
            // bad schedule parameters
            assert_eq!(
                gamblet_fast_solve(mat, ops, b.as_ptr(), 64, 1.5, 1e-6, 1.0, u.as_mut_ptr()),
                GambletStatus::InvalidArgument
            );
            gamblet_matrix_free(mat);
            gamblet_ops_free(ops);
        }
    }

    #[test]
    fn ops_load_through_the_abi() {
        unsafe {
            let dir = tempfile::tempdir().unwrap();
            let tree = gamblet::IndexTree::grid(1, 3, 2).unwrap();
            let saved = gamblet::HierarchyOperators::standard(&tree).unwrap();
            saved.save(dir.path()).unwrap();
            let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
            let mut ops: *mut GambletOps = ptr::null_mut();
            assert_eq!(gamblet_ops_load(cdir.as_ptr(), &mut ops), GambletStatus::Ok);
            assert_eq!(gamblet_ops_depth(ops), 3);
            assert_eq!(gamblet_ops_n_dofs(ops), 8);
            gamblet_ops_free(ops);
            // missing directory reports Io
            let missing = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
            let mut none: *mut GambletOps = ptr::null_mut();
            assert_eq!(
                gamblet_ops_load(missing.as_ptr(), &mut none),
                GambletStatus::Io
            );
        }
    }

    #[test]
    fn matrix_file_io_through_the_abi() {
        unsafe {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.mtx");
            let cpath = CString::new(path.to_str().unwrap()).unwrap();
            let m = grid_matrix_2x2();
            assert_eq!(
                gamblet_matrix_write_mm(m, cpath.as_ptr()),
                GambletStatus::Ok
            );
            let mut back: *mut GambletMatrix = ptr::null_mut();
            assert_eq!(
                gamblet_matrix_read_mm(cpath.as_ptr(), &mut back),
                GambletStatus::Ok
            );
            assert_eq!(gamblet_matrix_nnz(back), 4);
            gamblet_matrix_free(back);
            gamblet_matrix_free(m);
            // missing file reports Io
            let missing = CString::new(dir.path().join("nope.mtx").to_str().unwrap()).unwrap();
            let mut none: *mut GambletMatrix = ptr::null_mut();
            assert_eq!(
                gamblet_matrix_read_mm(missing.as_ptr(), &mut none),
                GambletStatus::Io
            );
        }
    }
}
