/* C interface for the gamblet solver.
 *
 * Conventions:
 *   - every fallible call returns a gamblet_status; GAMBLET_OK is 0;
 *   - output handles are written through `out` pointers, owned by the caller,
 *     and released with the matching *_free function (null is accepted);
 *   - gamblet_last_error() returns a thread-local message describing the most
 *     recent failure on the calling thread; the pointer stays valid until the
 *     next failing call on that thread;
 *   - panics inside the library never unwind across this boundary; they are
 *     reported as GAMBLET_ERR_PANIC.
 *
 * Keep this header in sync with the #[no_mangle] exports in src/lib.rs.
 */

#ifndef GAMBLET_H
#define GAMBLET_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gamblet_status {
  GAMBLET_OK = 0,
  GAMBLET_ERR_NULL_ARGUMENT = 1,
  GAMBLET_ERR_INVALID_ARGUMENT = 2,
  GAMBLET_ERR_DIMENSION_MISMATCH = 3,
  GAMBLET_ERR_NOT_SPD = 4,
  GAMBLET_ERR_SOLVER = 5,
  GAMBLET_ERR_IO = 6,
  GAMBLET_ERR_UTF8 = 7,
  GAMBLET_ERR_PANIC = 8,
} gamblet_status;

/* Opaque handles. */
typedef struct GambletMatrix gamblet_matrix;
typedef struct GambletOps gamblet_ops;
typedef struct GambletHierarchy gamblet_hierarchy;

/* Thread-local message for the most recent failure. Never null. */
const char *gamblet_last_error(void);

/* --- matrices ----------------------------------------------------------- */

/* Builds a matrix from CSR arrays. row_offsets has nrows+1 entries; column
 * indices must be strictly increasing within each row. */
gamblet_status gamblet_matrix_from_csr(size_t nrows, size_t ncols,
                                       const size_t *row_offsets,
                                       const size_t *col_indices,
                                       const double *values,
                                       gamblet_matrix **out);

/* Reads / writes Matrix Market coordinate files. */
gamblet_status gamblet_matrix_read_mm(const char *path, gamblet_matrix **out);
gamblet_status gamblet_matrix_write_mm(const gamblet_matrix *m,
                                       const char *path);

size_t gamblet_matrix_nrows(const gamblet_matrix *m); /* 0 for null */
size_t gamblet_matrix_nnz(const gamblet_matrix *m);   /* 0 for null */
void gamblet_matrix_free(gamblet_matrix *m);

/* --- hierarchy operators ------------------------------------------------ */

/* Standard grid hierarchy: branch^dim children per cell, `depth` levels,
 * orthonormal cellular nesting and wavelet matrices. Covers
 * branch^(depth*dim) unknowns in row-major grid order. */
gamblet_status gamblet_ops_grid(size_t dim, size_t depth, size_t branch,
                                gamblet_ops **out);

/* Loads operators saved as pi_k.mtx / w_k.mtx / ops.json in `dir`. */
gamblet_status gamblet_ops_load(const char *dir, gamblet_ops **out);

size_t gamblet_ops_depth(const gamblet_ops *ops);  /* 0 for null */
size_t gamblet_ops_n_dofs(const gamblet_ops *ops); /* 0 for null */
void gamblet_ops_free(gamblet_ops *ops);

/* --- exact transform and solve ------------------------------------------ */

/* Runs the exact transform of `a` over `ops`. `a` must be symmetric positive
 * definite with as many rows as the hierarchy covers. */
gamblet_status gamblet_build(const gamblet_matrix *a, const gamblet_ops *ops,
                             gamblet_hierarchy **out);

/* Solves A u = b; `b` and `u` point to `len` doubles with `len` equal to the
 * hierarchy's unknown count. */
gamblet_status gamblet_solve(const gamblet_hierarchy *h, const double *b,
                             size_t len, double *u);

/* Writes the level-`level` subband component (1-based) of the solve. The
 * components over all levels sum to the solution and are pairwise
 * A-orthogonal. */
gamblet_status gamblet_solve_subband(const gamblet_hierarchy *h,
                                     const double *b, size_t len, size_t level,
                                     double *v);

size_t gamblet_hierarchy_depth(const gamblet_hierarchy *h); /* 0 for null */
void gamblet_hierarchy_free(gamblet_hierarchy *h);

/* --- localized (near-linear) solve --------------------------------------- */

/* One-shot localized transform and solve with the default radius schedule
 * built from (h_param, epsilon, c_a). Requires 0 < h_param < 1,
 * 0 < epsilon < 1, c_a > 0. */
gamblet_status gamblet_fast_solve(const gamblet_matrix *a,
                                  const gamblet_ops *ops, const double *b,
                                  size_t len, double h_param, double epsilon,
                                  double c_a, double *u);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GAMBLET_H */
