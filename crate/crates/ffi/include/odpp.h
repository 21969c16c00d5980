#ifndef ODPP_H
#define ODPP_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum OdppStatus {
  ODPP_STATUS_OK = 0,
  ODPP_STATUS_NULL_POINTER = 1,
  ODPP_STATUS_INVALID_ARGUMENT = 2,
  ODPP_STATUS_IO = 3,
  ODPP_STATUS_DATA = 4,
  ODPP_STATUS_DIMENSION = 5,
  ODPP_STATUS_NUMERICAL = 6,
  ODPP_STATUS_PANIC = 7,
} OdppStatus;

/**
 * Intensity model family for [`odpp_fit_intensity`].
 */
typedef enum OdppIntensityKind {
  ODPP_INTENSITY_KIND_NHPP = 0,
  ODPP_INTENSITY_KIND_LGCP = 1,
} OdppIntensityKind;

/**
 * Opaque posterior sample.
 */
typedef struct OdppChain OdppChain;

/**
 * Opaque analysis grid.
 */
typedef struct OdppGrid OdppGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *odpp_version(void);

/**
 * Copy the calling thread's last error message into `buf`.
 *
 * Returns the buffer size the full message needs, including the NUL; 1 means
 * no error is recorded. Pass a null `buf` to query the size.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t odpp_last_error_message(char *buf, size_t len);

/**
 * Regular `nx × ny` grid over `[xmin, xmax] × [ymin, ymax]`.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle to free with [`odpp_grid_free`].
 */
enum OdppStatus odpp_grid_regular(double xmin,
                                  double xmax,
                                  double ymin,
                                  double ymax,
                                  size_t nx,
                                  size_t ny,
                                  struct OdppGrid **out);

/**
 * Number of cells, 0 for a null handle.
 *
 * # Safety
 * `grid` must be a live handle or null.
 */
size_t odpp_grid_len(const struct OdppGrid *grid);

/**
 * Cell containing `(x, y)`; `Data` status if it lies outside the grid.
 *
 * # Safety
 * `grid` must be a live handle and `cell` a valid pointer.
 */
enum OdppStatus odpp_grid_locate(const struct OdppGrid *grid, double x, double y, size_t *cell);

/**
 * # Safety
 * `grid` must come from [`odpp_grid_regular`] and not be used afterwards. Null is ignored.
 */
void odpp_grid_free(struct OdppGrid *grid);

/**
 * Fit an NHPP or LGCP intensity to `n` points `xy` on `grid`.
 *
 * `covariates` is a row-major `K × p` matrix (null when `p == 0`); the
 * intercept is added automatically and columns are named `x0, x1, ...` in the
 * chain (`beta_x0`, ...). The chain keeps `keep` draws after `burn_in`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` receives a handle to
 * free with [`odpp_chain_free`].
 */
enum OdppStatus odpp_fit_intensity(const struct OdppGrid *grid,
                                   const double *xy,
                                   size_t n,
                                   const double *covariates,
                                   size_t p,
                                   enum OdppIntensityKind kind,
                                   size_t burn_in,
                                   size_t keep,
                                   uint64_t seed,
                                   struct OdppChain **out);

/**
 * Fit the constant recovery kernel `(sigma1, sigma2, rho)` to `n` theft/recovery pairs.
 *
 * # Safety
 * `thefts` and `recoveries` must each hold `2n` doubles; `out` receives a
 * handle to free with [`odpp_chain_free`].
 */
enum OdppStatus odpp_fit_conditional_constant(const double *thefts,
                                              const double *recoveries,
                                              size_t n,
                                              size_t burn_in,
                                              size_t keep,
                                              uint64_t seed,
                                              struct OdppChain **out);

/**
 * Number of kept draws, 0 for a null handle.
 *
 * # Safety
 * `chain` must be a live handle or null.
 */
size_t odpp_chain_len(const struct OdppChain *chain);

/**
 * Number of scalar parameters (the last one is the data log-likelihood).
 *
 * # Safety
 * `chain` must be a live handle or null.
 */
size_t odpp_chain_param_count(const struct OdppChain *chain);

/**
 * Copy the name of parameter `index` into `buf`; returns the size it needs
 * (including NUL), or 0 if `chain` is null or `index` out of range.
 *
 * # Safety
 * `chain` must be a live handle or null; `buf` valid for `len` bytes or null.
 */
size_t odpp_chain_param_name(const struct OdppChain *chain, size_t index, char *buf, size_t len);

/**
 * Trace of the parameter called `name`, written to `out` (`len` ≥ chain length).
 *
 * # Safety
 * `chain` must be a live handle, `name` a NUL-terminated string, and `out`
 * valid for `len` writes.
 */
enum OdppStatus odpp_chain_trace(const struct OdppChain *chain,
                                 const char *name,
                                 double *out,
                                 size_t len);

/**
 * Posterior mean of the parameter called `name`.
 *
 * # Safety
 * `chain` must be a live handle, `name` NUL-terminated, `mean` valid.
 */
enum OdppStatus odpp_chain_param_mean(const struct OdppChain *chain,
                                      const char *name,
                                      double *mean);

/**
 * # Safety
 * `chain` must come from a fit function and not be used afterwards. Null is ignored.
 */
void odpp_chain_free(struct OdppChain *chain);

/**
 * Log density of a recovery at `(rx, ry)` for a theft at `(tx, ty)` under
 * the kernel `[[sxx, sxy], [sxy, syy]]`.
 *
 * # Safety
 * `out` must be valid.
 */
enum OdppStatus odpp_cond_logdensity(double rx,
                                     double ry,
                                     double tx,
                                     double ty,
                                     double sxx,
                                     double sxy,
                                     double syy,
                                     double *out);

/**
 * Kernel matrix `(xx, xy, yy)` of the spatially varying kernel at `(ψx, ψy)`.
 *
 * # Safety
 * `out` must be valid for 3 writes.
 */
enum OdppStatus odpp_kernel_sigma(double psi_x, double psi_y, double sigma, double a, double *out);

/**
 * Energy score of `n` predictive samples `xy` against the observation `(ox, oy)`.
 *
 * # Safety
 * `xy` must hold `2n` doubles; `out` must be valid.
 */
enum OdppStatus odpp_bicrps(const double *xy, size_t n, double ox, double oy, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODPP_H */
