#ifndef ORDIMPUTE_H
#define ORDIMPUTE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. The first four match the command-line exit codes.
 */
typedef enum OrdStatus {
  ORD_STATUS_OK = 0,
  ORD_STATUS_CONFIG_ERROR = 1,
  ORD_STATUS_DATA_ERROR = 2,
  ORD_STATUS_NUMERICAL_ERROR = 3,
  ORD_STATUS_NULL_POINTER = 4,
  ORD_STATUS_PANIC = 5,
} OrdStatus;

/*
 An ordinal dataset, possibly with missing cells.
 */
typedef struct OrdDataset OrdDataset;

/*
 The completed datasets from one imputation run.
 */
typedef struct OrdImputation OrdImputation;

/*
 Rubin's-rules summary of `L` completed-data estimates.
 */
typedef struct OrdPooled {
  double q_bar;
  double between;
  double within;
  double total;
  double dof;
  double lower;
  double upper;
} OrdPooled;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or null. The pointer
 stays valid until the next library call on the same thread.
 */
const char *ordimpute_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ordimpute_version(void);

/*
 Builds a dataset from `n * p` column-major levels. `cardinalities` has
 `p` entries; variables are named `V1`, `V2`, ... On success `*out` holds
 a new handle.

 # Safety
 `cardinalities` must point to `p` values and `values` to `n * p` values;
 `out` must be writable.
 */
enum OrdStatus ordimpute_dataset_new(size_t n,
                                     size_t p,
                                     const size_t *cardinalities,
                                     const uint8_t *values,
                                     struct OrdDataset **out);

/*
 Releases a dataset. Null is ignored.

 # Safety
 `dataset` must be null or a handle from this library not yet freed.
 */
void ordimpute_dataset_free(struct OrdDataset *dataset);

/*
 Writes the row and variable counts.

 # Safety
 `dataset` must be a live handle; `n` and `p` must be writable.
 */
enum OrdStatus ordimpute_dataset_dims(const struct OrdDataset *dataset, size_t *n, size_t *p);

/*
 Number of missing cells.

 # Safety
 `dataset` must be a live handle; `count` must be writable.
 */
enum OrdStatus ordimpute_dataset_missing(const struct OrdDataset *dataset, size_t *count);

/*
 Masks each cell of variable `j` independently with probability
 `rates[j]`, returning a new dataset. The source must be complete.

 # Safety
 `dataset` must be a live handle, `rates` must point to `p` values and
 `out` must be writable.
 */
enum OrdStatus ordimpute_inject_mcar(const struct OrdDataset *dataset,
                                     const double *rates,
                                     uint64_t seed,
                                     struct OrdDataset **out);

/*
 Imputes with the named method (`cart`, `forest`, `missforest`,
 `multireg`, `polr`, `dpmpm`, `dpmmvn` or `gain`) into `imputations`
 completed datasets. `iterations` and `burn_in` set MICE sweeps or MCMC
 lengths; pass 0 for the defaults.

 # Safety
 `dataset` must be a live handle, `method` a NUL-terminated string and
 `out` writable.
 */
enum OrdStatus ordimpute_impute(const struct OrdDataset *dataset,
                                const char *method,
                                size_t imputations,
                                size_t iterations,
                                size_t burn_in,
                                uint64_t seed,
                                struct OrdImputation **out);

/*
 Releases an imputation result. Null is ignored.

 # Safety
 `result` must be null or a handle from this library not yet freed.
 */
void ordimpute_imputation_free(struct OrdImputation *result);

/*
 Number of completed datasets.

 # Safety
 `result` must be a live handle; `count` must be writable.
 */
enum OrdStatus ordimpute_imputation_count(const struct OrdImputation *result, size_t *count);

/*
 Copies completed dataset `index` into `values` as `n * p` column-major
 levels. `len` is the buffer length and must be at least `n * p`.

 # Safety
 `result` must be a live handle and `values` must have room for `len`
 bytes.
 */
enum OrdStatus ordimpute_imputation_copy(const struct OrdImputation *result,
                                         size_t index,
                                         uint8_t *values,
                                         size_t len);

/*
 Pools `l` estimates `q` with variances `u`.

 # Safety
 `q` and `u` must point to `l` values; `out` must be writable.
 */
enum OrdStatus ordimpute_pool(const double *q, const double *u, size_t l, struct OrdPooled *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORDIMPUTE_H */
