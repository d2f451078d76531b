#ifndef MLGUARD_H
#define MLGUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum {
  MLGUARD_STATUS_OK = 0,
  // A required pointer was null, a string was not UTF-8 or a size was zero.
  MLGUARD_STATUS_INVALID_ARGUMENT = 1,
  // The contract document does not parse.
  MLGUARD_STATUS_PARSE_ERROR = 2,
  // The contract parses but fails validation.
  MLGUARD_STATUS_VALIDATION_FAILED = 3,
  // Training or writing the bundle failed.
  MLGUARD_STATUS_BUILD_FAILED = 4,
  // The bundle is missing, corrupted or of an unsupported version.
  MLGUARD_STATUS_LOAD_FAILED = 5,
  // The input batch is malformed (bad CSV, ragged rows).
  MLGUARD_STATUS_INVALID_INPUT = 6,
  // The model adapter failed.
  MLGUARD_STATUS_ADAPTER_FAILURE = 7,
  MLGUARD_STATUS_IO = 8,
  MLGUARD_STATUS_PANIC = 9,
} MlguardStatus;

// Opaque guard handle.
typedef struct MlguardGuard MlguardGuard;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static string. Do not free.
const char *mlguard_version(void);

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next library call on this thread. Do not free.
const char *mlguard_last_error(void);

// Release a string returned by the library. Null is ignored.
//
// # Safety
// `s` is null or a string returned by this library that was not yet freed.
void mlguard_string_free(char *s);

// Parse and validate the contract at `contract_path`. Locators resolve
// against `root`, or the contract's directory when `root` is null.
// `*diagnostics_json` receives a JSON array of diagnostics (warnings
// included) whenever the contract parses.
//
// # Safety
// String arguments are null or valid NUL-terminated strings;
// `diagnostics_json` is valid for one pointer write.
MlguardStatus mlguard_check_contract(const char *contract_path,
                                     const char *root,
                                     char **diagnostics_json);

// Train and write a bundle for the contract at `contract_path` into
// `out_dir`. `root` as for [`mlguard_check_contract`].
//
// # Safety
// String arguments are null or valid NUL-terminated strings.
MlguardStatus mlguard_build_bundle(const char *contract_path,
                                   const char *root,
                                   uint64_t seed,
                                   const char *out_dir);

// Load and verify the bundle in `bundle_dir` and open a guard on it.
// Violations are appended to `log_path` as JSON lines, or discarded when
// `log_path` is null.
//
// # Safety
// String arguments are null or valid NUL-terminated strings; `out` is
// valid for one pointer write.
MlguardStatus mlguard_guard_open(const char *bundle_dir, const char *log_path, MlguardGuard **out);

// Release a guard. Null is ignored.
//
// # Safety
// `guard` is null or a handle from [`mlguard_guard_open`] not yet freed.
void mlguard_guard_free(MlguardGuard *guard);

// Guard a batch given as CSV text with a header row. `*output_json`
// receives the guarded output (`batch_id`, `status`, `predictions`,
// `warnings`, `uncertainty`, ...). A rejected batch is a successful call
// with `"status": "rejected"`.
//
// # Safety
// `guard` is a live handle; `csv` is a valid NUL-terminated string;
// `output_json` is valid for one pointer write.
MlguardStatus mlguard_guard_predict_csv(const MlguardGuard *guard,
                                        const char *csv,
                                        char **output_json);

// Guard a dense row-major `n_rows × n_cols` batch whose columns are named
// by `column_names`.
//
// # Safety
// `guard` is a live handle; `values` points to `n_rows * n_cols` doubles
// (it may be null when `n_rows` is 0); `column_names` points to `n_cols`
// valid NUL-terminated strings; `output_json` is valid for one pointer
// write.
MlguardStatus mlguard_guard_predict(const MlguardGuard *guard,
                                    const double *values,
                                    size_t n_rows,
                                    size_t n_cols,
                                    const char *const *column_names,
                                    char **output_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLGUARD_H */
