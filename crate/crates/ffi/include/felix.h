#ifndef FELIX_H
#define FELIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FelixStatus {
  FELIX_STATUS_OK = 0,
  // A required pointer argument was null.
  FELIX_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  FELIX_STATUS_INVALID_UTF8 = 2,
  // Bad configuration text or setting.
  FELIX_STATUS_CONFIG = 3,
  // Malformed or inconsistent data, including checkpoints.
  FELIX_STATUS_DATA = 4,
  // A file could not be read or written.
  FELIX_STATUS_IO = 5,
  // Input violates a model limit or contains a reserved token.
  FELIX_STATUS_INVALID_INPUT = 6,
  // The pair cannot be expressed under the configured constraints.
  FELIX_STATUS_UNALIGNABLE = 7,
  // A computation produced NaN or infinity.
  FELIX_STATUS_NON_FINITE = 8,
  // A Rust panic was caught at the boundary.
  FELIX_STATUS_PANIC = 9,
} FelixStatus;

// Trained tagger and insertion model.
typedef struct FelixPipeline FelixPipeline;

// Sentence-level SARI and its components, as percentages.
typedef struct FelixSari {
  double sari;
  double add;
  double keep;
  double del;
} FelixSari;

// Sentence TER (percentage) and its edit counts.
typedef struct FelixTer {
  double ter;
  size_t ins;
  size_t del;
  size_t sub;
  size_t shift;
} FelixTer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next `felix_*` call on this thread.
const char *felix_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void felix_string_free(char *s);

// Loads the checkpoints written by `felix train` from `model_dir`.
//
// # Safety
// `model_dir` must be a valid C string and `out` a valid pointer.
enum FelixStatus felix_pipeline_load(const char *model_dir, struct FelixPipeline **out);

// Edits one whitespace-tokenized sentence. The result goes to `*out`.
//
// # Safety
// `pipeline` must come from `felix_pipeline_load`; `source` must be a
// valid C string and `out` a valid pointer.
enum FelixStatus felix_pipeline_predict(const struct FelixPipeline *pipeline,
                                        const char *source,
                                        char **out);

// # Safety
// `pipeline` must be null or come from `felix_pipeline_load` and not be
// freed already.
void felix_pipeline_free(struct FelixPipeline *pipeline);

// Aligns a pair and writes the aligned record as JSON to `*out`.
// `config_toml` may be null for the defaults. Returns
// `FELIX_STATUS_UNALIGNABLE` when the pair has no plan.
//
// # Safety
// String arguments must be valid C strings (or null where allowed) and
// `out` a valid pointer.
enum FelixStatus felix_align_json(const char *source,
                                  const char *target,
                                  const char *config_toml,
                                  char **out);

// Sentence SARI of `prediction` given `source` and `n_references`
// references. `all_f1` selects F1 for the deletion component instead of
// precision.
//
// # Safety
// `references` must point to `n_references` valid C strings; the other
// pointers must be valid.
enum FelixStatus felix_sari(const char *source,
                            const char *prediction,
                            const char *const *references,
                            size_t n_references,
                            bool all_f1,
                            struct FelixSari *out);

// Sentence TER of `prediction` against `reference`.
//
// # Safety
// String arguments must be valid C strings and `out` a valid pointer.
enum FelixStatus felix_ter(const char *prediction, const char *reference, struct FelixTer *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FELIX_H */
