#ifndef VCPROF_H
#define VCPROF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every exported function.
typedef enum VcprofStatus {
  VCPROF_STATUS_OK = 0,
  VCPROF_STATUS_NULL_POINTER = 1,
  VCPROF_STATUS_INVALID_UTF8 = 2,
  VCPROF_STATUS_INVALID_ARGUMENT = 3,
  VCPROF_STATUS_INVALID_JSON = 4,
  // The input was well formed but the computation is undefined for it,
  // e.g. AUC with a single class.
  VCPROF_STATUS_UNDEFINED = 5,
  VCPROF_STATUS_UNPARSEABLE = 6,
  VCPROF_STATUS_PANIC = 99,
} VcprofStatus;

// Opaque BM25 index.
typedef struct VcprofLexicalIndex VcprofLexicalIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call on the same thread.
const char *vcprof_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void vcprof_string_free(char *s);

// Library version, statically allocated.
const char *vcprof_version(void);

// F1 of binary predictions. `macro_average` selects macro F1 over the
// classes present; otherwise F1 of the positive class.
//
// # Safety
// `preds` and `labels` must point to `n` bytes; `out` must be writable.
enum VcprofStatus vcprof_f1(const uint8_t *preds,
                            const uint8_t *labels,
                            size_t n,
                            bool macro_average,
                            double *out);

// ROC AUC with tied scores counted as one half.
//
// # Safety
// `scores` must point to `n` doubles and `labels` to `n` bytes.
enum VcprofStatus vcprof_roc_auc(const double *scores,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *out);

// Spearman rank correlation with average ranks for ties.
//
// # Safety
// `a` and `b` must point to `n` doubles.
enum VcprofStatus vcprof_spearman(const double *a, const double *b, size_t n, double *out);

// NDCG@k (linear gain) of `ranking_json`, a JSON array of ids, against
// `relevance_json`, a JSON object mapping every id to a non-negative score.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum VcprofStatus vcprof_ndcg_at_k(const char *ranking_json,
                                   const char *relevance_json,
                                   size_t k,
                                   double *out);

// Builds a BM25 index from `records_json`, a JSON array of
// `{"id": ..., "text": ...}` objects. Free with [`vcprof_lexical_free`].
//
// # Safety
// `records_json` must be NUL-terminated; `out` must be writable.
enum VcprofStatus vcprof_lexical_new(const char *records_json,
                                     double k1,
                                     double b,
                                     struct VcprofLexicalIndex **out);

// Number of documents in the index, or 0 for NULL.
//
// # Safety
// `index` must be NULL or a live handle.
size_t vcprof_lexical_len(const struct VcprofLexicalIndex *index);

// BM25 scores of every document for `query`, as a JSON object id -> score.
//
// # Safety
// `index` must be a live handle; `query` NUL-terminated; `out_json` writable.
enum VcprofStatus vcprof_lexical_score(const struct VcprofLexicalIndex *index,
                                       const char *query,
                                       char **out_json);

// Releases an index. NULL is ignored.
//
// # Safety
// `index` must come from [`vcprof_lexical_new`] and not be freed twice.
void vcprof_lexical_free(struct VcprofLexicalIndex *index);

// Writes the `dim`-dimensional hashing embedding of `text` into `out`.
//
// # Safety
// `text` must be NUL-terminated; `out` must hold `dim` floats.
enum VcprofStatus vcprof_hash_embed(const char *text, size_t dim, float *out);

// Parses a yes/no verdict: 1 for view changed, 0 for unchanged.
// Anything else yields [`VcprofStatus::Unparseable`].
//
// # Safety
// `raw` must be NUL-terminated; `out` must be writable.
enum VcprofStatus vcprof_parse_verdict(const char *raw, int32_t *out);

// Renders a bundled prompt. `kind` is one of `predict_profile`,
// `predict_history`, `predict_none`, `profiler`, `query_stage1`,
// `query_stage2`, `hyde`, `query_inference`; `slots_json` is a JSON object
// of slot values. Missing slots render as empty text.
//
// # Safety
// String arguments must be NUL-terminated; both out-pointers writable.
enum VcprofStatus vcprof_render_prompt(const char *kind,
                                       const char *slots_json,
                                       char **out_system,
                                       char **out_user);

// Profiler pairs from `items_json`, a JSON array of `[id, score]`: every
// (top-k, bottom-k) combination whose score gap reaches `delta`. Output is a
// JSON array of `[chosen_id, rejected_id]`.
//
// # Safety
// `items_json` must be NUL-terminated; `out_json` writable.
enum VcprofStatus vcprof_select_profiler_pairs(const char *items_json,
                                               size_t k,
                                               double delta,
                                               char **out_json);

// Query-generator pairs from `items_json` (`[id, score]` array): chosen at
// or above `pos_threshold`, rejected at or below `neg_threshold`, margin at
// least `min_margin`, largest margins first, at most `max_pairs`.
//
// # Safety
// `items_json` must be NUL-terminated; `out_json` writable.
enum VcprofStatus vcprof_select_query_pairs(const char *items_json,
                                            double pos_threshold,
                                            double neg_threshold,
                                            double min_margin,
                                            size_t max_pairs,
                                            char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCPROF_H */
