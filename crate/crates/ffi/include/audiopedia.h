#ifndef AUDIOPEDIA_H
#define AUDIOPEDIA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ApStatus {
  AP_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  AP_STATUS_ERR_NULL = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  AP_STATUS_ERR_UTF8 = 2,
  /**
   * Malformed or out-of-range input.
   */
  AP_STATUS_ERR_INVALID = 3,
  AP_STATUS_ERR_IO = 4,
  /**
   * Unknown entity id or name.
   */
  AP_STATUS_ERR_NOT_FOUND = 5,
  AP_STATUS_ERR_PANIC = 6,
} ApStatus;

/**
 * Entity index built from a knowledge base under one knowledge source.
 */
typedef struct ApIndex ApIndex;

/**
 * Parsed knowledge base.
 */
typedef struct ApKb ApKb;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *ap_last_error(void);

/**
 * Library version, statically allocated.
 */
const char *ap_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void ap_string_free(char *s);

/**
 * Parses tab-separated (or JSON-lines) triplets.
 *
 * # Safety
 * `text` must be NULL or a NUL-terminated string; `out` must be NULL or
 * writable.
 */
enum ApStatus ap_kb_from_text(const char *text, struct ApKb **out);

/**
 * Loads a knowledge base file.
 *
 * # Safety
 * As [`ap_kb_from_text`].
 */
enum ApStatus ap_kb_from_path(const char *path, struct ApKb **out);

/**
 * # Safety
 * `kb` must be NULL or a live handle; it must not be used afterwards.
 */
void ap_kb_free(struct ApKb *kb);

/**
 * # Safety
 * `kb` must be a live handle; `out` writable.
 */
enum ApStatus ap_kb_entity_count(const struct ApKb *kb, size_t *out);

/**
 * Dense id of the entity with this (normalized) name.
 *
 * # Safety
 * `kb` must be a live handle; `name` NUL-terminated; `out` writable.
 */
enum ApStatus ap_kb_lookup(const struct ApKb *kb, const char *name, uint32_t *out);

/**
 * Canonical name of entity `id`. Free the result with [`ap_string_free`].
 *
 * # Safety
 * `kb` must be a live handle; `out` writable.
 */
enum ApStatus ap_kb_entity_name(const struct ApKb *kb, uint32_t id, char **out);

/**
 * Knowledge text of entity `id` under `source` (`name`, `full`,
 * `partial=<f>[:<seed>]`). Free the result with [`ap_string_free`].
 *
 * # Safety
 * `kb` must be a live handle; `source` NUL-terminated; `out` writable.
 */
enum ApStatus ap_kb_knowledge_view(const struct ApKb *kb,
                                   uint32_t id,
                                   const char *source,
                                   char **out);

/**
 * Builds a TF-IDF entity index. The index does not borrow `kb`.
 *
 * # Safety
 * `kb` must be a live handle; `source` NUL-terminated; `out` writable.
 */
enum ApStatus ap_index_build(const struct ApKb *kb, const char *source, struct ApIndex **out);

/**
 * # Safety
 * `index` must be NULL or a live handle; it must not be used afterwards.
 */
void ap_index_free(struct ApIndex *index);

/**
 * Links a transcript to the best-scoring entity. `out_score` may be NULL.
 *
 * # Safety
 * `index` must be a live handle; `transcript` NUL-terminated; `out_id`
 * writable; `out_score` NULL or writable.
 */
enum ApStatus ap_index_link(const struct ApIndex *index,
                            const char *transcript,
                            uint32_t *out_id,
                            double *out_score);

/**
 * 1.0 when the normalized gold answer occurs in the generated text.
 *
 * # Safety
 * `generated` and `gold` NUL-terminated; `out` writable.
 */
enum ApStatus ap_aqa_accuracy(const char *generated, const char *gold, double *out);

/**
 * F1 between retained and gold index sets of a pool. Arrays may be NULL
 * when their length is 0.
 *
 * # Safety
 * Non-empty arrays must hold the given number of elements; `out` writable.
 */
enum ApStatus ap_retrieval_f1(const size_t *retained,
                              size_t retained_len,
                              const size_t *gold,
                              size_t gold_len,
                              size_t pool_len,
                              double *out);

/**
 * Replaces each character with probability `rate` by a different
 * lowercase letter. Free the result with [`ap_string_free`].
 *
 * # Safety
 * `text` NUL-terminated; `out` writable.
 */
enum ApStatus ap_noise_inject(const char *text, double rate, uint64_t seed, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUDIOPEDIA_H */
