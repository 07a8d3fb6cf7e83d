#ifndef MET_H
#define MET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum MetStatus {
  MET_STATUS_OK = 0,
  MET_STATUS_NULL_ARGUMENT = 1,
  MET_STATUS_INVALID_UTF8 = 2,
  MET_STATUS_SYNTAX_ERROR = 3,
  MET_STATUS_CASE_EXPLOSION = 4,
  MET_STATUS_UNKNOWN_EVENT_TYPE = 5,
  MET_STATUS_BACKPRESSURE = 6,
  MET_STATUS_INVALID_JSON = 7,
  MET_STATUS_PANIC = 8,
} MetStatus;

// One firing produced by [`met_handler_ingest`].
typedef struct MetFiring MetFiring;

// A trigger handler: per-type FIFO sets plus the compiled rule.
typedef struct MetHandler MetHandler;

// A compiled rule.
typedef struct MetRule MetRule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or NULL. Valid until the next call
// into this library on the same thread.
const char *met_last_error_message(void);

// Byte offset of the last syntax error on this thread, or -1.
int64_t met_last_error_offset(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void met_string_free(char *s);

// Parses and normalizes `text`.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum MetStatus met_rule_parse(const char *text, struct MetRule **out);

// # Safety
// `rule` must come from [`met_rule_parse`] and not have been freed.
void met_rule_free(struct MetRule *rule);

// Number of cases in the rule's normal form, 0 for NULL.
//
// # Safety
// `rule` must be NULL or a live handle.
size_t met_rule_case_count(const struct MetRule *rule);

// Canonical text of the rule. Free with [`met_string_free`].
//
// # Safety
// `rule` must be NULL or a live handle.
char *met_rule_canonical(const struct MetRule *rule);

// The normalized cases as a JSON array. Free with [`met_string_free`].
//
// # Safety
// `rule` must be NULL or a live handle.
char *met_rule_cases_json(const struct MetRule *rule);

// Creates a handler for `rule_text`. The function URL is left empty; the
// caller decides what to do with firings.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum MetStatus met_handler_new(const char *trigger_id,
                               const char *rule_text,
                               struct MetHandler **out);

// # Safety
// `handler` must come from [`met_handler_new`] and not have been freed.
void met_handler_free(struct MetHandler *handler);

// Adds one event. `*out_firing` is set to a new firing when the event
// fulfils the rule and to NULL otherwise. `payload` may be NULL when
// `payload_len` is 0.
//
// # Safety
// `handler` must be live and not used concurrently; strings NUL-terminated;
// `payload` readable for `payload_len` bytes; `out_firing` writable.
enum MetStatus met_handler_ingest(struct MetHandler *handler,
                                  const char *event_id,
                                  const char *event_type,
                                  int64_t created_at_ns,
                                  const uint8_t *payload,
                                  size_t payload_len,
                                  struct MetFiring **out_firing);

// Number of queued events of `event_type`.
//
// # Safety
// `handler` must be live; `event_type` NUL-terminated; `out` writable.
enum MetStatus met_handler_queue_len(const struct MetHandler *handler,
                                     const char *event_type,
                                     size_t *out);

// Queue lengths and counters as JSON. Free with [`met_string_free`].
//
// # Safety
// `handler` must be NULL or a live handle.
char *met_handler_snapshot_json(const struct MetHandler *handler);

// # Safety
// `firing` must come from [`met_handler_ingest`] and not have been freed.
void met_firing_free(struct MetFiring *firing);

// Index of the fulfilled case, or -1 for NULL.
//
// # Safety
// `firing` must be NULL or a live handle.
int64_t met_firing_case_index(const struct MetFiring *firing);

// Number of consumed events, 0 for NULL.
//
// # Safety
// `firing` must be NULL or a live handle.
size_t met_firing_event_count(const struct MetFiring *firing);

// The invocation body a function would receive, as JSON. Free with
// [`met_string_free`].
//
// # Safety
// `firing` must be NULL or a live handle.
char *met_firing_json(const struct MetFiring *firing);

// Replays a JSON array of events (`{id, type, createdAt, payload?}`, payload
// base64) through the reference evaluator. `*out_json` receives a JSON array
// of invocation bodies; free it with [`met_string_free`].
//
// # Safety
// String arguments must be NUL-terminated; `out_json` writable.
enum MetStatus met_oracle_replay_json(const char *rule_text,
                                      const char *events_json,
                                      char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MET_H */
