#ifndef SKILLFORGE_H
#define SKILLFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Values below 50 match the CLI exit codes.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_OTHER = 1,
  SF_STATUS_USAGE = 2,
  SF_STATUS_CONFIG = 3,
  SF_STATUS_FIXTURE_MISSING = 10,
  SF_STATUS_BACKEND_UNAVAILABLE = 11,
  SF_STATUS_EMPTY_INSTRUCTION = 12,
  SF_STATUS_MALFORMED_RESPONSE = 13,
  SF_STATUS_UNPARSABLE_PHRASE = 14,
  SF_STATUS_IO = 20,
  SF_STATUS_SCHEMA_VERSION_MISMATCH = 21,
  SF_STATUS_CORRUPT_LIBRARY = 22,
  SF_STATUS_LIBRARY_STATE = 23,
  SF_STATUS_SKILL_GAP = 30,
  SF_STATUS_SKILL_NOT_TRAINED = 31,
  SF_STATUS_UNKNOWN_CONDITION = 32,
  SF_STATUS_EVAL = 40,
  SF_STATUS_NULL_ARGUMENT = 50,
  SF_STATUS_INVALID_UTF8 = 51,
  SF_STATUS_INVALID_JSON = 52,
  SF_STATUS_INTERNAL = 99,
} SfStatus;

/**
 * Demo-collection strategy for [`sf_data_cost`].
 */
typedef enum SfStrategy {
  SF_STRATEGY_END_TO_END = 0,
  SF_STRATEGY_SKILL_BASED = 1,
} SfStrategy;

/**
 * Opaque engine handle: perception, planner and lexicon configured from a
 * project root.
 */
typedef struct SfEngine SfEngine;

/**
 * Opaque skill library handle.
 */
typedef struct SfLibrary SfLibrary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call on the same thread.
 */
const char *sf_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer previously returned through an out-parameter
 * of this library and not yet freed.
 */
void sf_string_free(char *s);

/**
 * Creates an empty library at `granularity` ("coarse", "medium" or "fine").
 *
 * # Safety
 * `granularity` must be a valid C string and `out` a valid pointer.
 */
enum SfStatus sf_library_new(const char *granularity, struct SfLibrary **out);

/**
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum SfStatus sf_library_load(const char *path, struct SfLibrary **out);

/**
 * Writes the library atomically to `path`.
 *
 * # Safety
 * `lib` must be a live handle and `path` a valid C string.
 */
enum SfStatus sf_library_save(const struct SfLibrary *lib, const char *path);

/**
 * Releases a library handle. Null is ignored.
 *
 * # Safety
 * `lib` must be null or a handle from this library that was not yet freed.
 */
void sf_library_free(struct SfLibrary *lib);

/**
 * # Safety
 * `lib` must be a live handle and `out` a valid pointer.
 */
enum SfStatus sf_library_version(const struct SfLibrary *lib, uint64_t *out);

/**
 * The library in its on-disk JSON form.
 *
 * # Safety
 * `lib` must be a live handle and `out` a valid pointer.
 */
enum SfStatus sf_library_to_json(const struct SfLibrary *lib, char **out);

/**
 * Marks a skill Trained with `demos` demonstrations, bound to an executor.
 *
 * # Safety
 * `lib` must be a live handle; the strings must be valid C strings.
 */
enum SfStatus sf_library_record_training(struct SfLibrary *lib,
                                         const char *skill_id,
                                         uint32_t demos,
                                         const char *executor_binding);

/**
 * Builds an engine for the project at `root`, reading `root/skillforge.toml`
 * when present.
 *
 * # Safety
 * `root` must be a valid C string and `out` a valid pointer.
 */
enum SfStatus sf_engine_new(const char *root, struct SfEngine **out);

/**
 * Releases an engine handle. Null is ignored.
 *
 * # Safety
 * `engine` must be null or a handle from this library that was not yet freed.
 */
void sf_engine_free(struct SfEngine *engine);

/**
 * Decomposes `instruction` in scene `scene_id`; writes the plan as JSON.
 *
 * # Safety
 * `engine` must be a live handle; the strings must be valid C strings and
 * `out_json` a valid pointer.
 */
enum SfStatus sf_engine_plan(const struct SfEngine *engine,
                             const char *instruction,
                             const char *scene_id,
                             char **out_json);

/**
 * Gap report of a plan (JSON as produced by [`sf_engine_plan`]).
 *
 * # Safety
 * Handles must be live; `plan_json` a valid C string; `out_json` valid.
 */
enum SfStatus sf_engine_gap_report(const struct SfEngine *engine,
                                   const struct SfLibrary *lib,
                                   const char *plan_json,
                                   char **out_json);

/**
 * Registers the plan's missing skills and writes the data manifest as JSON.
 *
 * # Safety
 * Handles must be live; `plan_json` a valid C string; `out_json` valid.
 */
enum SfStatus sf_engine_update_cycle(const struct SfEngine *engine,
                                     struct SfLibrary *lib,
                                     const char *plan_json,
                                     uint32_t demos_per_skill,
                                     char **out_json);

/**
 * Spatial relations for a JSON array of scene objects.
 *
 * # Safety
 * `objects_json` must be a valid C string and `out_json` a valid pointer.
 */
enum SfStatus sf_infer_relations(const char *objects_json, char **out_json);

/**
 * Demo count of a task spec (JSON) under `strategy`.
 *
 * # Safety
 * `spec_json` must be a valid C string and `out` a valid pointer.
 */
enum SfStatus sf_data_cost(const char *spec_json, enum SfStrategy strategy, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKILLFORGE_H */
