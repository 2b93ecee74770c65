#ifndef CADRE_H
#define CADRE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by every entry point.
 */
typedef enum CadreStatus {
  CADRE_STATUS_OK = 0,
  CADRE_STATUS_NULL_ARGUMENT = 1,
  CADRE_STATUS_INVALID_UTF8 = 2,
  CADRE_STATUS_PARSE = 3,
  CADRE_STATUS_SCHEMA = 4,
  CADRE_STATUS_CONFIG = 5,
  CADRE_STATUS_RULE = 6,
  CADRE_STATUS_REMEDY = 7,
  CADRE_STATUS_PCA = 8,
  CADRE_STATUS_IO = 9,
  CADRE_STATUS_NETWORK = 10,
  CADRE_STATUS_OTHER = 11,
  CADRE_STATUS_PANIC = 12,
} CadreStatus;

/*
 Opaque table handle.
 */
typedef struct CadreTable CadreTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Owned by the
 library; valid until the next call on the same thread.
 */
const char *cadre_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *cadre_version(void);

/*
 Parses CSV text into a table. `meta_json` is a JSON object with the
 optional keys `client_id`, `label_column`, `sensitive_feature`,
 `sensitive_groups`, `quasi_identifiers` and `positive_label`; NULL
 means no metadata.

 # Safety
 `csv` and `meta_json` (when not NULL) must be NUL-terminated strings and
 `out` must be writable.
 */
enum CadreStatus cadre_table_from_csv(const char *csv,
                                      const char *meta_json,
                                      struct CadreTable **out);

/*
 Loads a CSV or NDJSON file (by extension), using its schema sidecar
 when one exists.

 # Safety
 As [`cadre_table_from_csv`], with `path` a NUL-terminated string.
 */
enum CadreStatus cadre_table_load(const char *path, const char *meta_json, struct CadreTable **out);

/*
 Frees a table. NULL is ignored.

 # Safety
 `table` must come from this library and not have been freed.
 */
void cadre_table_free(struct CadreTable *table);

/*
 # Safety
 `table` must be a live handle and `out` writable.
 */
enum CadreStatus cadre_table_n_rows(const struct CadreTable *table, size_t *out);

/*
 # Safety
 `table` must be a live handle and `out` writable.
 */
enum CadreStatus cadre_table_n_columns(const struct CadreTable *table, size_t *out);

/*
 Table as CSV text, freed with [`cadre_string_free`].

 # Safety
 `table` must be a live handle and `out` writable.
 */
enum CadreStatus cadre_table_to_csv(const struct CadreTable *table, char **out);

/*
 Evaluates the metric called `name` (e.g. `duplicate_proportion`).

 # Safety
 `table` must be a live handle, `name` a NUL-terminated string and `out`
 writable.
 */
enum CadreStatus cadre_metric_evaluate(const struct CadreTable *table,
                                       const char *name,
                                       double *out);

/*
 Parses `expr` (e.g. `"k_anonymity_level <= 1"`) and reports whether
 `observed` violates it.

 # Safety
 `expr` must be a NUL-terminated string and `violated` writable.
 */
enum CadreStatus cadre_rule_check(const char *expr, double observed, bool *violated);

/*
 Runs the built-in module `module` on `table`. `rule` overrides the
 module's default rule when not NULL. Writes the outcome summary as JSON
 to `outcome_json` and, when `table_after` is not NULL, a new handle to
 the remediated table.

 # Safety
 Pointers as documented; `outcome_json` must be writable.
 */
enum CadreStatus cadre_module_run(const struct CadreTable *table,
                                  const char *module,
                                  const char *rule,
                                  size_t max_iterations,
                                  char **outcome_json,
                                  struct CadreTable **table_after);

/*
 Runs the experiment in `config_path` with every client in-process and
 returns report.json as a string. `timestamp` fixes the report time when
 not NULL; `out_dir`, when not NULL, also receives report.json,
 report.html and run.log.

 # Safety
 String arguments must be NUL-terminated; `report_json` writable.
 */
enum CadreStatus cadre_simulate(const char *config_path,
                                const char *timestamp,
                                const char *out_dir,
                                char **report_json);

/*
 Frees a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void cadre_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CADRE_H */
