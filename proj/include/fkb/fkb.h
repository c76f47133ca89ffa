/*
 * fkb: federated KAN/MLP benchmark simulator, C interface.
 *
 * All objects are opaque handles created by fkb_*_create/from/load style
 * functions and released with the matching fkb_*_free. Functions return an
 * fkb_status; on failure fkb_last_error() describes the problem. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with fkb_string_free.
 *
 * Handles are not synchronized: a handle may be used by one thread at a time.
 * Distinct handles may be used concurrently.
 */
#ifndef FKB_FKB_H
#define FKB_FKB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(FKB_BUILDING_LIBRARY)
#    define FKB_API __declspec(dllexport)
#  else
#    define FKB_API __declspec(dllimport)
#  endif
#else
#  define FKB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fkb_status {
  FKB_OK = 0,
  FKB_ERR_INVALID_ARGUMENT = 1, /* null handle or out-pointer, bad enum value */
  FKB_ERR_CONFIG = 2,           /* unreadable/invalid config or sweep file */
  FKB_ERR_IO = 3,
  FKB_ERR_FORMAT = 4,           /* malformed FKB dataset, CSV or report */
  FKB_ERR_PARTITION = 5,
  FKB_ERR_DATA = 6,             /* dataset generation, empty client data */
  FKB_ERR_DIVERGED = 7,         /* every seed (or sweep point) failed */
  FKB_ERR_SELF_CHECK = 8,       /* gradient check above tolerance */
  FKB_ERR_INTERNAL = 9
} fkb_status;

typedef struct fkb_config fkb_config;
typedef struct fkb_report fkb_report;
typedef struct fkb_sweep fkb_sweep;
typedef struct fkb_dataset fkb_dataset;

FKB_API const char* fkb_version(void);
/* Message for the last failed call on this thread; empty if none. */
FKB_API const char* fkb_last_error(void);
FKB_API const char* fkb_status_name(fkb_status status);
/* Process exit code for a status: 0 ok, 2 config, 3 runtime/data, 4 self-check. */
FKB_API int fkb_exit_code(fkb_status status);
FKB_API void fkb_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

FKB_API fkb_status fkb_config_default(fkb_config** out);
FKB_API fkb_status fkb_config_from_file(const char* path, fkb_config** out);
FKB_API fkb_status fkb_config_from_json(const char* json, fkb_config** out);
/* Sets a dotted key such as "local.epochs". `value` is parsed as JSON when
 * possible, otherwise taken as a string. The config is revalidated; on
 * failure it is left unchanged. */
FKB_API fkb_status fkb_config_set(fkb_config* cfg, const char* dotted_key, const char* value);
/* Fully resolved configuration, defaults included. */
FKB_API fkb_status fkb_config_to_json(const fkb_config* cfg, char** out_json);
FKB_API void fkb_config_free(fkb_config* cfg);

/* ---- federated runs --------------------------------------------------- */

/* threads <= 0 uses FKB_THREADS, then hardware concurrency. Results do not
 * depend on the thread count. Returns FKB_ERR_DIVERGED (with *out still set)
 * when every seed diverged. */
FKB_API fkb_status fkb_run(const fkb_config* cfg, int threads, fkb_report** out);
/* Writes <dir>/report.json and <dir>/report.csv, creating dir if needed. */
FKB_API fkb_status fkb_report_write(const fkb_report* report, const char* dir, int include_timing);
FKB_API fkb_status fkb_report_json(const fkb_report* report, int include_timing, char** out_json);
FKB_API fkb_status fkb_report_csv(const fkb_report* report, char** out_csv);
FKB_API fkb_status fkb_report_summary(const fkb_report* report, double* accuracy_mean, double* accuracy_std,
                                      size_t* completed_seeds, size_t* failed_seeds);
/* Final accuracy series of one seed: fills up to `capacity` values and
 * reports the round count through *rounds. Failed seeds have no rounds. */
FKB_API fkb_status fkb_report_accuracies(const fkb_report* report, size_t seed_index, double* values,
                                         size_t capacity, size_t* rounds);
FKB_API void fkb_report_free(fkb_report* report);

/* ---- sweeps ----------------------------------------------------------- */

typedef void (*fkb_log_fn)(const char* line, void* user);

FKB_API fkb_status fkb_sweep_from_file(const char* path, fkb_sweep** out);
/* "fig1", "fig2" or "ablation". */
FKB_API fkb_status fkb_sweep_preset(const char* name, fkb_sweep** out);
/* Dotted override applied to every point's base configuration. */
FKB_API fkb_status fkb_sweep_set_base(fkb_sweep* sweep, const char* dotted_key, const char* value);
FKB_API fkb_status fkb_sweep_set_output(fkb_sweep* sweep, const char* dir);
FKB_API size_t fkb_sweep_point_count(const fkb_sweep* sweep);
/* Returns FKB_OK when at least one point succeeded. */
FKB_API fkb_status fkb_sweep_run(const fkb_sweep* sweep, int threads, fkb_log_fn log, void* user,
                                 size_t* succeeded);
FKB_API void fkb_sweep_free(fkb_sweep* sweep);

/* ---- gradient self-check ---------------------------------------------- */

FKB_API size_t fkb_model_preset_count(void);
FKB_API const char* fkb_model_preset_name(size_t index);

#define FKB_GRADCHECK_CORRUPT 1u /* negative control: perturbs the analytic gradient */

/* Compares backward against central differences on 3 random batches.
 * Returns FKB_ERR_SELF_CHECK when the relative error exceeds 1e-4. `table`
 * (optional) receives a per-tensor error listing. */
FKB_API fkb_status fkb_gradcheck(const char* preset, int grid, uint64_t seed, unsigned flags,
                                 double* max_rel_error, char** table);

/* ---- datasets and partitions ------------------------------------------ */

/* Dataset described by the config's "dataset" section, before splitting. */
FKB_API fkb_status fkb_dataset_from_config(const fkb_config* cfg, fkb_dataset** out);
FKB_API fkb_status fkb_dataset_load(const char* path, fkb_dataset** out);
FKB_API fkb_status fkb_dataset_save(const fkb_dataset* ds, const char* path);
FKB_API fkb_status fkb_dataset_shape(const fkb_dataset* ds, size_t* samples, size_t* dim, int* classes);
FKB_API void fkb_dataset_free(fkb_dataset* ds);

/* Dirichlet-partitions the config's training split over `clients`, writes
 * the clients x classes histogram to csv_path (optional) and returns the
 * heterogeneity score. */
FKB_API fkb_status fkb_partition_stats(const fkb_config* cfg, int clients, double alpha, uint64_t seed,
                                       const char* csv_path, double* score);

/* ---- CSV tools -------------------------------------------------------- */

/* Validates any CSV written by this library; *kind is "report", "summary"
 * or "histogram" (static storage). */
FKB_API fkb_status fkb_csv_validate(const char* path, const char** kind, size_t* rows);
/* Concatenates report CSVs under a single header. */
FKB_API fkb_status fkb_csv_merge(const char* const* paths, size_t count, const char* out_path, size_t* rows);
/* Checks that report.csv rows match report.json exactly. */
FKB_API fkb_status fkb_report_check(const char* json_path, const char* csv_path);

#ifdef __cplusplus
}
#endif

#endif /* FKB_FKB_H */
