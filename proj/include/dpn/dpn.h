/* C interface to the dpointnet library.
 *
 * Every function returns dpn_status. On failure the message of the last error
 * on the calling thread is available from dpn_last_error() until the next
 * failing call. Strings returned through char** are owned by the caller and
 * released with dpn_string_free. Handles are not thread-safe; distinct handles
 * may be used from distinct threads.
 */
#ifndef DPN_DPN_H
#define DPN_DPN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DPN_API __declspec(dllexport)
#else
#define DPN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dpn_status {
  DPN_OK = 0,
  DPN_ERR_INVALID_ARGUMENT = 1,
  DPN_ERR_DIMENSION = 2,
  DPN_ERR_EMPTY_GROUP = 3,
  DPN_ERR_FORMAT = 4,
  DPN_ERR_IO = 5,
  DPN_ERR_VALIDATION = 6,
  DPN_ERR_NUMERIC = 7,
  DPN_ERR_CHECK_FAILED = 8,
  DPN_ERR_INTERNAL = 9
} dpn_status;

typedef struct dpn_config dpn_config;
typedef struct dpn_cloud dpn_cloud;
typedef struct dpn_model dpn_model;

DPN_API const char* dpn_version(void);
DPN_API const char* dpn_last_error(void);
DPN_API const char* dpn_status_string(dpn_status status);
DPN_API void dpn_string_free(char* s);

/* Run configuration. preset is "desk" or "paper" (NULL means "desk"). */
DPN_API dpn_status dpn_config_create(const char* preset, dpn_config** out);
DPN_API void dpn_config_free(dpn_config* cfg);
/* Applies a JSON object file on top of cfg. Unknown keys fail validation. */
DPN_API dpn_status dpn_config_load(dpn_config* cfg, const char* path);
/* Sets one key to a JSON-encoded value, e.g. ("radius_m", "2.5"). */
DPN_API dpn_status dpn_config_set(dpn_config* cfg, const char* key, const char* json_value);
DPN_API dpn_status dpn_config_validate(const dpn_config* cfg);
DPN_API dpn_status dpn_config_to_json(const dpn_config* cfg, char** out_json);

/* Point clouds: xyz plus one intensity channel. */
DPN_API dpn_status dpn_cloud_read_kitti(const char* path, dpn_cloud** out);
DPN_API dpn_status dpn_cloud_write_kitti(const dpn_cloud* cloud, const char* path);
/* xyz: n x 3 row-major; intensity may be NULL (zeros). */
DPN_API dpn_status dpn_cloud_from_arrays(const double* xyz, const double* intensity, size_t n,
                                         dpn_cloud** out);
DPN_API void dpn_cloud_free(dpn_cloud* cloud);
DPN_API size_t dpn_cloud_size(const dpn_cloud* cloud);
/* Copies n x 3 coordinates into xyz (capacity in points). */
DPN_API dpn_status dpn_cloud_xyz(const dpn_cloud* cloud, double* xyz, size_t capacity);

/* Sampling primitives on raw n x 3 arrays. */
DPN_API dpn_status dpn_fps(const double* xyz, size_t n, size_t m, size_t start_index,
                           uint32_t* out_indices);
/* out_indices: num_seeds x k; out_found (optional): distinct in-radius count per seed. */
DPN_API dpn_status dpn_ball_query(const double* xyz, size_t n, const uint32_t* seed_indices,
                                  size_t num_seeds, double radius, size_t k, uint64_t rng_seed,
                                  uint32_t* out_indices, uint32_t* out_found);

/* Detector built from a configuration; input is xyz + intensity. */
DPN_API dpn_status dpn_model_create(const dpn_config* cfg, dpn_model** out);
DPN_API dpn_status dpn_model_load(const char* ckpt_json_path, dpn_model** out);
DPN_API dpn_status dpn_model_save(const dpn_model* model, const char* ckpt_json_path,
                                  const char* ckpt_blob_path);
DPN_API void dpn_model_free(dpn_model* model);
DPN_API size_t dpn_model_num_seeds(const dpn_model* model);
/* Top-head inference. logits: num_seeds; residuals: num_seeds x 7 (optional);
 * seed_xyz: num_seeds x 3 (optional). */
DPN_API dpn_status dpn_model_infer(const dpn_model* model, const dpn_cloud* cloud, uint64_t seed,
                                   double* logits, double* residuals, double* seed_xyz);

/* Subcommand runners. Each writes its artifacts plus manifest.json into
 * out_dir and returns a JSON summary through out_json (optional). */
DPN_API dpn_status dpn_run_check(const dpn_config* cfg, const char* out_dir, char** out_json);
/* scenes_dir: directory of scene JSON files from dpn_run_gen, or NULL for synthetic. */
DPN_API dpn_status dpn_run_train(const dpn_config* cfg, const char* scenes_dir,
                                 const char* out_dir, char** out_json);
DPN_API dpn_status dpn_run_bench(const dpn_config* cfg, const char* out_dir, char** out_json);
/* axis: scheme | head_layer | radius | k. */
DPN_API dpn_status dpn_run_sweep(const dpn_config* cfg, const char* axis, const char* out_dir,
                                 char** out_json);
DPN_API dpn_status dpn_run_gen(const dpn_config* cfg, size_t num_scenes, const char* out_dir,
                               char** out_json);

/* Test hook: 1 drops the fusion step in every FA layer, 0 restores it. */
DPN_API void dpn_set_fault_injection(int drop_fusion);

#ifdef __cplusplus
}
#endif

#endif /* DPN_DPN_H */
