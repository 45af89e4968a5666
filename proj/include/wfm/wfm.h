/* C interface to the panorama inpainting library.
 *
 * Every call returns a wfm_status; on failure wfm_last_error() describes the
 * problem (thread-local, valid until the next call on the same thread).
 * Objects are opaque and released with their matching destroy function.
 * Strings returned through out-parameters are freed with wfm_string_free. */
#ifndef WFM_WFM_H
#define WFM_WFM_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define WFM_API __declspec(dllexport)
#else
#define WFM_API __attribute__((visibility("default")))
#endif

typedef enum wfm_status {
    WFM_OK = 0,
    WFM_ERR_INVALID_ARGUMENT = 1, /* bad argument or violated precondition */
    WFM_ERR_CONFIG = 2,           /* unusable configuration */
    WFM_ERR_IO = 3,               /* file missing, unreadable or malformed */
    WFM_ERR_NUMERIC = 4,          /* non-finite loss during training */
    WFM_ERR_INTERNAL = 5
} wfm_status;

typedef struct wfm_trainer wfm_trainer;
typedef struct wfm_model wfm_model;
typedef struct wfm_report wfm_report;

typedef void (*wfm_log_fn)(const char* message, void* user);

WFM_API const char* wfm_last_error(void);
WFM_API const char* wfm_version(void);
WFM_API void wfm_string_free(char* s);

/* Training. `preset` and `resume_checkpoint` may be NULL. When resuming, the
 * checkpoint's own config is used; a non-NULL `config_path` then only
 * supplies new `epochs` and `max_steps` limits. */
WFM_API wfm_status wfm_trainer_create(const char* config_path, const char* preset,
                                      const char* resume_checkpoint, wfm_log_fn log,
                                      void* user, wfm_trainer** out);
WFM_API wfm_status wfm_trainer_fit(wfm_trainer* trainer);
WFM_API wfm_status wfm_trainer_save(const wfm_trainer* trainer, const char* path);
WFM_API wfm_status wfm_trainer_step_count(const wfm_trainer* trainer, int64_t* out);
WFM_API void wfm_trainer_destroy(wfm_trainer* trainer);

/* Generator loaded from a checkpoint. */
WFM_API wfm_status wfm_model_load(const char* checkpoint_path, wfm_model** out);
WFM_API wfm_status wfm_model_parameter_count(const wfm_model* model, int64_t* out);
/* Mask PNG: 255 (>= 128) marks holes. Known pixels are kept in the output. */
WFM_API wfm_status wfm_model_inpaint_file(wfm_model* model, const char* image_png,
                                          const char* mask_png, const char* out_png);
/* Full 5 x 5 grid over a toy directory or the Structured3D test split. A NULL
 * or empty `data_root` falls back to $WFM_DATA_ROOT. */
WFM_API wfm_status wfm_model_evaluate(wfm_model* model, const char* data_root, int composite,
                                      wfm_log_fn log, void* user, wfm_report** out);
WFM_API void wfm_model_destroy(wfm_model* model);

/* Reports. `format` is "csv", "md" or "json". */
WFM_API wfm_status wfm_report_load(const char* json_path, wfm_report** out);
WFM_API wfm_status wfm_report_save(const wfm_report* report, const char* json_path);
WFM_API wfm_status wfm_report_format(const wfm_report* report, const char* format, char** out);
WFM_API void wfm_report_destroy(wfm_report* report);

/* Writes n masks <kind>_<lo>-<hi>_seed<S>.png (255 = hole) to out_dir, mask i
 * using seed + i. Segmentation masks
 * use the semantics of seeded toy rooms of the same size. */
WFM_API wfm_status wfm_make_masks(const char* kind, double lo, double hi, int n, int width,
                                  int height, uint64_t seed, const char* out_dir);

/* Writes n toy room pairs plus index.json to out_dir. */
WFM_API wfm_status wfm_make_toy_data(int n, int width, int height, uint64_t seed,
                                     const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* WFM_WFM_H */
