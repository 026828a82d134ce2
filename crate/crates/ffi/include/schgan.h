/* C interface to the schgan cross-modal hashing library. */

#ifndef SCHGAN_H
#define SCHGAN_H

/* Generated with cbindgen:0.26.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Retrieval direction selector for evaluation.
 */
typedef enum SchganDirection {
  SCHGAN_DIRECTION_TEXT_TO_IMAGE = 0,
  SCHGAN_DIRECTION_IMAGE_TO_TEXT = 1,
  SCHGAN_DIRECTION_BOTH = 2,
} SchganDirection;

/**
 * Feature modality selector.
 */
typedef enum SchganModality {
  SCHGAN_MODALITY_IMAGE = 0,
  SCHGAN_MODALITY_TEXT = 1,
} SchganModality;

/**
 * Status of an FFI call. Non-zero values match the CLI's exit codes where
 * a counterpart exists.
 */
typedef enum SchganStatus {
  SCHGAN_STATUS_OK = 0,
  /**
   * A required pointer was NULL or a buffer had the wrong size.
   */
  SCHGAN_STATUS_INVALID_ARGUMENT = 1,
  SCHGAN_STATUS_CONFIG_ERROR = 2,
  SCHGAN_STATUS_DATA_ERROR = 3,
  SCHGAN_STATUS_RUNTIME_ERROR = 4,
} SchganStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SchganDataset SchganDataset;

/**
 * Opaque model handle holding both trained players.
 */
typedef struct SchganModel SchganModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *schgan_version(void);

/**
 * Returns (and clears) the current thread's last error message, or NULL.
 * Free the result with [`schgan_string_free`].
 */
char *schgan_last_error_message(void);

/**
 * Frees a string returned by this library. NULL is accepted.
 *
 * # Safety
 * `s` must have been returned by a schgan function and not freed before.
 */
void schgan_string_free(char *s);

/**
 * Loads a dataset from a manifest path into a new handle.
 *
 * # Safety
 * `manifest_path` must be a valid NUL-terminated string; `out` must be a
 * valid pointer to a handle slot.
 */
enum SchganStatus schgan_dataset_load(const char *manifest_path, struct SchganDataset **out);

/**
 * Generates a synthetic dataset from a JSON [`SynthConfig`]; when
 * `out_dir` is non-NULL the dataset files are also written there.
 *
 * # Safety
 * `config_json` must be valid NUL-terminated UTF-8; `out_dir` may be NULL;
 * `out` must be a valid pointer to a handle slot.
 */
enum SchganStatus schgan_dataset_synth(const char *config_json,
                                       const char *out_dir,
                                       struct SchganDataset **out);

/**
 * Releases a dataset handle. NULL is accepted.
 *
 * # Safety
 * `ds` must be a handle from this library, not freed before.
 */
void schgan_dataset_free(struct SchganDataset *ds);

/**
 * Number of retrieval-database items (labeled + unlabeled); 0 on NULL.
 *
 * # Safety
 * `ds` must be a live handle or NULL.
 */
uintptr_t schgan_dataset_database_size(const struct SchganDataset *ds);

/**
 * Number of query items; 0 on NULL.
 *
 * # Safety
 * `ds` must be a live handle or NULL.
 */
uintptr_t schgan_dataset_query_count(const struct SchganDataset *ds);

/**
 * Trains on a dataset. `model_config_json` and `train_config_json` use the
 * same JSON schemas as the CLI config's `model` and `train` sections
 * (pass `"{}"` for all-default training). Returns a new model handle.
 *
 * # Safety
 * `ds` must be a live dataset handle; the JSON pointers must be valid
 * NUL-terminated UTF-8; `out` must be a valid pointer to a handle slot.
 */
enum SchganStatus schgan_train(const struct SchganDataset *ds,
                               const char *model_config_json,
                               const char *train_config_json,
                               struct SchganModel **out);

/**
 * Loads a model from a checkpoint file.
 *
 * # Safety
 * `path` must be valid NUL-terminated UTF-8; `out` must be a valid pointer
 * to a handle slot.
 */
enum SchganStatus schgan_model_load(const char *path, struct SchganModel **out);

/**
 * Saves a model to a checkpoint file (without trainer state).
 *
 * # Safety
 * `model` must be a live handle; `path` valid NUL-terminated UTF-8.
 */
enum SchganStatus schgan_model_save(const struct SchganModel *model, const char *path);

/**
 * Releases a model handle. NULL is accepted.
 *
 * # Safety
 * `model` must be a handle from this library, not freed before.
 */
void schgan_model_free(struct SchganModel *model);

/**
 * Hash code length in bits; 0 on NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
uint32_t schgan_model_code_bits(const struct SchganModel *model);

/**
 * Input feature dimension of one pathway; 0 on NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
uint32_t schgan_model_input_dim(const struct SchganModel *model, enum SchganModality modality);

/**
 * Encodes one feature vector into a packed binary code using the
 * discriminator's hash function (the retrieval pathway). `out_code` must
 * hold exactly `ceil(code_bits / 8)` bytes; bits are packed LSB-first.
 *
 * # Safety
 * `features` must point to `dim` doubles; `out_code` to `out_len` writable
 * bytes; `model` must be a live handle.
 */
enum SchganStatus schgan_encode(const struct SchganModel *model,
                                enum SchganModality modality,
                                const double *features,
                                uintptr_t dim,
                                uint8_t *out_code,
                                uintptr_t out_len);

/**
 * Hamming distance between two packed codes of `code_bits` bits, as
 * written by [`schgan_encode`]. Returns -1 on invalid input.
 *
 * # Safety
 * `a` and `b` must each point to `ceil(code_bits / 8)` readable bytes.
 */
int64_t schgan_hamming(uint32_t code_bits, const uint8_t *a, const uint8_t *b);

/**
 * Evaluates a model on a dataset's query split and returns the metrics
 * report as a JSON string (free with [`schgan_string_free`]). The top-K
 * grid is the library default clipped to the database size.
 *
 * # Safety
 * `model` and `ds` must be live handles; `out_json` must be a valid
 * pointer to a string slot.
 */
enum SchganStatus schgan_evaluate(const struct SchganModel *model,
                                  const struct SchganDataset *ds,
                                  enum SchganDirection direction,
                                  char **out_json);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SCHGAN_H */
