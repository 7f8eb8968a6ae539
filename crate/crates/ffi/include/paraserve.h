#ifndef PARASERVE_H
#define PARASERVE_H

/* Generated by cbindgen from paraserve-ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum ParaStatus {
  PARA_STATUS_OK = 0,
  PARA_STATUS_NULL_POINTER = 1,
  PARA_STATUS_INVALID_ARGUMENT = 2,
  PARA_STATUS_IO = 3,
  PARA_STATUS_FORMAT = 4,
  PARA_STATUS_MODEL = 5,
  PARA_STATUS_ADAPTER = 6,
  PARA_STATUS_BUFFER_TOO_SMALL = 7,
  PARA_STATUS_PANIC = 8,
} ParaStatus;

// Codes for the `precision` arguments.
typedef enum ParaPrecision {
  PARA_PRECISION_F32 = 0,
  PARA_PRECISION_F64 = 1,
} ParaPrecision;

// Codes for the `method` arguments.
typedef enum ParaMethod {
  PARA_METHOD_NONE = 0,
  PARA_METHOD_PARA = 1,
  PARA_METHOD_LORA = 2,
  PARA_METHOD_IA3 = 3,
} ParaMethod;

// Opaque adapter set bound to the precision of the model it was made for.
typedef struct ParaAdapter ParaAdapter;

// Opaque frozen backbone.
typedef struct ParaModel ParaModel;

// Backbone shape. Activation, positions and norm epsilon take the engine
// defaults (SiLU, rotary, 1e-5).
typedef struct ParaModelConfig {
  uint32_t n_layers;
  uint32_t d_model;
  uint32_t d_ffn;
  uint32_t n_heads;
  uint32_t vocab_size;
  uint32_t max_seq_len;
} ParaModelConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failed call on this thread; empty after a
// successful call. Valid until the next call on the same thread.
const char *para_last_error(void);

// Library version as a static NUL-terminated string.
const char *para_version(void);

// Writes the default desk configuration into `out`.
//
// # Safety
// `out` must be null or point to writable memory for one config.
enum ParaStatus para_config_desk(struct ParaModelConfig *out);

// Creates a randomly initialized backbone.
//
// # Safety
// `config` must point to a valid config and `out` to writable storage for
// one handle pointer.
enum ParaStatus para_model_new_random(const struct ParaModelConfig *config,
                                      uint64_t seed,
                                      uint32_t precision,
                                      struct ParaModel **out);

// Loads a weights file written by `paraserve init` or [`para_model_save`].
//
// # Safety
// `path` must be a NUL-terminated string; `out` as for
// [`para_model_new_random`].
enum ParaStatus para_model_load(const char *path, uint32_t precision, struct ParaModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum ParaStatus para_model_save(const struct ParaModel *model, const char *path);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum ParaStatus para_model_config(const struct ParaModel *model, struct ParaModelConfig *out);

// Releases a model. Null is ignored. Adapters made for it stay valid.
//
// # Safety
// `model` must be null or a handle not yet freed.
void para_model_free(struct ParaModel *model);

// Fresh adapter with default hyper-parameters (r = 12; LoRA rank 16 on Q
// and V). Fresh adapters leave the backbone output unchanged.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum ParaStatus para_adapter_init(const struct ParaModel *model,
                                  uint32_t method,
                                  uint64_t seed,
                                  struct ParaAdapter **out);

// Loads an adapter file and checks it against `model`.
//
// # Safety
// `model` must be a live handle, `path` a NUL-terminated string and `out`
// writable.
enum ParaStatus para_adapter_load(const struct ParaModel *model,
                                  const char *path,
                                  struct ParaAdapter **out);

// # Safety
// `adapter` must be a live handle and `path` a NUL-terminated string.
enum ParaStatus para_adapter_save(const struct ParaAdapter *adapter, const char *path);

// # Safety
// `adapter` must be a live handle; `out` must be writable.
enum ParaStatus para_adapter_method(const struct ParaAdapter *adapter, uint32_t *out);

// # Safety
// `adapter` must be null or a handle not yet freed.
void para_adapter_free(struct ParaAdapter *adapter);

// Generates `max_new` tokens after `prompt` with beam search of width
// `beam` (1 is greedy), writing them to `out_tokens`. `adapter` may be null
// for the bare backbone. `out_len` receives the number of tokens written;
// if `out_cap < max_new` nothing is generated, `out_len` receives the
// required capacity and `BUFFER_TOO_SMALL` is returned.
// `out_generator_invocations` may be null.
//
// # Safety
// `prompt` must point to `prompt_len` ids, `out_tokens` to `out_cap`
// writable ids, and the handles must be live.
enum ParaStatus para_generate(const struct ParaModel *model,
                              const struct ParaAdapter *adapter,
                              const uint32_t *prompt,
                              size_t prompt_len,
                              size_t max_new,
                              size_t beam,
                              uint32_t *out_tokens,
                              size_t out_cap,
                              size_t *out_len,
                              size_t *out_generator_invocations);

// Tunable-parameter count for `method` with default hyper-parameters.
// `out_headline` excludes the vector-generator bias; `out_with_bias`
// includes it.
//
// # Safety
// `config` must be valid; the outputs must be writable.
enum ParaStatus para_count_params(const struct ParaModelConfig *config,
                                  uint32_t method,
                                  uint64_t *out_headline,
                                  uint64_t *out_with_bias);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARASERVE_H */
