#pragma once

/* C interface to the neuresonance engine. All strings returned through
 * `char**` out-parameters are heap allocated and must be released with
 * nr_free_string. Failing calls return a non-zero nr_status; the message is
 * available from nr_last_error() on the same thread. */

#include <stddef.h>
#include <stdint.h>

#if defined(NR_BUILDING_LIBRARY)
#define NR_API __attribute__((visibility("default")))
#else
#define NR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nr_status {
  NR_OK = 0,
  NR_ERR_CONFIG = 1,
  NR_ERR_INPUT = 2,
  NR_ERR_FRAMING = 3,
  NR_ERR_GAP = 4,
  NR_ERR_DEGENERATE = 5,
  NR_ERR_IO = 6,
  NR_ERR_STATE = 7,
  NR_ERR_INSUFFICIENT_CHANNELS = 8,
  NR_ERR_INTERNAL = 99
} nr_status;

typedef struct nr_engine nr_engine;

NR_API const char* nr_version(void);
NR_API const char* nr_last_error(void);
NR_API void nr_free_string(char* s);
NR_API void nr_set_log_level(int level); /* 0 debug, 1 info, 2 warn, 3 error, 4 off */

/* Metric primitives. */
NR_API nr_status nr_ccorr(const double* a, const double* b, size_t n, double* out);
NR_API nr_status nr_fisher_z(double r, double* out);
NR_API nr_status nr_inverse_fisher_z(double z, double* out);
NR_API nr_status nr_pool_top_k(const double* r, size_t n, size_t k, double* out);
/* Writes the 32-byte OSC packet into buf (capacity cap); *written gets the size. */
NR_API nr_status nr_encode_osc(float value, int32_t level, uint8_t* buf, size_t cap, size_t* written);
/* Decodes one wire frame; *json receives {"stream_id","timestamp_us","channels"}. */
NR_API nr_status nr_decode_frame(const uint8_t* bytes, size_t n, char** json);

/* Engine lifecycle. config_json may be NULL for defaults. */
NR_API nr_status nr_engine_create(const char* config_json, nr_engine** out);
NR_API void nr_engine_destroy(nr_engine* engine);
/* Blocking runs; *summary_json (nullable) receives the run summary.
 * speed <= 0 means as fast as possible. */
NR_API nr_status nr_engine_run_replay(nr_engine* engine, const char* recording, double speed, char** summary_json);
NR_API nr_status nr_engine_run_synth(nr_engine* engine, const char* synth_json, double speed, char** summary_json);
NR_API nr_status nr_engine_run_live(nr_engine* engine, int port, char** summary_json);
NR_API int nr_engine_live_port(const nr_engine* engine);
NR_API int nr_engine_control_port(const nr_engine* engine);
NR_API void nr_engine_stop(nr_engine* engine);
NR_API nr_status nr_engine_command(nr_engine* engine, const char* command_json, char** ack_json);
/* All updates published so far as a JSON array. */
NR_API nr_status nr_engine_updates(const nr_engine* engine, char** json);
NR_API nr_status nr_engine_latency(const nr_engine* engine, char** json);
NR_API nr_status nr_engine_state(const nr_engine* engine, char** json);

/* Offline tools. */
NR_API nr_status nr_synth_write_recording(const char* dir, const char* synth_json, const char* segments_json);
/* options_json may be NULL; when out_dir is non-NULL report.json/report.csv are written there. */
NR_API nr_status nr_analyze(const char* recording, const char* options_json, const char* out_dir, char** report_json);
/* Latency benchmark over at least `updates` synthetic windows. */
NR_API nr_status nr_bench(size_t updates, uint64_t seed, char** json);

#ifdef __cplusplus
}
#endif
