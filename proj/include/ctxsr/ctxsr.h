#ifndef CTXSR_CTXSR_H
#define CTXSR_CTXSR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(CTXSR_BUILDING_LIBRARY)
#define CTXSR_API __attribute__((visibility("default")))
#else
#define CTXSR_API
#endif

typedef enum ctxsr_status {
    CTXSR_OK = 0,
    CTXSR_ERR_INVALID_ARGUMENT = 1, /* null handle or pointer */
    CTXSR_ERR_VALIDATION = 2,       /* bad config or parameter; config errors carry a line number */
    CTXSR_ERR_DIMENSION = 3,
    CTXSR_ERR_FORMAT = 4,           /* malformed file */
    CTXSR_ERR_IO = 5,
    CTXSR_ERR_NUMERIC = 6,          /* non-finite values */
    CTXSR_ERR_EXISTS = 7,           /* output directory exists and force is off */
    CTXSR_ERR_GRADCHECK = 8,        /* at least one op failed its gradient check */
    CTXSR_ERR_INTERNAL = 9,
} ctxsr_status;

/* Message of the last failed call on this thread; "" when none. */
CTXSR_API const char* ctxsr_last_error(void);
CTXSR_API const char* ctxsr_status_name(ctxsr_status s);
CTXSR_API const char* ctxsr_version(void);

/* Receives progress lines and warnings. */
typedef void (*ctxsr_message_fn)(const char* line, void* user);

typedef struct ctxsr_config ctxsr_config;

CTXSR_API ctxsr_status ctxsr_config_default(ctxsr_config** out);
CTXSR_API ctxsr_status ctxsr_config_load(const char* path, ctxsr_config** out);
CTXSR_API ctxsr_status ctxsr_config_parse(const char* json_text, ctxsr_config** out);
CTXSR_API void ctxsr_config_free(ctxsr_config* cfg);
CTXSR_API ctxsr_status ctxsr_config_set_seed(ctxsr_config* cfg, uint64_t seed);
CTXSR_API ctxsr_status ctxsr_config_seed(const ctxsr_config* cfg, uint64_t* seed);
/* Copies a NUL-terminated string into buf. Fails with VALIDATION when it
   does not fit; *needed (if non-null) receives the required size. */
CTXSR_API ctxsr_status ctxsr_config_hash(const ctxsr_config* cfg, char* buf, size_t len, size_t* needed);
CTXSR_API ctxsr_status ctxsr_config_canonical(const ctxsr_config* cfg, char* buf, size_t len, size_t* needed);

/* Output location shared by the commands below. */
typedef struct ctxsr_context {
    const char* out_dir; /* null: "out" */
    int force;           /* nonzero: replace an existing output directory */
    ctxsr_message_fn message;
    void* user;
} ctxsr_context;

/* Each command writes into <out_dir>/<run_name>/<command>/ and copies that
   path into result_dir (may be null). */
CTXSR_API ctxsr_status ctxsr_cmd_degrade(const ctxsr_config* cfg, const ctxsr_context* ctx, char* result_dir,
                                         size_t len);
CTXSR_API ctxsr_status ctxsr_cmd_train(const ctxsr_config* cfg, const char* data_dir, const ctxsr_context* ctx,
                                       char* result_dir, size_t len);
/* steps == 0: the checkpoint's sample_steps. */
CTXSR_API ctxsr_status ctxsr_cmd_sample(const char* checkpoint, const char* lr_input, int steps, uint64_t seed,
                                        const ctxsr_context* ctx, char* result_dir, size_t len);
CTXSR_API ctxsr_status ctxsr_cmd_eval(const char* checkpoint, const char* data_dir, const ctxsr_context* ctx,
                                      char* result_dir, size_t len);
/* steps/seeds may be null (count 0) to use the checkpoint config's lists. */
CTXSR_API ctxsr_status ctxsr_cmd_sweep(const char* checkpoint, const char* data_dir, const int* steps,
                                       size_t n_steps, const uint64_t* seeds, size_t n_seeds,
                                       const ctxsr_context* ctx, char* result_dir, size_t len);
CTXSR_API ctxsr_status ctxsr_cmd_ablate(const ctxsr_config* cfg, const char* data_dir, const ctxsr_context* ctx,
                                        char* result_dir, size_t len);

/* One report line per registered op (worst seed) goes to `message`.
   Returns CTXSR_ERR_GRADCHECK when any op fails. */
CTXSR_API ctxsr_status ctxsr_gradcheck(double tol, int seeds, double h, ctxsr_message_fn message, void* user);

#ifdef __cplusplus
}
#endif

#endif
