/* Exercises the C API through the shared library only. */
#define _DEFAULT_SOURCE
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

#include "ctxsr/ctxsr.h"

static int failures = 0;

#define EXPECT(cond)                                                    \
    do {                                                                \
        if (!(cond)) {                                                  \
            fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
            ++failures;                                                 \
        }                                                               \
    } while (0)

static const char* tiny =
    "{\"run_name\": \"capi\", \"dataset\": {\"count\": 1, \"hr_size\": 16},"
    " \"model\": {\"width\": 8, \"time_dim\": 8, \"feature_dim\": 8}}";

int main(void) {
    ctxsr_config* cfg = NULL;
    char buf[4096];
    size_t needed = 0;

    EXPECT(ctxsr_config_default(NULL) == CTXSR_ERR_INVALID_ARGUMENT);
    EXPECT(strlen(ctxsr_last_error()) > 0);
    EXPECT(ctxsr_config_parse("{\n\"bogus\": 1}", &cfg) == CTXSR_ERR_VALIDATION);
    EXPECT(strstr(ctxsr_last_error(), "line 2") != NULL);
    EXPECT(ctxsr_config_load("/nonexistent/cfg.json", &cfg) == CTXSR_ERR_IO);

    EXPECT(ctxsr_config_parse(tiny, &cfg) == CTXSR_OK);
    EXPECT(ctxsr_last_error()[0] == '\0');
    EXPECT(ctxsr_config_hash(cfg, NULL, 0, &needed) == CTXSR_OK);
    EXPECT(needed == 65);
    EXPECT(ctxsr_config_hash(cfg, buf, 10, NULL) == CTXSR_ERR_VALIDATION);
    EXPECT(ctxsr_config_hash(cfg, buf, sizeof buf, NULL) == CTXSR_OK);
    EXPECT(strlen(buf) == 64);

    uint64_t seed = 1;
    EXPECT(ctxsr_config_set_seed(cfg, 42) == CTXSR_OK);
    EXPECT(ctxsr_config_seed(cfg, &seed) == CTXSR_OK && seed == 42);

    char tmpl[] = "/tmp/ctxsr_capi_XXXXXX";
    EXPECT(mkdtemp(tmpl) != NULL);
    ctxsr_context ctx = {tmpl, 0, NULL, NULL};
    char dir[4096];
    EXPECT(ctxsr_cmd_degrade(cfg, &ctx, dir, sizeof dir) == CTXSR_OK);
    EXPECT(strstr(dir, "capi/degrade") != NULL);
    EXPECT(ctxsr_cmd_degrade(cfg, &ctx, dir, sizeof dir) == CTXSR_ERR_EXISTS);
    ctx.force = 1;
    EXPECT(ctxsr_cmd_degrade(cfg, &ctx, dir, sizeof dir) == CTXSR_OK);
    EXPECT(ctxsr_cmd_eval("/nonexistent.ckpt", dir, &ctx, NULL, 0) != CTXSR_OK);
    EXPECT(ctxsr_cmd_train(cfg, NULL, &ctx, NULL, 0) == CTXSR_ERR_INVALID_ARGUMENT);

    ctxsr_config_free(cfg);
    char cmd[4200];
    snprintf(cmd, sizeof cmd, "rm -rf '%s'", tmpl);
    if (system(cmd) != 0) ++failures;

    EXPECT(strcmp(ctxsr_status_name(CTXSR_ERR_GRADCHECK), "gradient check failed") == 0);
    printf("%s (%d failures)\n", failures ? "FAILED" : "OK", failures);
    return failures ? 1 : 0;
}
