#include <cstring>
#include <string>

#include "ctxsr/commands.hpp"
#include "ctxsr/training.hpp"
#include "ctxsr/ctxsr.h"

struct ctxsr_config {
    ctxsr::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

ctxsr_status status_of(ctxsr::ErrorKind k) {
    using ctxsr::ErrorKind;
    switch (k) {
        case ErrorKind::Dimension: return CTXSR_ERR_DIMENSION;
        case ErrorKind::Validation: return CTXSR_ERR_VALIDATION;
        case ErrorKind::Format: return CTXSR_ERR_FORMAT;
        case ErrorKind::Io: return CTXSR_ERR_IO;
        case ErrorKind::Numeric: return CTXSR_ERR_NUMERIC;
        case ErrorKind::Exists: return CTXSR_ERR_EXISTS;
    }
    return CTXSR_ERR_INTERNAL;
}

template <class F>
ctxsr_status guarded(F&& f) {
    g_last_error.clear();
    try {
        return f();
    } catch (const ctxsr::Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
    } catch (const std::exception& e) {
        g_last_error = e.what();
    } catch (...) {
        g_last_error = "unknown error";
    }
    return CTXSR_ERR_INTERNAL;
}

ctxsr_status invalid(const char* what) {
    g_last_error = std::string("invalid argument: ") + what;
    return CTXSR_ERR_INVALID_ARGUMENT;
}

ctxsr_status copy_out(const std::string& s, char* buf, size_t len, size_t* needed) {
    if (needed) *needed = s.size() + 1;
    if (!buf) return CTXSR_OK;
    if (len < s.size() + 1) {
        g_last_error = "buffer too small (" + std::to_string(s.size() + 1) + " bytes needed)";
        return CTXSR_ERR_VALIDATION;
    }
    std::memcpy(buf, s.c_str(), s.size() + 1);
    return CTXSR_OK;
}

ctxsr::cli::Context to_context(const ctxsr_context* c) {
    ctxsr::cli::Context ctx;
    if (!c) return ctx;
    if (c->out_dir) ctx.out = c->out_dir;
    ctx.force = c->force != 0;
    if (c->message) {
        auto fn = c->message;
        void* user = c->user;
        ctx.message = [fn, user](const std::string& line) { fn(line.c_str(), user); };
    }
    return ctx;
}

}  // namespace

extern "C" {

const char* ctxsr_last_error(void) { return g_last_error.c_str(); }

const char* ctxsr_status_name(ctxsr_status s) {
    switch (s) {
        case CTXSR_OK: return "ok";
        case CTXSR_ERR_INVALID_ARGUMENT: return "invalid argument";
        case CTXSR_ERR_VALIDATION: return "validation error";
        case CTXSR_ERR_DIMENSION: return "dimension error";
        case CTXSR_ERR_FORMAT: return "format error";
        case CTXSR_ERR_IO: return "io error";
        case CTXSR_ERR_NUMERIC: return "numeric error";
        case CTXSR_ERR_EXISTS: return "output exists";
        case CTXSR_ERR_GRADCHECK: return "gradient check failed";
        case CTXSR_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* ctxsr_version(void) { return "0.1.0"; }

ctxsr_status ctxsr_config_default(ctxsr_config** out) {
    if (!out) return invalid("out");
    return guarded([&] {
        *out = new ctxsr_config{};
        return CTXSR_OK;
    });
}

ctxsr_status ctxsr_config_load(const char* path, ctxsr_config** out) {
    if (!path || !out) return invalid("path/out");
    return guarded([&] {
        *out = new ctxsr_config{ctxsr::RunConfig::load(path)};
        return CTXSR_OK;
    });
}

ctxsr_status ctxsr_config_parse(const char* json_text, ctxsr_config** out) {
    if (!json_text || !out) return invalid("json_text/out");
    return guarded([&] {
        *out = new ctxsr_config{ctxsr::RunConfig::parse(json_text)};
        return CTXSR_OK;
    });
}

void ctxsr_config_free(ctxsr_config* cfg) { delete cfg; }

ctxsr_status ctxsr_config_set_seed(ctxsr_config* cfg, uint64_t seed) {
    if (!cfg) return invalid("cfg");
    cfg->cfg.seed = seed;
    return CTXSR_OK;
}

ctxsr_status ctxsr_config_seed(const ctxsr_config* cfg, uint64_t* seed) {
    if (!cfg || !seed) return invalid("cfg/seed");
    *seed = cfg->cfg.seed;
    return CTXSR_OK;
}

ctxsr_status ctxsr_config_hash(const ctxsr_config* cfg, char* buf, size_t len, size_t* needed) {
    if (!cfg) return invalid("cfg");
    return guarded([&] { return copy_out(cfg->cfg.hash(), buf, len, needed); });
}

ctxsr_status ctxsr_config_canonical(const ctxsr_config* cfg, char* buf, size_t len, size_t* needed) {
    if (!cfg) return invalid("cfg");
    return guarded([&] { return copy_out(cfg->cfg.canonical_text(), buf, len, needed); });
}

ctxsr_status ctxsr_cmd_degrade(const ctxsr_config* cfg, const ctxsr_context* ctx, char* result_dir, size_t len) {
    if (!cfg) return invalid("cfg");
    return guarded([&] {
        return copy_out(ctxsr::cli::cmd_degrade(cfg->cfg, to_context(ctx)).string(), result_dir, len, nullptr);
    });
}

ctxsr_status ctxsr_cmd_train(const ctxsr_config* cfg, const char* data_dir, const ctxsr_context* ctx,
                             char* result_dir, size_t len) {
    if (!cfg || !data_dir) return invalid("cfg/data_dir");
    return guarded([&] {
        return copy_out(ctxsr::cli::cmd_train(cfg->cfg, data_dir, to_context(ctx)).string(), result_dir, len,
                        nullptr);
    });
}

ctxsr_status ctxsr_cmd_sample(const char* checkpoint, const char* lr_input, int steps, uint64_t seed,
                              const ctxsr_context* ctx, char* result_dir, size_t len) {
    if (!checkpoint || !lr_input) return invalid("checkpoint/lr_input");
    return guarded([&] {
        return copy_out(ctxsr::cli::cmd_sample(checkpoint, lr_input, steps, seed, to_context(ctx)).string(),
                        result_dir, len, nullptr);
    });
}

ctxsr_status ctxsr_cmd_eval(const char* checkpoint, const char* data_dir, const ctxsr_context* ctx,
                            char* result_dir, size_t len) {
    if (!checkpoint || !data_dir) return invalid("checkpoint/data_dir");
    return guarded([&] {
        return copy_out(ctxsr::cli::cmd_eval(checkpoint, data_dir, to_context(ctx)).string(), result_dir, len,
                        nullptr);
    });
}

ctxsr_status ctxsr_cmd_sweep(const char* checkpoint, const char* data_dir, const int* steps, size_t n_steps,
                             const uint64_t* seeds, size_t n_seeds, const ctxsr_context* ctx, char* result_dir,
                             size_t len) {
    if (!checkpoint || !data_dir) return invalid("checkpoint/data_dir");
    if ((n_steps && !steps) || (n_seeds && !seeds)) return invalid("steps/seeds");
    return guarded([&] {
        std::vector<int> sl(steps, steps + n_steps);
        std::vector<uint64_t> ss(seeds, seeds + n_seeds);
        if (sl.empty() || ss.empty()) {
            const auto cfg = ctxsr::diffusion::load_checkpoint(checkpoint).config;
            if (sl.empty()) sl = cfg.metrics.sweep_steps;
            if (ss.empty()) ss = cfg.metrics.sweep_seeds;
        }
        return copy_out(ctxsr::cli::cmd_sweep(checkpoint, data_dir, sl, ss, to_context(ctx)).string(), result_dir,
                        len, nullptr);
    });
}

ctxsr_status ctxsr_cmd_ablate(const ctxsr_config* cfg, const char* data_dir, const ctxsr_context* ctx,
                              char* result_dir, size_t len) {
    if (!cfg || !data_dir) return invalid("cfg/data_dir");
    return guarded([&] {
        return copy_out(ctxsr::cli::cmd_ablate(cfg->cfg, data_dir, to_context(ctx)).string(), result_dir, len,
                        nullptr);
    });
}

ctxsr_status ctxsr_gradcheck(double tol, int seeds, double h, ctxsr_message_fn message, void* user) {
    return guarded([&] {
        bool ok = true;
        for (const auto& r : ctxsr::cli::cmd_gradcheck(tol, seeds, h)) {
            ok = ok && r.passed;
            if (message) message(ctxsr::gradcheck::format_report(r).c_str(), user);
        }
        if (!ok) {
            g_last_error = "gradient check failed";
            return CTXSR_ERR_GRADCHECK;
        }
        return CTXSR_OK;
    });
}

}  // extern "C"
