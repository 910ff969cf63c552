#pragma once

#include <functional>
#include <string>

#include "ctxsr/ops.hpp"
#include "ctxsr/rng.hpp"

namespace ctxsr::nn {

using ad::Var;

// Callback receiving (qualified name, parameter) for every learnable tensor.
using Visitor = std::function<void(const std::string&, Var&)>;

inline Var parameter(Tensor init) { return Var(std::move(init), true); }

struct Linear {
    Var weight;  // (out, in)
    Var bias;    // (out)

    static Linear init(int64_t in, int64_t out, Rng& rng, double gain = 1.0);
    static Linear zeros(int64_t in, int64_t out);
    Var operator()(const Var& x) const { return ad::linear(x, weight, bias); }
    void visit(const std::string& prefix, const Visitor& f);
};

struct Conv {
    Var weight;  // (out, in, k, k)
    Var bias;    // (out)
    int stride = 1;
    int pad = 0;

    static Conv init(int64_t in, int64_t out, int k, int stride, Rng& rng, double gain = 1.0);
    static Conv zeros(int64_t in, int64_t out, int k = 1);
    Var operator()(const Var& x) const { return ad::conv2d(x, weight, bias, stride, pad); }
    void visit(const std::string& prefix, const Visitor& f);
};

struct LayerNorm {
    Var gain;  // initialized to 1
    Var bias;  // initialized to 0

    static LayerNorm init(int64_t channels);
    Var operator()(const Var& x) const { return ad::layer_norm(x, gain, bias); }
    void visit(const std::string& prefix, const Visitor& f);
};

// Throws NumericError naming `stage` if the value holds NaN/Inf.
void require_finite(const Var& v, const std::string& stage);

}  // namespace ctxsr::nn
