#include "ctxsr/nn.hpp"

#include <cmath>

#include "ctxsr/error.hpp"

namespace ctxsr::nn {

Linear Linear::init(int64_t in, int64_t out, Rng& rng, double gain) {
    return {parameter(randn({out, in}, rng, gain / std::sqrt(static_cast<double>(in)))), parameter(Tensor({out}))};
}

Linear Linear::zeros(int64_t in, int64_t out) { return {parameter(Tensor({out, in})), parameter(Tensor({out}))}; }

void Linear::visit(const std::string& prefix, const Visitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
}

Conv Conv::init(int64_t in, int64_t out, int k, int stride, Rng& rng, double gain) {
    const double fan_in = static_cast<double>(in * k * k);
    Conv c{parameter(randn({out, in, k, k}, rng, gain / std::sqrt(fan_in))), parameter(Tensor({out}))};
    c.stride = stride;
    c.pad = k / 2;
    return c;
}

Conv Conv::zeros(int64_t in, int64_t out, int k) {
    Conv c{parameter(Tensor({out, in, k, k})), parameter(Tensor({out}))};
    c.pad = k / 2;
    return c;
}

void Conv::visit(const std::string& prefix, const Visitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
}

LayerNorm LayerNorm::init(int64_t channels) {
    return {parameter(Tensor({channels}, 1.0)), parameter(Tensor({channels}, 0.0))};
}

void LayerNorm::visit(const std::string& prefix, const Visitor& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
}

void require_finite(const Var& v, const std::string& stage) {
    if (!v.value().all_finite()) throw NumericError(stage, "non-finite values in output " + shape_str(v.shape()));
}

}  // namespace ctxsr::nn
