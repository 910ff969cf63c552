#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctxsr/tensor.hpp"

namespace ctxsr::gradcheck {

// Central differences (f(x + h·e_i) − f(x − h·e_i)) / 2h per coordinate.
// Throws NumericError naming the coordinate when f is non-finite.
Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

struct GradReport {
    std::string op_name;
    double max_rel_err = 0;
    std::string worst_index;  // "<tensor>[<flat index>]"
    double tolerance = 0;
    bool passed = false;
    int64_t coordinates = 0;  // number of derivatives compared
    int resamples = 0;        // draws rejected for sitting near a kink
};

const std::vector<std::string>& registered_ops();

// Builds `op_name` at miniature shapes from `seed`, then compares the
// analytic gradient of a random projection of its output against central
// differences for every input and parameter. Relative error uses the
// denominator max(|a|, |n|, 1e-8). Draws whose nearest kink (clamp bound,
// |·| zero, max tie) lies within 10·h are redrawn. Throws ValidationError
// listing the registered ops for an unknown name.
GradReport check_op(const std::string& op_name, double tol, uint64_t seed, double h = 1e-5);

std::string format_report(const GradReport& r);

}  // namespace ctxsr::gradcheck
