#include "ctxsr/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ctxsr/error.hpp"

namespace ctxsr::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool wants(const Node& self, size_t i) {
    return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

void require_same(const Var& a, const Var& b, const char* op) { require_same_shape(a.value(), b.value(), op); }

// Output element i reads input element src[i]. Used for every pure
// rearrangement (token/feature-map transposes, windows, head splits).
Var gather(const Var& x, Shape out_shape, std::vector<int64_t> src, const char* op) {
    Tensor out(std::move(out_shape));
    const double* in = x.value().data();
    for (size_t i = 0; i < src.size(); ++i) out[static_cast<int64_t>(i)] = in[src[i]];
    return make_result(std::move(out), {x}, op, [src = std::move(src)](Node& self) {
        Tensor& dx = self.inputs[0]->grad_buffer();
        const double* g = self.grad.data();
        for (size_t i = 0; i < src.size(); ++i) dx[src[i]] += g[i];
    });
}

template <class F, class DF>
Var unary(const Var& x, const char* op, F f, DF df) {
    Tensor out(x.shape());
    const Tensor& in = x.value();
    for (int64_t i = 0; i < in.numel(); ++i) out[i] = f(in[i]);
    return make_result(std::move(out), {x}, op, [df](Node& self) {
        const Tensor& in = self.inputs[0]->value;
        Tensor& dx = self.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < in.numel(); ++i) dx[i] += self.grad[i] * df(in[i]);
    });
}

Var scalar_result(double v, std::vector<Var> inputs, const char* op, std::function<void(Node&)> fn) {
    return make_result(Tensor({1}, std::vector<double>{v}), std::move(inputs), op, std::move(fn));
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, "add", [](Node& self) {
        if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
        if (wants(self, 1)) self.inputs[1]->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, "sub", [](Node& self) {
        if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
        if (wants(self, 1)) {
            Tensor& db = self.inputs[1]->grad_buffer();
            for (int64_t i = 0; i < db.numel(); ++i) db[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, "mul", [](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        if (wants(self, 0)) {
            Tensor& da = self.inputs[0]->grad_buffer();
            for (int64_t i = 0; i < da.numel(); ++i) da[i] += self.grad[i] * bv[i];
        }
        if (wants(self, 1)) {
            Tensor& db = self.inputs[1]->grad_buffer();
            for (int64_t i = 0; i < db.numel(); ++i) db[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= s;
    return make_result(std::move(out), {a}, "scale", [s](Node& self) {
        Tensor& da = self.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < da.numel(); ++i) da[i] += s * self.grad[i];
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return scalar_result(total, {a}, "sum", [](Node& self) {
        Tensor& da = self.inputs[0]->grad_buffer();
        for (auto& v : da.values()) v += self.grad[0];
    });
}

Var weighted_sum(const Var& a, const Tensor& w) {
    require_same_shape(a.value(), w, "weighted_sum");
    double total = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) total += a.value()[i] * w[i];
    return scalar_result(total, {a}, "weighted_sum", [w](Node& self) {
        Tensor& da = self.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < da.numel(); ++i) da[i] += self.grad[0] * w[i];
    });
}

Var mean_squared_error(const Var& a, const Var& b) {
    require_same(a, b, "mean_squared_error");
    const int64_t n = a.value().numel();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = a.value()[i] - b.value()[i];
        total += d * d;
    }
    return scalar_result(total / static_cast<double>(n), {a, b}, "mse", [n](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        const double k = 2.0 * self.grad[0] / static_cast<double>(n);
        if (wants(self, 0)) {
            Tensor& da = self.inputs[0]->grad_buffer();
            for (int64_t i = 0; i < n; ++i) da[i] += k * (av[i] - bv[i]);
        }
        if (wants(self, 1)) {
            Tensor& db = self.inputs[1]->grad_buffer();
            for (int64_t i = 0; i < n; ++i) db[i] -= k * (av[i] - bv[i]);
        }
    });
}

Var mean_abs_error(const Var& a, const Var& b) {
    require_same(a, b, "mean_abs_error");
    const int64_t n = a.value().numel();
    double total = 0.0;
    double margin = std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < n; ++i) {
        double d = std::abs(a.value()[i] - b.value()[i]);
        total += d;
        margin = std::min(margin, d);
    }
    if (KinkMonitor::active()) KinkMonitor::report(margin);
    return scalar_result(total / static_cast<double>(n), {a, b}, "mae", [n](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        const double k = self.grad[0] / static_cast<double>(n);
        for (size_t side = 0; side < 2; ++side) {
            if (!wants(self, side)) continue;
            Tensor& d = self.inputs[side]->grad_buffer();
            const double sgn = side == 0 ? 1.0 : -1.0;
            for (int64_t i = 0; i < n; ++i) {
                double diff = av[i] - bv[i];
                if (diff > 0) d[i] += sgn * k;
                else if (diff < 0) d[i] -= sgn * k;
            }
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x.shape();
    if (w.value().rank() != 2 || xs.empty() || xs.back() != w.dim(1))
        throw DimensionError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(w.shape()));
    const int64_t in = w.dim(1), out_dim = w.dim(0);
    if (b.defined() && (b.value().rank() != 1 || b.dim(0) != out_dim))
        throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match " + std::to_string(out_dim));
    const int64_t rows = x.value().numel() / in;
    Shape os = xs;
    os.back() = out_dim;
    Tensor out(os);
    CMapMat X(x.value().data(), rows, in);
    CMapMat W(w.value().data(), out_dim, in);
    MapMat Y(out.data(), rows, out_dim);
    Y.noalias() = X * W.transpose();
    if (b.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out_dim);
    return make_result(std::move(out), {x, w, b}, "linear", [rows, in, out_dim](Node& self) {
        CMapMat G(self.grad.data(), rows, out_dim);
        if (wants(self, 0)) {
            MapMat DX(self.inputs[0]->grad_buffer().data(), rows, in);
            DX.noalias() += G * CMapMat(self.inputs[1]->value.data(), out_dim, in);
        }
        if (wants(self, 1)) {
            MapMat DW(self.inputs[1]->grad_buffer().data(), out_dim, in);
            DW.noalias() += G.transpose() * CMapMat(self.inputs[0]->value.data(), rows, in);
        }
        if (wants(self, 2)) {
            Eigen::Map<Eigen::RowVectorXd> DB(self.inputs[2]->grad_buffer().data(), out_dim);
            DB += G.colwise().sum();
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    require_rank(x.value(), 4, "conv2d input");
    require_rank(w.value(), 4, "conv2d weight");
    const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Cin || w.dim(3) != k)
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    if (b.defined() && (b.value().rank() != 1 || b.dim(0) != Cout))
        throw DimensionError("conv2d: bias " + shape_str(b.shape()) + " does not match " + std::to_string(Cout));
    if (stride < 1 || H + 2 * pad < k || W + 2 * pad < k)
        throw DimensionError("conv2d: kernel " + std::to_string(k) + " does not fit input " + shape_str(x.shape()));
    const int64_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
    const int64_t K = Cin * k * k, P = Ho * Wo;

    // im2col for every batch item; kept for the backward pass.
    auto cols = std::make_shared<std::vector<double>>(static_cast<size_t>(B * K * P), 0.0);
    const Tensor& xv = x.value();
    for (int64_t n = 0; n < B; ++n) {
        double* c = cols->data() + n * K * P;
        for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t ky = 0; ky < k; ++ky)
                for (int64_t kx = 0; kx < k; ++kx) {
                    double* row = c + ((ci * k + ky) * k + kx) * P;
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < W) row[oy * Wo + ox] = xv.at(n, ci, iy, ix);
                        }
                    }
                }
    }

    Tensor out({B, Cout, Ho, Wo});
    CMapMat Wm(w.value().data(), Cout, K);
    for (int64_t n = 0; n < B; ++n) {
        MapMat Y(out.data() + n * Cout * P, Cout, P);
        Y.noalias() = Wm * CMapMat(cols->data() + n * K * P, K, P);
        if (b.defined()) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(b.value().data(), Cout);
    }

    return make_result(std::move(out), {x, w, b}, "conv2d", [=](Node& self) {
        CMapMat Wm(self.inputs[1]->value.data(), Cout, K);
        RowMat dcols(K, P);
        for (int64_t n = 0; n < B; ++n) {
            CMapMat G(self.grad.data() + n * Cout * P, Cout, P);
            if (wants(self, 1)) {
                MapMat DW(self.inputs[1]->grad_buffer().data(), Cout, K);
                DW.noalias() += G * CMapMat(cols->data() + n * K * P, K, P).transpose();
            }
            if (wants(self, 2)) {
                Eigen::Map<Eigen::VectorXd> DB(self.inputs[2]->grad_buffer().data(), Cout);
                DB += G.rowwise().sum();
            }
            if (wants(self, 0)) {
                dcols.noalias() = Wm.transpose() * G;
                Tensor& dx = self.inputs[0]->grad_buffer();
                for (int64_t ci = 0; ci < Cin; ++ci)
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const double* row = dcols.data() + ((ci * k + ky) * k + kx) * P;
                            for (int64_t oy = 0; oy < Ho; ++oy) {
                                const int64_t iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int64_t ox = 0; ox < Wo; ++ox) {
                                    const int64_t ix = ox * stride - pad + kx;
                                    if (ix >= 0 && ix < W) dx.at(n, ci, iy, ix) += row[oy * Wo + ox];
                                }
                            }
                        }
            }
        }
    });
}

Var silu(const Var& x) {
    return unary(
        x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v) {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Var gelu(const Var& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
        [](double v) {
            double t = std::tanh(c * (v + a * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
        });
}

Var sigmoid(const Var& x) {
    return unary(
        x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double v) {
            double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 - s);
        });
}

Var clamp(const Var& x, double lo, double hi) {
    if (KinkMonitor::active()) {
        double margin = std::numeric_limits<double>::infinity();
        for (double v : x.value().values()) margin = std::min({margin, std::abs(v - lo), std::abs(v - hi)});
        KinkMonitor::report(margin);
    }
    return unary(
        x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    const int64_t C = x.shape().back();
    if (gain.value().numel() != C || bias.value().numel() != C)
        throw DimensionError("layer_norm: gain/bias size does not match channel count " + std::to_string(C));
    const int64_t rows = x.value().numel() / C;
    Tensor out(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.value().numel()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* xv = x.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv + r * C;
        double mean = 0.0;
        for (int64_t c = 0; c < C; ++c) mean += row[c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (int64_t c = 0; c < C; ++c) {
            double h = (row[c] - mean) * is;
            (*xhat)[r * C + c] = h;
            out[r * C + c] = h * gain.value()[c] + bias.value()[c];
        }
    }
    return make_result(std::move(out), {x, gain, bias}, "layer_norm", [=](Node& self) {
        const Tensor& g = self.inputs[1]->value;
        std::vector<double> dh(static_cast<size_t>(C));
        for (int64_t r = 0; r < rows; ++r) {
            const double* gy = self.grad.data() + r * C;
            const double* h = xhat->data() + r * C;
            if (wants(self, 1)) {
                Tensor& dg = self.inputs[1]->grad_buffer();
                for (int64_t c = 0; c < C; ++c) dg[c] += gy[c] * h[c];
            }
            if (wants(self, 2)) {
                Tensor& db = self.inputs[2]->grad_buffer();
                for (int64_t c = 0; c < C; ++c) db[c] += gy[c];
            }
            if (wants(self, 0)) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    dh[c] = gy[c] * g[c];
                    mean_dh += dh[c];
                    mean_dh_h += dh[c] * h[c];
                }
                mean_dh /= static_cast<double>(C);
                mean_dh_h /= static_cast<double>(C);
                double* dx = self.inputs[0]->grad_buffer().data() + r * C;
                for (int64_t c = 0; c < C; ++c) dx[c] += (*inv_std)[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
            }
        }
    });
}

Var nchw_to_tokens(const Var& x) {
    require_rank(x.value(), 4, "nchw_to_tokens");
    const int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
    std::vector<int64_t> src(static_cast<size_t>(B * N * C));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) src[(b * N + n) * C + c] = (b * C + c) * N + n;
    return gather(x, {B, N, C}, std::move(src), "nchw_to_tokens");
}

Var tokens_to_nchw(const Var& x, int64_t height, int64_t width) {
    require_rank(x.value(), 3, "tokens_to_nchw");
    const int64_t B = x.dim(0), N = x.dim(1), C = x.dim(2);
    if (N != height * width)
        throw DimensionError("tokens_to_nchw: " + std::to_string(N) + " tokens cannot form " + std::to_string(height) +
                             "x" + std::to_string(width));
    std::vector<int64_t> src(static_cast<size_t>(B * N * C));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t n = 0; n < N; ++n) src[(b * C + c) * N + n] = (b * N + n) * C + c;
    return gather(x, {B, C, height, width}, std::move(src), "tokens_to_nchw");
}

namespace {
// Index of token (y, x) of the image inside the window-major ordering.
void window_maps(int64_t B, int64_t H, int64_t W, int64_t win, int64_t C, std::vector<int64_t>& to_window) {
    const int64_t wy = H / win, wx = W / win, per = win * win;
    to_window.assign(static_cast<size_t>(B * H * W * C), 0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gy = 0; gy < wy; ++gy)
            for (int64_t gx = 0; gx < wx; ++gx)
                for (int64_t iy = 0; iy < win; ++iy)
                    for (int64_t ix = 0; ix < win; ++ix) {
                        const int64_t g = (b * wy + gy) * wx + gx;
                        const int64_t t = iy * win + ix;
                        const int64_t src_tok = b * H * W + (gy * win + iy) * W + gx * win + ix;
                        for (int64_t c = 0; c < C; ++c) to_window[(g * per + t) * C + c] = src_tok * C + c;
                    }
}
}  // namespace

Var window_partition(const Var& x, int64_t height, int64_t width, int64_t win) {
    require_rank(x.value(), 3, "window_partition");
    if (win < 1 || height % win || width % win || x.dim(1) != height * width)
        throw DimensionError("window_partition: window " + std::to_string(win) + " does not tile " +
                             std::to_string(height) + "x" + std::to_string(width));
    const int64_t B = x.dim(0), C = x.dim(2);
    std::vector<int64_t> src;
    window_maps(B, height, width, win, C, src);
    return gather(x, {B * (height / win) * (width / win), win * win, C}, std::move(src), "window_partition");
}

Var window_merge(const Var& x, int64_t batch, int64_t height, int64_t width, int64_t win) {
    require_rank(x.value(), 3, "window_merge");
    const int64_t C = x.dim(2);
    if (win < 1 || height % win || width % win || x.dim(0) != batch * (height / win) * (width / win) ||
        x.dim(1) != win * win)
        throw DimensionError("window_merge: shape " + shape_str(x.shape()) + " does not match windows");
    std::vector<int64_t> fwd;
    window_maps(batch, height, width, win, C, fwd);
    std::vector<int64_t> src(fwd.size());
    for (size_t i = 0; i < fwd.size(); ++i) src[static_cast<size_t>(fwd[i])] = static_cast<int64_t>(i);
    return gather(x, {batch, height * width, C}, std::move(src), "window_merge");
}

Var split_heads(const Var& x, int64_t heads) {
    require_rank(x.value(), 3, "split_heads");
    const int64_t B = x.dim(0), N = x.dim(1), C = x.dim(2);
    if (heads < 1 || C % heads)
        throw DimensionError("split_heads: " + std::to_string(C) + " channels not divisible by " +
                             std::to_string(heads) + " heads");
    const int64_t dk = C / heads;
    std::vector<int64_t> src(static_cast<size_t>(B * N * C));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t d = 0; d < dk; ++d) src[((b * heads + h) * N + n) * dk + d] = (b * N + n) * C + h * dk + d;
    return gather(x, {B, heads, N, dk}, std::move(src), "split_heads");
}

Var merge_heads(const Var& x) {
    require_rank(x.value(), 4, "merge_heads");
    const int64_t B = x.dim(0), heads = x.dim(1), N = x.dim(2), dk = x.dim(3), C = heads * dk;
    std::vector<int64_t> src(static_cast<size_t>(B * N * C));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t d = 0; d < dk; ++d) src[(b * N + n) * C + h * dk + d] = ((b * heads + h) * N + n) * dk + d;
    return gather(x, {B, N, C}, std::move(src), "merge_heads");
}

Var slice_last(const Var& x, int64_t begin, int64_t count) {
    const Shape& xs = x.shape();
    const int64_t C = xs.back();
    if (begin < 0 || count < 0 || begin + count > C)
        throw DimensionError("slice_last: range out of bounds for " + shape_str(xs));
    const int64_t rows = x.value().numel() / C;
    Shape os = xs;
    os.back() = count;
    std::vector<int64_t> src(static_cast<size_t>(rows * count));
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < count; ++c) src[r * count + c] = r * C + begin + c;
    return gather(x, std::move(os), std::move(src), "slice_last");
}

Var max_normalize(const Var& x, double eps) {
    require_rank(x.value(), 4, "max_normalize");
    if (!(eps > 0)) throw ValidationError("max_normalize: eps must be positive");
    const int64_t slabs = x.dim(0) * x.dim(1), S = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    auto scale_of = std::make_shared<std::vector<double>>(static_cast<size_t>(slabs));
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(slabs), -1);
    const double* xv = x.value().data();
    const bool monitor = KinkMonitor::active();
    double margin = std::numeric_limits<double>::infinity();
    for (int64_t s = 0; s < slabs; ++s) {
        const double* p = xv + s * S;
        int64_t best = 0;
        double m1 = -1.0, m2 = -1.0;
        for (int64_t i = 0; i < S; ++i) {
            double a = std::abs(p[i]);
            if (a > m1) {
                m2 = m1;
                m1 = a;
                best = i;
            } else if (a > m2) {
                m2 = a;
            }
        }
        const double denom = std::max(m1, eps);
        (*scale_of)[s] = denom;
        if (m1 > eps) (*argmax)[s] = best;
        if (monitor) {
            margin = std::min(margin, std::abs(m1 - eps));
            if (m1 > eps && m2 >= 0) margin = std::min(margin, m1 - m2);
        }
        for (int64_t i = 0; i < S; ++i) out[s * S + i] = p[i] / denom;
    }
    if (monitor) KinkMonitor::report(margin);
    return make_result(std::move(out), {x}, "max_normalize", [=](Node& self) {
        const double* xv = self.inputs[0]->value.data();
        Tensor& dx = self.inputs[0]->grad_buffer();
        for (int64_t s = 0; s < slabs; ++s) {
            const double* g = self.grad.data() + s * S;
            const double* p = xv + s * S;
            const double d = (*scale_of)[s];
            double dot = 0.0;
            for (int64_t i = 0; i < S; ++i) {
                dx[s * S + i] += g[i] / d;
                dot += g[i] * p[i];
            }
            const int64_t j = (*argmax)[s];
            if (j >= 0) dx[s * S + j] -= (p[j] > 0 ? 1.0 : -1.0) * dot / (d * d);
        }
    });
}

namespace {
void check_qkv(const Var& q, const Var& k, const Var& v) {
    require_rank(q.value(), 4, "attention q");
    require_rank(k.value(), 4, "attention k");
    require_rank(v.value(), 4, "attention v");
    if (q.shape() != k.shape() || v.dim(0) != q.dim(0) || v.dim(1) != q.dim(1) || v.dim(2) != q.dim(2))
        throw DimensionError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                             shape_str(k.shape()) + ", " + shape_str(v.shape()));
}

void softmax_rows(RowMat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
    }
}
}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k) {
    require_rank(q, 4, "attention_weights q");
    require_same_shape(q, k, "attention_weights");
    const int64_t G = q.dim(0) * q.dim(1), N = q.dim(2), dk = q.dim(3);
    const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
    Tensor out({q.dim(0), q.dim(1), N, N});
    for (int64_t g = 0; g < G; ++g) {
        RowMat s = CMapMat(q.data() + g * N * dk, N, dk) * CMapMat(k.data() + g * N * dk, N, dk).transpose() * sc;
        softmax_rows(s);
        MapMat(out.data() + g * N * N, N, N) = s;
    }
    return out;
}

Var attention(const Var& q, const Var& k, const Var& v) {
    check_qkv(q, k, v);
    const int64_t G = q.dim(0) * q.dim(1), N = q.dim(2), dk = q.dim(3), dv = v.dim(3);
    const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(G * N * N));
    Tensor out({q.dim(0), q.dim(1), N, dv});
    for (int64_t g = 0; g < G; ++g) {
        RowMat s = CMapMat(q.value().data() + g * N * dk, N, dk) *
                   CMapMat(k.value().data() + g * N * dk, N, dk).transpose() * sc;
        softmax_rows(s);
        MapMat(probs->data() + g * N * N, N, N) = s;
        MapMat(out.data() + g * N * dv, N, dv).noalias() = s * CMapMat(v.value().data() + g * N * dv, N, dv);
    }
    return make_result(std::move(out), {q, k, v}, "attention", [=](Node& self) {
        const double* qv = self.inputs[0]->value.data();
        const double* kv = self.inputs[1]->value.data();
        const double* vv = self.inputs[2]->value.data();
        for (int64_t g = 0; g < G; ++g) {
            CMapMat P(probs->data() + g * N * N, N, N);
            CMapMat dO(self.grad.data() + g * N * dv, N, dv);
            if (wants(self, 2)) {
                MapMat dV(self.inputs[2]->grad_buffer().data() + g * N * dv, N, dv);
                dV.noalias() += P.transpose() * dO;
            }
            if (!wants(self, 0) && !wants(self, 1)) continue;
            RowMat dP = dO * CMapMat(vv + g * N * dv, N, dv).transpose();
            Eigen::VectorXd rowdot = (dP.array() * P.array()).rowwise().sum();
            RowMat dS = P.array() * (dP.colwise() - rowdot).array();
            dS *= sc;
            if (wants(self, 0)) {
                MapMat dQ(self.inputs[0]->grad_buffer().data() + g * N * dk, N, dk);
                dQ.noalias() += dS * CMapMat(kv + g * N * dk, N, dk);
            }
            if (wants(self, 1)) {
                MapMat dK(self.inputs[1]->grad_buffer().data() + g * N * dk, N, dk);
                dK.noalias() += dS.transpose() * CMapMat(qv + g * N * dk, N, dk);
            }
        }
    });
}

Var upsample_nearest(const Var& x, int factor) {
    require_rank(x.value(), 4, "upsample_nearest");
    if (factor < 1) throw ValidationError("upsample_nearest: factor must be >= 1");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Ho = H * factor, Wo = W * factor;
    std::vector<int64_t> src(static_cast<size_t>(B * C * Ho * Wo));
    for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t y = 0; y < Ho; ++y)
            for (int64_t xx = 0; xx < Wo; ++xx) src[(bc * Ho + y) * Wo + xx] = (bc * H + y / factor) * W + xx / factor;
    return gather(x, {B, C, Ho, Wo}, std::move(src), "upsample_nearest");
}

Var concat_channels(const Var& a, const Var& b) {
    require_rank(a.value(), 4, "concat_channels");
    require_rank(b.value(), 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), P = a.dim(2) * a.dim(3);
    Tensor out({B, Ca + Cb, a.dim(2), a.dim(3)});
    for (int64_t n = 0; n < B; ++n) {
        std::copy_n(a.value().data() + n * Ca * P, Ca * P, out.data() + n * (Ca + Cb) * P);
        std::copy_n(b.value().data() + n * Cb * P, Cb * P, out.data() + (n * (Ca + Cb) + Ca) * P);
    }
    return make_result(std::move(out), {a, b}, "concat_channels", [=](Node& self) {
        for (int64_t n = 0; n < B; ++n) {
            const double* g = self.grad.data() + n * (Ca + Cb) * P;
            if (wants(self, 0)) {
                double* d = self.inputs[0]->grad_buffer().data() + n * Ca * P;
                for (int64_t i = 0; i < Ca * P; ++i) d[i] += g[i];
            }
            if (wants(self, 1)) {
                double* d = self.inputs[1]->grad_buffer().data() + n * Cb * P;
                for (int64_t i = 0; i < Cb * P; ++i) d[i] += g[Ca * P + i];
            }
        }
    });
}

Var film(const Var& x, const Var& scale, const Var& shift) {
    require_rank(x.value(), 4, "film");
    const int64_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    if (scale.shape() != Shape{B, C} || shift.shape() != Shape{B, C})
        throw DimensionError("film: modulation must be " + shape_str({B, C}));
    Tensor out(x.shape());
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double s = 1.0 + scale.value()[bc], t = shift.value()[bc];
        for (int64_t i = 0; i < P; ++i) out[bc * P + i] = x.value()[bc * P + i] * s + t;
    }
    return make_result(std::move(out), {x, scale, shift}, "film", [=](Node& self) {
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& sv = self.inputs[1]->value;
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const double* g = self.grad.data() + bc * P;
            double gs = 0.0, gt = 0.0;
            for (int64_t i = 0; i < P; ++i) {
                gs += g[i] * xv[bc * P + i];
                gt += g[i];
            }
            if (wants(self, 0)) {
                double* d = self.inputs[0]->grad_buffer().data() + bc * P;
                const double s = 1.0 + sv[bc];
                for (int64_t i = 0; i < P; ++i) d[i] += g[i] * s;
            }
            if (wants(self, 1)) self.inputs[1]->grad_buffer()[bc] += gs;
            if (wants(self, 2)) self.inputs[2]->grad_buffer()[bc] += gt;
        }
    });
}

Var add_channel_bias(const Var& x, const Var& bias) {
    require_rank(x.value(), 4, "add_channel_bias");
    const int64_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    if (bias.shape() != Shape{B, C}) throw DimensionError("add_channel_bias: bias must be " + shape_str({B, C}));
    Tensor out = x.value();
    for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t i = 0; i < P; ++i) out[bc * P + i] += bias.value()[bc];
    return make_result(std::move(out), {x, bias}, "add_channel_bias", [=](Node& self) {
        if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
        if (wants(self, 1)) {
            Tensor& db = self.inputs[1]->grad_buffer();
            for (int64_t bc = 0; bc < B * C; ++bc)
                for (int64_t i = 0; i < P; ++i) db[bc] += self.grad[bc * P + i];
        }
    });
}

Var mean_tokens(const Var& x) {
    require_rank(x.value(), 3, "mean_tokens");
    const int64_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
    Tensor out({B, D});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t d = 0; d < D; ++d) out[b * D + d] += x.value()[(b * N + n) * D + d] / static_cast<double>(N);
    return make_result(std::move(out), {x}, "mean_tokens", [=](Node& self) {
        Tensor& dx = self.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t d = 0; d < D; ++d) dx[(b * N + n) * D + d] += self.grad[b * D + d] / static_cast<double>(N);
    });
}

}  // namespace ctxsr::ad
