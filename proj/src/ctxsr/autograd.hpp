#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "ctxsr/tensor.hpp"

namespace ctxsr::ad {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    // Adds `g` (same shape as value) into grad, allocating on demand.
    void accumulate(const Tensor& g);
    Tensor& grad_buffer();
};

// Reverse-mode handle. Copies share the underlying node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int64_t dim(size_t i) const { return node_->value.dim(i); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    // Gradient accumulated by backward(); zeros if none reached this node.
    Tensor grad() const;
    void zero_grad();

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Builds a result node; backward_fn is dropped when no input needs grad.
Var make_result(Tensor value, std::vector<Var> inputs, const char* op, std::function<void(Node&)> backward_fn);

// Disables graph recording on this thread while alive (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

// Seeds d(root)/d(root) = 1 for a scalar root and propagates to every leaf.
void backward(const Var& root);

// Records the smallest distance from a non-differentiable point (clamp bound,
// abs zero, argmax tie) seen while a monitor is active on this thread.
class KinkMonitor {
public:
    KinkMonitor();
    ~KinkMonitor();
    KinkMonitor(const KinkMonitor&) = delete;
    KinkMonitor& operator=(const KinkMonitor&) = delete;

    double min_margin() const noexcept { return margin_; }

    static bool active() noexcept;
    static void report(double margin);

private:
    double margin_ = std::numeric_limits<double>::infinity();
    KinkMonitor* previous_ = nullptr;
};

}  // namespace ctxsr::ad
