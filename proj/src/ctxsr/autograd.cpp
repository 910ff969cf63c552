#include "ctxsr/autograd.hpp"

#include <algorithm>
#include <unordered_set>

#include "ctxsr/error.hpp"

namespace ctxsr::ad {

namespace {
thread_local KinkMonitor* g_active_monitor = nullptr;
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

Tensor& Node::grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    Tensor& dst = grad_buffer();
    double* d = dst.data();
    const double* s = g.data();
    for (int64_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (node_->grad.empty()) return Tensor(node_->value.shape());
    return node_->grad;
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var make_result(Tensor value, std::vector<Var> inputs, const char* op, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    bool needs = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& v : inputs) node->inputs.push_back(v.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (!root.defined() || !root.requires_grad()) return;
    if (root.value().numel() != 1) throw DimensionError("backward: root must be a scalar, got " + shape_str(root.shape()));

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Intermediate grads are not needed after the sweep; leaves keep theirs.
    for (Node* n : order)
        if (n->backward_fn) n->grad = Tensor();
}

KinkMonitor::KinkMonitor() : previous_(g_active_monitor) { g_active_monitor = this; }

KinkMonitor::~KinkMonitor() { g_active_monitor = previous_; }

bool KinkMonitor::active() noexcept { return g_active_monitor != nullptr; }

void KinkMonitor::report(double margin) {
    for (KinkMonitor* m = g_active_monitor; m; m = m->previous_) m->margin_ = std::min(m->margin_, margin);
}

}  // namespace ctxsr::ad
