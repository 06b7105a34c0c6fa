#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mlc/error.hpp"

namespace mlc {

/// Operation tags recorded on graph nodes. `leaf` marks tensors that are not
/// the output of a tracked operation.
enum class OpKind : int {
    leaf,
    add,
    sub,
    mul,
    scalar_mul,
    matmul,
    conv2d,
    relu,
    sigmoid,
    softmax_lastdim,
    log,
    exp,
    power,
    mean_axes,
    sum_axes,
    reshape,
    transpose,
    layer_norm_lastdim,
    pad2d,
    max_pool2d,
    softplus,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scalar_mul: return "scalar_mul";
        case OpKind::matmul: return "matmul";
        case OpKind::conv2d: return "conv2d";
        case OpKind::relu: return "relu";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::softmax_lastdim: return "softmax_lastdim";
        case OpKind::log: return "log";
        case OpKind::exp: return "exp";
        case OpKind::power: return "power";
        case OpKind::mean_axes: return "mean_axes";
        case OpKind::sum_axes: return "sum_axes";
        case OpKind::reshape: return "reshape";
        case OpKind::transpose: return "transpose";
        case OpKind::layer_norm_lastdim: return "layer_norm_lastdim";
        case OpKind::pad2d: return "pad2d";
        case OpKind::max_pool2d: return "max_pool2d";
        case OpKind::softplus: return "softplus";
    }
    return "unknown";
}

inline OpKind op_kind_from_name(const std::string& name) {
    static const std::pair<const char*, OpKind> table[] = {
        {"add", OpKind::add},
        {"sub", OpKind::sub},
        {"mul", OpKind::mul},
        {"scalar_mul", OpKind::scalar_mul},
        {"matmul", OpKind::matmul},
        {"conv2d", OpKind::conv2d},
        {"relu", OpKind::relu},
        {"sigmoid", OpKind::sigmoid},
        {"softmax_lastdim", OpKind::softmax_lastdim},
        {"log", OpKind::log},
        {"exp", OpKind::exp},
        {"power", OpKind::power},
        {"mean_axes", OpKind::mean_axes},
        {"sum_axes", OpKind::sum_axes},
        {"reshape", OpKind::reshape},
        {"transpose", OpKind::transpose},
        {"layer_norm_lastdim", OpKind::layer_norm_lastdim},
        {"pad2d", OpKind::pad2d},
        {"max_pool2d", OpKind::max_pool2d},
        {"softplus", OpKind::softplus},
    };
    for (const auto& [n, k] : table)
        if (name == n) return k;
    throw UnsupportedOp("unknown op kind: " + name);
}

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

// Thread-local autograd switch. Ops link into the graph only while enabled.
inline bool& autograd_enabled() {
    thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(autograd_enabled()) { autograd_enabled() = false; }
    ~NoGradGuard() { autograd_enabled() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Optional debug mode: every op output is scanned for NaN/Inf.
inline bool& finite_checks_enabled() {
    thread_local bool on = false;
    return on;
}

// Fault-injection seam for gradient verification: while active, the incoming
// gradient of every node with the chosen op tag is scaled before its
// backward function runs, so finite-difference checks must fail.
struct GradCorruption {
    bool active = false;
    OpKind op = OpKind::leaf;
    double factor = 1.01;
};

inline GradCorruption& grad_corruption() {
    thread_local GradCorruption c;
    return c;
}

template <typename Scalar>
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<Scalar> value;
    std::vector<Scalar> grad;  // empty until needed; same length as value once allocated
    bool requires_grad = false;
    OpKind op = OpKind::leaf;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Called with this node during the backward sweep; reads this->grad and
    // accumulates into parents' grad buffers.
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Scalar(0));
    }
};

/// Dense row-major tensor handle. Copying a Tensor shares the underlying
/// node; `detach` makes an independent, graph-free copy of the values.
template <typename Scalar>
class Tensor {
public:
    using Node = TensorNode<Scalar>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        return full(std::move(shape), Scalar(0), requires_grad);
    }

    static Tensor full(std::vector<std::size_t> shape, Scalar v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value.assign(shape_size(shape), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(Scalar v, bool requires_grad = false) {
        return full({}, v, requires_grad);
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<Scalar> data,
                            bool requires_grad = false) {
        if (shape_size(shape) != data.size())
            throw ShapeMismatch("from_data: " + shape_str(shape) + " cannot hold " +
                                std::to_string(data.size()) + " elements");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    bool valid() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    std::vector<Scalar>& data() { return node_->value; }
    const std::vector<Scalar>& data() const { return node_->value; }

    Scalar item() const {
        if (size() != 1) throw NotScalar("item() on tensor of size " + std::to_string(size()));
        return node_->value[0];
    }

    Scalar at(std::initializer_list<std::size_t> idx) const {
        return node_->value[offset(idx)];
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != rank()) throw ShapeMismatch("index rank mismatch");
        std::size_t off = 0, d = 0;
        for (std::size_t i : idx) {
            off = off * node_->shape[d] + i;
            ++d;
        }
        return off;
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->op == OpKind::leaf; }

    Tensor& set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        return *this;
    }

    /// Gradient buffer; empty until a backward pass has touched this tensor.
    const std::vector<Scalar>& grad() const { return node_->grad; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Scalar(0));
    }

    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <typename Scalar>
void topo_visit(const std::shared_ptr<TensorNode<Scalar>>& root,
                std::vector<TensorNode<Scalar>*>& order) {
    // Iterative post-order DFS; reversed afterwards this gives reverse
    // topological order with each node visited exactly once.
    std::unordered_set<TensorNode<Scalar>*> visited;
    std::vector<std::pair<TensorNode<Scalar>*, std::size_t>> stack;
    visited.insert(root.get());
    stack.emplace_back(root.get(), 0);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<Scalar>* p = node->parents[next++].get();
            if (p->op != OpKind::leaf && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Accumulates (+=) into the grad of
/// every reachable leaf with requires_grad; intermediate grads are released
/// afterwards unless retain_intermediate is set.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss, bool retain_intermediate = false) {
    if (loss.size() != 1)
        throw NotScalar("backward: loss has " + std::to_string(loss.size()) + " elements");
    if (loss.is_leaf())
        throw DetachedGraph("backward: loss is not attached to a graph");

    std::vector<TensorNode<Scalar>*> order;
    detail::topo_visit(loss.node(), order);

    auto* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += Scalar(1);

    const GradCorruption& corrupt = grad_corruption();
    for (TensorNode<Scalar>* node : order) {
        if (!node->backward_fn || node->grad.empty()) continue;
        if (corrupt.active && node->op == corrupt.op)
            for (Scalar& g : node->grad) g *= static_cast<Scalar>(corrupt.factor);
        node->backward_fn(*node);
    }

    if (!retain_intermediate) {
        for (TensorNode<Scalar>* node : order) {
            if (node->op != OpKind::leaf) node->grad.clear();
        }
    }
}

}  // namespace mlc
