#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lungseg/errors.hpp"

namespace lungseg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// When enabled, every op validates its output for NaN/Inf and throws
// NumericError on the first offender. Off by default (it costs a pass over
// the data).
inline std::atomic<bool>& finite_check_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}
inline void set_finite_checks(bool on) { finite_check_flag().store(on); }
inline bool finite_checks_enabled() { return finite_check_flag().load(); }

template <typename T>
class Tape;

// Dense row-major tensor. Images use NCHW. `tape`/`node` bind the tensor to
// an autograd tape; both are unset on plain value tensors.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    Tape<T>* tape = nullptr;
    int64_t node = -1;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), T(0)) {
        validate_shape();
    }

    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, T value) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool tracked() const { return tape != nullptr && node >= 0; }

    // Value of a single-element tensor.
    T scalar() const {
        if (numel() != 1) throw UsageError("scalar() on tensor of shape " + shape_str(shape));
        return data[0];
    }

    int64_t dim(size_t i) const { return shape.at(i); }

    // NCHW accessors for 4-d tensors.
    T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

private:
    void validate_shape() const {
        for (int64_t d : shape)
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
};

// Reverse-mode tape. Ops append one record per produced node; records are
// therefore already in topological order and backward() replays them once,
// in reverse, accumulating gradients into per-node buffers.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int64_t /*out_node*/)>;

    // Binds a leaf tensor to this tape. Leaves with needs_grad=false (e.g.
    // input batches) take part in the graph but their gradient is skipped.
    void track(Tensor<T>& t, bool needs_grad = true) {
        if (t.tracked()) throw UsageError("tensor is already bound to a tape");
        t.tape = this;
        t.node = add_node(t.shape, needs_grad, /*interior=*/false);
    }

    // Creates an interior node for an op output and records its backward rule.
    int64_t emit(const Shape& out_shape, BackwardFn fn) {
        const int64_t id = add_node(out_shape, /*needs_grad=*/true, /*interior=*/true);
        records_.push_back(Record{id, std::move(fn)});
        return id;
    }

    // Seeds d(loss)/d(loss) = 1 and propagates through all records in
    // reverse order. Gradients from any previous backward() are discarded.
    void backward(const Tensor<T>& loss) {
        if (loss.tape != this || loss.node < 0 || loss.node >= static_cast<int64_t>(nodes_.size()))
            throw UsageError("loss tensor is not a node of this tape");
        if (loss.numel() != 1)
            throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape));
        for (auto& g : grads_) std::fill(g.begin(), g.end(), T(0));
        grads_[static_cast<size_t>(loss.node)][0] = T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->fn(*this, it->out);
    }

    // Accumulated gradient of a tracked tensor, shaped like the tensor.
    // Zero for nodes the loss does not depend on.
    Tensor<T> grad(const Tensor<T>& t) const {
        if (t.tape != this || t.node < 0) throw UsageError("tensor is not tracked on this tape");
        Tensor<T> g(nodes_[static_cast<size_t>(t.node)].shape);
        g.data = grads_[static_cast<size_t>(t.node)];
        return g;
    }

    // --- used by op implementations ---

    bool wants_grad(int64_t node) const {
        if (node < 0) return false;
        const NodeInfo& n = nodes_[static_cast<size_t>(node)];
        return n.interior || n.needs_grad;
    }

    const std::vector<T>& grad_buffer(int64_t node) const { return grads_[static_cast<size_t>(node)]; }

    void add_grad(int64_t node, const T* g, int64_t count) {
        std::vector<T>& dst = grads_[static_cast<size_t>(node)];
        for (int64_t i = 0; i < count; ++i) dst[static_cast<size_t>(i)] += g[i];
    }

    std::vector<T>& grad_buffer_mut(int64_t node) { return grads_[static_cast<size_t>(node)]; }

    const Shape& node_shape(int64_t node) const { return nodes_[static_cast<size_t>(node)].shape; }

    size_t num_records() const { return records_.size(); }
    size_t num_nodes() const { return nodes_.size(); }

private:
    struct NodeInfo {
        Shape shape;
        bool needs_grad;
        bool interior;
    };
    struct Record {
        int64_t out;
        BackwardFn fn;
    };

    int64_t add_node(const Shape& s, bool needs_grad, bool interior) {
        nodes_.push_back(NodeInfo{s, needs_grad, interior});
        grads_.emplace_back(static_cast<size_t>(shape_numel(s)), T(0));
        return static_cast<int64_t>(nodes_.size()) - 1;
    }

    std::vector<NodeInfo> nodes_;
    std::vector<std::vector<T>> grads_;
    std::vector<Record> records_;
};

namespace detail {

// Resolves the tape shared by the tracked operands of an op. Mixing tensors
// from two tapes is a usage error.
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : inputs) {
        if (!t->tracked()) continue;
        if (tape == nullptr) tape = t->tape;
        else if (tape != t->tape) throw UsageError("operands belong to different tapes");
    }
    return tape;
}

template <typename T>
void check_finite(const char* op, const Tensor<T>& t) {
    if (!finite_checks_enabled()) return;
    for (const T& v : t.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by ") + op);
}

}  // namespace detail

}  // namespace lungseg
