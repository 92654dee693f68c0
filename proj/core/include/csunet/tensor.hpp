#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "csunet/common.hpp"

namespace csunet {

template <typename T>
class Tape;

template <typename T>
struct Storage {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad;  // allocated lazily
    bool requires_grad = false;
    bool leaf = false;                 // parameter; its grad survives backward resets
    const void* recorded_on = nullptr; // tape that produced this storage, if any

    std::vector<T>& grad_buf() {
        if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
        return *grad;
    }
};

// Dense row-major N-d tensor. Copies are shallow (shared storage); use clone()
// for a deep copy. Gradient participation is opt-in via param()/set_requires_grad.
template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Storage<T>> s) : s_(std::move(s)) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T value) {
        const size_t n = size_t(numel(shape));  // before the move: evaluation order
        return from(std::vector<T>(n, value), std::move(shape));
    }
    static Tensor from(std::vector<T> values, Shape shape) {
        if (int64_t(values.size()) != numel(shape))
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        auto s = std::make_shared<Storage<T>>();
        s->shape = std::move(shape);
        s->data = std::make_shared<std::vector<T>>(std::move(values));
        return Tensor(s);
    }
    static Tensor scalar(T value) { return from({value}, Shape{}); }
    // Leaf parameter: requires grad, grads accumulate across backward calls.
    static Tensor param(Shape shape) {
        Tensor t = zeros(std::move(shape));
        t.s_->requires_grad = true;
        t.s_->leaf = true;
        return t;
    }

    bool defined() const { return bool(s_); }
    const Shape& shape() const { return s_->shape; }
    int64_t dim(size_t i) const { return s_->shape.at(i); }
    size_t rank() const { return s_->shape.size(); }
    int64_t size() const { return int64_t(s_->data->size()); }

    std::span<T> data() { return {s_->data->data(), s_->data->size()}; }
    std::span<const T> data() const { return {s_->data->data(), s_->data->size()}; }
    T* ptr() { return s_->data->data(); }
    const T* ptr() const { return s_->data->data(); }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool v) {
        s_->requires_grad = v;
        s_->leaf = v;
    }
    bool has_grad() const { return bool(s_->grad); }
    std::span<T> grad() { return {s_->grad_buf().data(), s_->grad_buf().size()}; }
    void zero_grad() {
        if (s_->grad) std::fill(s_->grad->begin(), s_->grad->end(), T(0));
    }

    T item() const {
        if (size() != 1) throw UsageError("item() on tensor of size " + std::to_string(size()));
        return (*s_->data)[0];
    }
    T at(std::initializer_list<int64_t> idx) const {
        Shape st = row_major_strides(s_->shape);
        int64_t off = 0;
        size_t i = 0;
        for (int64_t v : idx) off += v * st[i++];
        return (*s_->data)[size_t(off)];
    }

    Tensor clone() const {
        Tensor t = from(*s_->data, s_->shape);
        return t;
    }
    // Same data, no tape participation.
    Tensor detach() const {
        auto s = std::make_shared<Storage<T>>();
        s->shape = s_->shape;
        s->data = s_->data;
        return Tensor(s);
    }

    std::shared_ptr<Storage<T>> storage() const { return s_; }

private:
    std::shared_ptr<Storage<T>> s_;
};

// Reverse-mode tape. Nodes are recorded in forward (topological) order; the
// backward sweep visits each exactly once and accumulates into input grads.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() {
        if (active_ == this) active_ = parent_;
    }

    static Tape* active() { return active_; }

    // RAII activation; nests.
    void activate() {
        parent_ = active_;
        active_ = this;
    }
    void deactivate() {
        if (active_ == this) active_ = parent_;
    }

    void record(std::shared_ptr<Storage<T>> out, std::function<void()> backward) {
        out->recorded_on = this;
        nodes_.push_back({std::move(out), std::move(backward)});
    }
    size_t num_nodes() const { return nodes_.size(); }

    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1) throw UsageError("backward requires a scalar loss");
        if (loss.storage()->recorded_on != this)
            throw UsageError("loss was not produced on the active tape");
        for (auto& n : nodes_) {
            auto& g = n.out->grad_buf();
            std::fill(g.begin(), g.end(), T(0));
        }
        loss.storage()->grad_buf()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    }

    void clear() { nodes_.clear(); }

private:
    struct Node {
        std::shared_ptr<Storage<T>> out;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    Tape* parent_ = nullptr;
    static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
struct TapeScope {
    Tape<T> tape;
    TapeScope() { tape.activate(); }
    ~TapeScope() { tape.deactivate(); }
};

namespace detail {

template <typename T>
inline bool grad_enabled(std::initializer_list<const Tensor<T>*> inputs) {
    if (!Tape<T>::active()) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    if (!nan_debug_mode()) return;
    for (T v : t.data())
        if (!std::isfinite(double(v)))
            throw VerifyError(std::string("non-finite value produced by op '") + op + "'");
}

// Marks `out` as grad-requiring and records the backward rule if needed.
template <typename T>
inline void record_op(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void()> backward, const char* name) {
    check_finite(out, name);
    if (!grad_enabled<T>(inputs)) return;
    out.storage()->requires_grad = true;
    Tape<T>::active()->record(out.storage(), std::move(backward));
}

}  // namespace detail

}  // namespace csunet
