#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mvgt/errors.hpp"

namespace mvgt::numkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

class Tape;

// Shared tensor storage. Value buffers are written once by the op that
// produces them; grad buffers are filled during the backward sweep.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until needed
    bool requires_grad = false;
    Tape* tape = nullptr;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Value-semantics handle over shared node storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> data) {
        check_size(shape, data.size());
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape) {
        std::vector<double> d(shape_numel(shape), 0.0);
        return constant(std::move(shape), std::move(d));
    }

    static Tensor full(Shape shape, double v) {
        std::vector<double> d(shape_numel(shape), v);
        return constant(std::move(shape), std::move(d));
    }

    static Tensor scalar(double v) { return constant({1}, {v}); }

    // Leaf parameter: tracked by the tape, zero-initialized grad buffer so a
    // disconnected parameter still reports an (all-zero) gradient.
    static Tensor leaf(Shape shape, std::vector<double> data, Tape& tape);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t ndim() const { return node_->shape.size(); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    Tape* tape() const { return node_->tape; }

    double item() const {
        if (numel() != 1)
            throw DimensionError("item(): tensor has shape " + shape_str(shape()));
        return node_->value[0];
    }

    double at(std::size_t i) const { return node_->value.at(i); }
    double at(std::size_t i, std::size_t j) const {
        return node_->value.at(i * node_->shape.at(1) + j);
    }
    double& at(std::size_t i, std::size_t j) {
        return node_->value.at(i * node_->shape.at(1) + j);
    }

    void zero_grad() {
        if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    static void check_size(const Shape& s, std::size_t n) {
        if (shape_numel(s) != n)
            throw DimensionError("tensor data length " + std::to_string(n) +
                                 " does not match shape " + shape_str(s));
    }
    std::shared_ptr<TensorNode> node_;
    friend class Tape;
};

// Records the forward pass in execution order; replaying the adjoint
// closures in reverse order realizes the chain rule. Rebuilt per forward
// pass (recycling changes graph depth between passes).
class Tape {
public:
    using BackwardFn = std::function<void()>;

    void record(BackwardFn fn) { entries_.push_back(std::move(fn)); }

    std::size_t size() const { return entries_.size(); }
    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }
    void clear() { entries_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
    // accumulate (+=) so a parameter reused k times receives k summed
    // adjoints. The tape is cleared afterwards.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw DimensionError("backward: loss must be scalar, got shape " +
                                 shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw DimensionError("backward: loss does not require grad");
        loss.node()->ensure_grad();
        loss.node()->grad[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        clear();
    }

    Tensor make_leaf(Shape shape, std::vector<double> data) {
        Tensor t = Tensor::constant(std::move(shape), std::move(data));
        t.node_->requires_grad = true;
        t.node_->tape = this;
        t.node_->ensure_grad();
        return t;
    }

private:
    std::vector<BackwardFn> entries_;
    bool recording_ = true;
};

inline Tensor Tensor::leaf(Shape shape, std::vector<double> data, Tape& tape) {
    return tape.make_leaf(std::move(shape), std::move(data));
}

// RAII guard: disables tape recording within a scope (evaluation mode).
class NoGradScope {
public:
    explicit NoGradScope(Tape& tape) : tape_(tape), prev_(tape.recording()) {
        tape_.set_recording(false);
    }
    ~NoGradScope() { tape_.set_recording(prev_); }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape& tape_;
    bool prev_;
};

// Shared helper for op implementations: builds the result tensor and wires
// up tape/requires_grad propagation from the inputs.
inline Tensor make_op_result(Shape shape, std::vector<double> value,
                             std::initializer_list<Tensor> inputs) {
    Tensor out = Tensor::constant(std::move(shape), std::move(value));
    Tape* tape = nullptr;
    bool needs_grad = false;
    for (const Tensor& in : inputs) {
        if (!in.defined()) continue;
        if (in.tape() != nullptr) {
            if (tape != nullptr && tape != in.tape())
                throw DimensionError("op inputs belong to different tapes");
            tape = in.tape();
        }
        needs_grad = needs_grad || in.requires_grad();
    }
    if (tape != nullptr && tape->recording() && needs_grad) {
        out.node()->requires_grad = true;
        out.node()->tape = tape;
    }
    return out;
}

} // namespace mvgt::numkit
