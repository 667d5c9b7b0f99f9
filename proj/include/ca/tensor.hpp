#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ca/rng.hpp"

namespace ca {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b);
[[noreturn]] void shape_fail(const char* op, const Shape& a);

class Tape;

// Handle to a node on a tape. Cheap to copy; the tape owns all storage.
class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const;
    int64_t size() const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::span<const double> values() const;
    std::span<const double> grad() const;  // valid after Tape::backward
    double scalar() const;                 // single-element tensors only
    bool requires_grad() const;
    bool defined() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

private:
    friend class Tape;
    Tensor(Tape* tape, int node) : tape_(tape), node_(node) {}
    Tape* tape_ = nullptr;
    int node_ = -1;
};

// Records every executed op so reverse-mode backward can replay them.
// A tape is confined to one thread; independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor input(Shape shape, std::vector<double> data, bool requires_grad = false);
    Tensor constant(Shape shape, std::vector<double> data) { return input(std::move(shape), std::move(data), false); }
    Tensor constant_like(const Tensor& ref, double fill);
    Tensor scalar_input(double v, bool requires_grad = false) { return input({1}, {v}, requires_grad); }

    // Accumulates d(loss)/dx into every requires-grad node. loss must be a
    // single-element tensor from this tape. A tape can be walked once.
    void backward(const Tensor& loss);

    size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;  // empty for leaves/constants
    };

    Node& at(int i) { return nodes_[i]; }
    const Node& at(int i) const { return nodes_[i]; }
    std::vector<double>& grad_buffer(int i);

    // Used by op implementations.
    Tensor emplace(Shape shape, std::vector<double> value, bool requires_grad,
                   std::function<void(Tape&)> backprop);

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// ---- primitive forward ops -------------------------------------------------
// Elementwise binaries broadcast under the usual trailing-axis rules.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Elementwise min; at ties the gradient goes to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// max(x, lo); the gradient passes only where x > lo (the constant wins ties).
Tensor clamp_min(const Tensor& a, double lo);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// a: (..., r, c) with b either (c, o) shared across the batch or (..., c, o)
// with identical leading axes.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);             // rank-2
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor reshape(const Tensor& a, Shape shape);  // same element count
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);   // -> shape {1}
Tensor mean_all(const Tensor& a);  // -> shape {1}

// Min along one axis; ties resolve to the lowest index along that axis.
Tensor min_along(const Tensor& a, int axis);

// softmax(x / temperature) along `axis`, stabilized by max subtraction.
Tensor softmax(const Tensor& a, int axis, double temperature = 1.0);

// Writes `fill` wherever mask != 0; mask must broadcast to a's shape and is
// treated as data (no gradient through filled positions).
Tensor masked_fill(const Tensor& a, const Tensor& mask, double fill);

// Entries uniform in +-sqrt(6 / (fan_in + fan_out)); fan_in is the first
// axis, fan_out the last.
std::vector<double> glorot_init(const Shape& shape, Rng& rng);

}  // namespace ca
