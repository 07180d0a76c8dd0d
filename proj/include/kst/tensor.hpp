#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kst/error.hpp"

namespace kst {

class GradMap;
struct TensorImpl;

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles with reverse-mode differentiation.
//
// A Tensor is a shared handle to an immutable-shape node. Operations on
// tensors that require gradients record a backward closure on the node; the
// recorded graph is the tape, and backward() replays it in reverse
// topological order. Gradients persist only on leaf tensors flagged
// requires_grad (parameters); repeated backward() calls accumulate.
class Tensor {
public:
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t dim(int i) const;
    int ndim() const;
    int64_t numel() const;

    const std::vector<double>& values() const;
    std::vector<double>& values_mut(); // leaf tensors only; does not invalidate the tape

    double item() const; // scalar tensors only

    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void ensure_grad();  // allocate a zero gradient buffer if absent
    void zero_grad();

    // True when every element is finite.
    bool all_finite() const;

    // Deep copy of values (detached from the tape, no gradient history).
    Tensor detached_copy() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // persistent; meaningful for requires_grad leaves
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const std::vector<double>&, GradMap&)> backward_fn;
};

// Scratch gradient buffers used during one backward() walk, keyed by node.
class GradMap {
public:
    std::vector<double>& at(const std::shared_ptr<TensorImpl>& node);
    std::vector<double>* find(const TensorImpl* node);

private:
    std::unordered_map<const TensorImpl*, std::vector<double>> buffers_;
};

// Reverse-mode sweep from a scalar loss. Accumulates d(loss)/d(leaf) into the
// persistent grad buffer of every reachable requires_grad leaf. Intermediate
// node gradients live only in scratch storage for the duration of the call.
void backward(const Tensor& loss);

// A named trainable tensor. Names are unique within a model and double as
// checkpoint keys.
struct Parameter {
    std::string name;
    Tensor tensor;

    Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {
        tensor.ensure_grad();
    }
};

} // namespace kst
