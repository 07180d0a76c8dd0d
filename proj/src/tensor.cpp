#include "kst/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace kst {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

static int64_t checked_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("dimension sizes must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    int64_t n = checked_numel(shape);
    impl->shape = std::move(shape);
    impl->value.assign(static_cast<size_t>(n), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.impl()->value) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    int64_t n = checked_numel(shape);
    if (static_cast<size_t>(n) != data.size()) {
        throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

int64_t Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->value.size()); }

const std::vector<double>& Tensor::values() const { return impl_->value; }

std::vector<double>& Tensor::values_mut() { return impl_->value; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->value[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("gradient buffer absent");
    return impl_->grad;
}

void Tensor::ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : impl_->value) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::detached_copy() const {
    return from_data(impl_->shape, impl_->value, false);
}

std::vector<double>& GradMap::at(const std::shared_ptr<TensorImpl>& node) {
    auto it = buffers_.find(node.get());
    if (it == buffers_.end()) {
        it = buffers_.emplace(node.get(), std::vector<double>(node->value.size(), 0.0)).first;
    }
    return it->second;
}

std::vector<double>* GradMap::find(const TensorImpl* node) {
    auto it = buffers_.find(node);
    return it == buffers_.end() ? nullptr : &it->second;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) return; // constant loss: nothing reachable

    // Deterministic post-order over the recorded graph.
    std::vector<std::shared_ptr<TensorImpl>> order;
    std::unordered_set<const TensorImpl*> seen;
    struct Frame {
        std::shared_ptr<TensorImpl> node;
        size_t next_parent = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.impl(), 0});
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            auto& p = f.node->parents[f.next_parent++];
            if (p->requires_grad && seen.insert(p.get()).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    GradMap grads;
    grads.at(loss.impl())[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& node = *it;
        if (!node->backward_fn) continue;
        std::vector<double>* g = grads.find(node.get());
        if (!g) continue;
        node->backward_fn(*g, grads);
    }

    // Persist into leaves only.
    for (auto& node : order) {
        if (!node->parents.empty() || !node->requires_grad) continue;
        std::vector<double>* g = grads.find(node.get());
        if (!g) continue;
        if (node->grad.empty()) node->grad.assign(node->value.size(), 0.0);
        for (size_t i = 0; i < g->size(); ++i) node->grad[i] += (*g)[i];
    }
}

} // namespace kst
