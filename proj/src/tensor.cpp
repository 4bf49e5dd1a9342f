#include "memadapt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace memadapt {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), 0.0);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.impl_->data) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(t.impl_->shape)) {
        throw std::invalid_argument("tensor: data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(t.impl_->shape));
    }
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

int Tensor::size(int axis) const {
    if (axis < 0) axis += dim();
    if (axis < 0 || axis >= dim()) {
        throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(impl_->shape));
    }
    return impl_->shape[static_cast<size_t>(axis)];
}

std::vector<double>& Tensor::grad_vec() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

const std::vector<double>& Tensor::grad_vec() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar shape " + shape_str(impl_->shape));
    return impl_->data[0];
}

Tensor Tensor::detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = false;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

namespace {

struct TapeStack {
    std::vector<Tape*> stack;
    Tape root;
    int no_grad_depth = 0;
    bool finite_checks = false;
};

TapeStack& tape_stack() {
    thread_local TapeStack ts;
    return ts;
}

}  // namespace

Tape& Tape::active() {
    auto& ts = tape_stack();
    return ts.stack.empty() ? ts.root : *ts.stack.back();
}

bool Tape::recording() { return tape_stack().no_grad_depth == 0; }

void Tape::record(Record record) { records_.push_back(std::move(record)); }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar");
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss was not produced through the tape");
    }
    // Reset intermediate grads so repeated backward calls on one tape stay independent;
    // leaf grads are never record outputs and keep accumulating.
    for (auto& rec : records_) {
        if (rec.output.has_grad()) rec.output.zero_grad();
    }
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (!it->output.has_grad()) continue;  // not on the path to this loss
        it->backward();
    }
}

ScopedTape::ScopedTape() { tape_stack().stack.push_back(&tape_); }
ScopedTape::~ScopedTape() { tape_stack().stack.pop_back(); }

NoGradGuard::NoGradGuard() { ++tape_stack().no_grad_depth; }
NoGradGuard::~NoGradGuard() { --tape_stack().no_grad_depth; }

void set_finite_checks(bool enabled) { tape_stack().finite_checks = enabled; }
bool finite_checks_enabled() { return tape_stack().finite_checks; }

void check_finite(const char* op, const Tensor& t) {
    if (!finite_checks_enabled()) return;
    const double* p = t.data();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "' at index " +
                                     std::to_string(i));
        }
    }
}

}  // namespace memadapt
