#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace memadapt {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
};

/// Dense row-major tensor handle. Copies share storage; clone() deep-copies.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim() const { return static_cast<int>(impl_->shape.size()); }
    int size(int axis) const;
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& data_vec() { return impl_->data; }
    const std::vector<double>& data_vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool value) { impl_->requires_grad = value; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    /// Grad buffer, zero-allocated on first access.
    std::vector<double>& grad_vec();
    const std::vector<double>& grad_vec() const;
    void zero_grad();

    double item() const;

    /// Value copy detached from any tape, requires_grad=false.
    Tensor detach() const;
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    TensorImpl* impl() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of executed ops; backward replays it in reverse exactly once.
class Tape {
public:
    struct Record {
        const char* op;
        Tensor output;
        std::function<void()> backward;  // reads output grad, accumulates into inputs
    };

    /// Tape currently recording on this thread (top of the scope stack).
    static Tape& active();
    static bool recording();  // false inside a NoGradGuard

    void record(Record record);
    void backward(const Tensor& loss);
    void clear() { records_.clear(); }
    size_t size() const { return records_.size(); }

private:
    std::vector<Record> records_;
};

/// Pushes a fresh tape for the current scope.
class ScopedTape {
public:
    ScopedTape();
    ~ScopedTape();
    ScopedTape(const ScopedTape&) = delete;
    ScopedTape& operator=(const ScopedTape&) = delete;
    Tape& tape() { return tape_; }

private:
    Tape tape_;
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// When enabled, every op forward scans its output and throws on NaN/Inf,
/// naming the op. Used by grad_check and the test suites.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

void check_finite(const char* op, const Tensor& t);

}  // namespace memadapt
