#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dbat/common.hpp"

namespace dbat {

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Reverse-mode autodiff node. Tensors are immutable after construction
// except for grad accumulation; a graph belongs to one thread.
struct TensorImpl {
    std::vector<int> shape;
    int64_t size = 0;
    DType dtype = DType::f32;
    bool requires_grad = false;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data

    std::vector<TensorImplPtr> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != static_cast<size_t>(size)) grad.assign(static_cast<size_t>(size), 0.0);
    }
    void round_to_dtype() {
        if (dtype == DType::f32)
            for (double& v : data) v = round_f32(v);
    }
};

// Value-semantic handle onto a shared node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(std::vector<int> shape, DType dt, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, DType dt, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> values, DType dt,
                            bool requires_grad = false);
    static Tensor scalar(double value, DType dt);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return impl_->size; }
    DType dtype() const { return impl_->dtype; }
    bool requires_grad() const { return impl_->requires_grad; }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    const std::vector<double>& grad() const { return impl_->grad; }
    std::vector<double>& grad_mut() { return impl_->grad; }

    double item() const;
    double at(std::initializer_list<int> idx) const;

    TensorImpl* impl() const { return impl_.get(); }
    const TensorImplPtr& ptr() const { return impl_; }

    void zero_grad() { impl_->grad.assign(static_cast<size_t>(impl_->size), 0.0); }

    // Reverse pass from a scalar. Seeds d(self)/d(self) = 1 and walks the
    // graph in reverse topological order.
    void backward() const;

private:
    TensorImplPtr impl_;
};

// Graph construction can be switched off for inference-only passes.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace dbat
