#include "dbat/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace dbat {

int max_threads() {
    static int cached = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("DBAT_THREADS")) {
            int cap = std::atoi(env);
            if (cap > 0 && cap < hw) hw = cap;
        }
        return hw;
    }();
    return cached;
}

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

static TensorImplPtr make_impl(std::vector<int> shape, DType dt, bool requires_grad) {
    for (int d : shape)
        if (d <= 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->size = shape_numel(impl->shape);
    impl->dtype = dt;
    impl->requires_grad = requires_grad;
    return impl;
}

Tensor Tensor::zeros(std::vector<int> shape, DType dt, bool requires_grad) {
    auto impl = make_impl(std::move(shape), dt, requires_grad);
    impl->data.assign(static_cast<size_t>(impl->size), 0.0);
    return Tensor(impl);
}

Tensor Tensor::full(std::vector<int> shape, double value, DType dt, bool requires_grad) {
    auto impl = make_impl(std::move(shape), dt, requires_grad);
    if (dt == DType::f32) value = round_f32(value);
    impl->data.assign(static_cast<size_t>(impl->size), value);
    return Tensor(impl);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values, DType dt,
                         bool requires_grad) {
    auto impl = make_impl(std::move(shape), dt, requires_grad);
    if (static_cast<int64_t>(values.size()) != impl->size)
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(impl->shape));
    impl->data = std::move(values);
    impl->round_to_dtype();
    return Tensor(impl);
}

Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

double Tensor::item() const {
    if (impl_->size != 1)
        throw DimensionError("item() requires a single-element tensor, shape is " +
                             shape_str(impl_->shape));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (idx.size() != impl_->shape.size())
        throw DimensionError("at(): rank mismatch for shape " + shape_str(impl_->shape));
    int64_t flat = 0;
    size_t k = 0;
    for (int i : idx) {
        flat = flat * impl_->shape[k] + i;
        ++k;
    }
    return impl_->data[static_cast<size_t>(flat)];
}

void Tensor::backward() const {
    if (impl_->size != 1) throw DimensionError("backward() must start from a scalar");

    // iterative post-order DFS
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next].get();
            ++next;
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorImpl* n : order)
        if (n->requires_grad) n->ensure_grad();
    impl_->grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
}

static thread_local bool g_grad_enabled = true;
bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

}  // namespace dbat
