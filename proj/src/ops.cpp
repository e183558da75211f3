#include "dbat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dbat {
namespace ops {

namespace {

// Parallel loops hand every output element to exactly one thread, and each
// element's reduction runs sequentially inside that thread, so results are
// bit-identical for any thread count.
template <typename F>
void par_for(int64_t n, F&& f) {
#ifdef _OPENMP
    if (n >= 4 && max_threads() > 1) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (int64_t i = 0; i < n; ++i) f(i);
}

void check_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ArgumentError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                            " vs " + dtype_name(b.dtype()) + ")");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

Tensor make_out(std::vector<int> shape, DType dt, std::initializer_list<Tensor> parents) {
    bool rg = false;
    if (grad_enabled())
        for (const Tensor& p : parents) rg = rg || p.requires_grad();
    Tensor out = Tensor::zeros(std::move(shape), dt, rg);
    if (rg)
        for (const Tensor& p : parents) out.impl()->parents.push_back(p.ptr());
    return out;
}

double* grad_of(const TensorImplPtr& p) {
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "add");
    check_same_shape(a, b, "add");
    Tensor out = make_out(a.shape(), a.dtype(), {a, b});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [](TensorImpl& o) {
            for (auto& par : o.parents) {
                if (double* g = grad_of(par))
                    for (int64_t i = 0; i < o.size; ++i) g[i] += o.grad[i];
            }
        };
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "sub");
    check_same_shape(a, b, "sub");
    Tensor out = make_out(a.shape(), a.dtype(), {a, b});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0]))
                for (int64_t i = 0; i < o.size; ++i) g[i] += o.grad[i];
            if (double* g = grad_of(o.parents[1]))
                for (int64_t i = 0; i < o.size; ++i) g[i] -= o.grad[i];
        };
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "mul");
    check_same_shape(a, b, "mul");
    Tensor out = make_out(a.shape(), a.dtype(), {a, b});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [](TensorImpl& o) {
            const double* da = o.parents[0]->data.data();
            const double* db = o.parents[1]->data.data();
            if (double* g = grad_of(o.parents[0]))
                for (int64_t i = 0; i < o.size; ++i) g[i] += o.grad[i] * db[i];
            if (double* g = grad_of(o.parents[1]))
                for (int64_t i = 0; i < o.size; ++i) g[i] += o.grad[i] * da[i];
        };
    return out;
}

Tensor add_bcast(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "add_bcast");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb.size() > sa.size() ||
        !std::equal(sb.begin(), sb.end(), sa.end() - static_cast<int64_t>(sb.size())))
        throw DimensionError("add_bcast: " + shape_str(sb) + " is not a suffix of " +
                             shape_str(sa));
    const int64_t bn = b.numel();
    Tensor out = make_out(sa, a.dtype(), {a, b});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i % bn];
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [bn](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0]))
                for (int64_t i = 0; i < o.size; ++i) g[i] += o.grad[i];
            if (double* g = grad_of(o.parents[1])) {
                const int64_t reps = o.size / bn;
                par_for(bn, [&](int64_t j) {
                    double acc = 0.0;
                    for (int64_t r = 0; r < reps; ++r) acc += o.grad[r * bn + j];
                    g[j] += acc;
                });
            }
        };
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_out(a.shape(), a.dtype(), {a});
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * s;
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [s](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0]))
                for (int64_t i = 0; i < o.size; ++i) g[i] += o.grad[i] * s;
        };
    return out;
}

// ---------------------------------------------------------------------------
// matmul

namespace {

struct MatmulPlan {
    int m, k, n;
    int64_t lead;                  // product of broadcast leading dims
    std::vector<int64_t> a_base;   // per leading index, offset into a
    std::vector<int64_t> b_base;
};

MatmulPlan plan_matmul(const std::vector<int>& sa, const std::vector<int>& sb) {
    if (sa.size() < 2 || sb.size() < 2)
        throw DimensionError("matmul: operands need at least 2 dims, got " + shape_str(sa) +
                             " and " + shape_str(sb));
    MatmulPlan p;
    p.m = sa[sa.size() - 2];
    p.k = sa[sa.size() - 1];
    int bk = sb[sb.size() - 2];
    p.n = sb[sb.size() - 1];
    if (p.k != bk)
        throw DimensionError("matmul: inner dims disagree, " + shape_str(sa) + " @ " +
                             shape_str(sb));
    size_t la = sa.size() - 2, lb = sb.size() - 2;
    size_t ld = std::max(la, lb);
    std::vector<int> lead_shape(ld, 1), da(ld, 1), db(ld, 1);
    for (size_t i = 0; i < ld; ++i) {
        int va = i < ld - la ? 1 : sa[i - (ld - la)];
        int vb = i < ld - lb ? 1 : sb[i - (ld - lb)];
        if (va != vb && va != 1 && vb != 1)
            throw DimensionError("matmul: leading dims not broadcastable, " + shape_str(sa) +
                                 " @ " + shape_str(sb));
        lead_shape[i] = std::max(va, vb);
        da[i] = va;
        db[i] = vb;
    }
    p.lead = shape_numel(lead_shape);
    p.a_base.resize(static_cast<size_t>(p.lead));
    p.b_base.resize(static_cast<size_t>(p.lead));
    for (int64_t l = 0; l < p.lead; ++l) {
        int64_t rem = l, ao = 0, bo = 0;
        for (size_t i = 0; i < ld; ++i) {
            int64_t stride_rest = 1;
            for (size_t j = i + 1; j < ld; ++j) stride_rest *= lead_shape[j];
            int64_t idx = rem / stride_rest;
            rem %= stride_rest;
            ao = ao * da[i] + (da[i] == 1 ? 0 : idx);
            bo = bo * db[i] + (db[i] == 1 ? 0 : idx);
        }
        p.a_base[static_cast<size_t>(l)] = ao * static_cast<int64_t>(p.m) * p.k;
        p.b_base[static_cast<size_t>(l)] = bo * static_cast<int64_t>(p.k) * p.n;
    }
    return p;
}

std::vector<int> matmul_out_shape(const std::vector<int>& sa, const std::vector<int>& sb,
                                  const MatmulPlan& p) {
    size_t la = sa.size() - 2, lb = sb.size() - 2, ld = std::max(la, lb);
    std::vector<int> out(ld + 2);
    for (size_t i = 0; i < ld; ++i) {
        int va = i < ld - la ? 1 : sa[i - (ld - la)];
        int vb = i < ld - lb ? 1 : sb[i - (ld - lb)];
        out[i] = std::max(va, vb);
    }
    out[ld] = p.m;
    out[ld + 1] = p.n;
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_dtype(a, b, "matmul");
    MatmulPlan p = plan_matmul(a.shape(), b.shape());
    Tensor out = make_out(matmul_out_shape(a.shape(), b.shape(), p), a.dtype(), {a, b});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    const int m = p.m, k = p.k, n = p.n;
    par_for(p.lead * m, [&](int64_t r) {
        const int64_t l = r / m;
        const int i = static_cast<int>(r % m);
        const double* arow = pa + p.a_base[static_cast<size_t>(l)] + static_cast<int64_t>(i) * k;
        const double* bmat = pb + p.b_base[static_cast<size_t>(l)];
        double* orow = po + (l * m + i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = bmat + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [p](TensorImpl& o) {
            const int m = p.m, k = p.k, n = p.n;
            const double* pa = o.parents[0]->data.data();
            const double* pb = o.parents[1]->data.data();
            const double* go = o.grad.data();
            double* ga = grad_of(o.parents[0]);
            double* gb = grad_of(o.parents[1]);
            auto slice = [&](int64_t l) {
                const int64_t ab = p.a_base[static_cast<size_t>(l)];
                const int64_t bb = p.b_base[static_cast<size_t>(l)];
                const double* gout = go + l * m * n;
                if (ga) {
                    par_for(m, [&](int64_t i) {
                        double* garow = ga + ab + i * k;
                        for (int kk = 0; kk < k; ++kk) {
                            const double* brow = pb + bb + static_cast<int64_t>(kk) * n;
                            double acc = 0.0;
                            const double* grow = gout + i * n;
                            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            garow[kk] += acc;
                        }
                    });
                }
                if (gb) {
                    par_for(k, [&](int64_t kk) {
                        double* gbrow = gb + bb + kk * n;
                        for (int i = 0; i < m; ++i) {
                            const double av = pa[ab + static_cast<int64_t>(i) * k + kk];
                            const double* grow = gout + static_cast<int64_t>(i) * n;
                            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                    });
                }
            };
            // slices run sequentially so broadcast operands accumulate in a
            // fixed order; parallelism lives inside slice()
            for (int64_t l = 0; l < p.lead; ++l) slice(l);
        };
    return out;
}

Tensor transpose_last2(const Tensor& a) {
    if (a.ndim() < 2) throw DimensionError("transpose_last2: needs >= 2 dims");
    std::vector<int> axes(static_cast<size_t>(a.ndim()));
    for (int i = 0; i < a.ndim(); ++i) axes[static_cast<size_t>(i)] = i;
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(a, axes);
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    const int nd = a.ndim();
    if (static_cast<int>(axes.size()) != nd)
        throw DimensionError("permute: axes rank mismatch for " + shape_str(a.shape()));
    std::vector<bool> seen(static_cast<size_t>(nd), false);
    std::vector<int> out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        int ax = axes[static_cast<size_t>(i)];
        if (ax < 0 || ax >= nd || seen[static_cast<size_t>(ax)])
            throw DimensionError("permute: invalid axis list");
        seen[static_cast<size_t>(ax)] = true;
        out_shape[static_cast<size_t>(i)] = a.dim(ax);
    }
    // strides of input, and for each output axis the matching input stride
    std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        in_strides[static_cast<size_t>(i)] =
            in_strides[static_cast<size_t>(i + 1)] * a.dim(i + 1);
    std::vector<int64_t> map_strides(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i)
        map_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];

    Tensor out = make_out(out_shape, a.dtype(), {a});
    const double* pa = a.data().data();
    double* po = out.data().data();
    const int64_t total = out.numel();
    std::vector<int64_t> out_strides(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        out_strides[static_cast<size_t>(i)] =
            out_strides[static_cast<size_t>(i + 1)] * out_shape[static_cast<size_t>(i + 1)];
    auto src_index = [out_strides, map_strides, nd](int64_t oi) {
        int64_t rem = oi, si = 0;
        for (int d = 0; d < nd; ++d) {
            int64_t idx = rem / out_strides[static_cast<size_t>(d)];
            rem %= out_strides[static_cast<size_t>(d)];
            si += idx * map_strides[static_cast<size_t>(d)];
        }
        return si;
    };
    for (int64_t i = 0; i < total; ++i) po[i] = pa[src_index(i)];
    if (out.requires_grad())
        out.impl()->backward_fn = [src_index, total](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0]))
                for (int64_t i = 0; i < total; ++i) g[src_index(i)] += o.grad[i];
        };
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
    Tensor out = make_out(std::move(shape), a.dtype(), {a});
    out.data() = a.data();
    if (out.requires_grad())
        out.impl()->backward_fn = [](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0]))
                for (int64_t i = 0; i < o.size; ++i) g[i] += o.grad[i];
        };
    return out;
}

Tensor slice_last(const Tensor& a, int offset, int length) {
    const int last = a.dim(a.ndim() - 1);
    if (offset < 0 || length <= 0 || offset + length > last)
        throw DimensionError("slice_last: [" + std::to_string(offset) + "," +
                             std::to_string(offset + length) + ") out of range for last dim " +
                             std::to_string(last));
    std::vector<int> out_shape = a.shape();
    out_shape.back() = length;
    Tensor out = make_out(out_shape, a.dtype(), {a});
    const int64_t rows = a.numel() / last;
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(po + r * length, pa + r * last + offset, sizeof(double) * static_cast<size_t>(length));
    if (out.requires_grad())
        out.impl()->backward_fn = [rows, last, offset, length](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0]))
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < length; ++j) g[r * last + offset + j] += o.grad[r * length + j];
        };
    return out;
}

Tensor index_select0(const Tensor& table, const std::vector<int>& idx) {
    if (table.ndim() != 2) throw DimensionError("index_select0: table must be 2-D");
    const int rows = table.dim(0), cols = table.dim(1);
    for (int i : idx)
        if (i < 0 || i >= rows) throw ArgumentError("index_select0: index out of range");
    Tensor out = make_out({static_cast<int>(idx.size()), cols}, table.dtype(), {table});
    const double* pt = table.data().data();
    double* po = out.data().data();
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(po + r * static_cast<size_t>(cols), pt + static_cast<size_t>(idx[r]) * cols,
                    sizeof(double) * static_cast<size_t>(cols));
    if (out.requires_grad())
        out.impl()->backward_fn = [idx, cols](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                // rows may repeat; keep the scatter sequential
                for (size_t r = 0; r < idx.size(); ++r)
                    for (int c = 0; c < cols; ++c)
                        g[static_cast<size_t>(idx[r]) * cols + c] += o.grad[r * static_cast<size_t>(cols) + c];
            }
        };
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    const int nd = a.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
        throw DimensionError("softmax: axis out of range for " + shape_str(a.shape()));
    const int d = a.dim(axis);
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);

    Tensor out = make_out(a.shape(), a.dtype(), {a});
    const double* pa = a.data().data();
    double* po = out.data().data();
    par_for(outer * inner, [&](int64_t lane) {
        const int64_t o = lane / inner, in = lane % inner;
        const int64_t base = o * d * inner + in;
        double mx = pa[base];
        for (int j = 1; j < d; ++j) mx = std::max(mx, pa[base + j * inner]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            double e = std::exp(pa[base + j * inner] - mx);
            po[base + j * inner] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < d; ++j) po[base + j * inner] *= inv;
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [d, inner, outer](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                const double* y = o.data.data();
                const double* gy = o.grad.data();
                par_for(outer * inner, [&](int64_t lane) {
                    const int64_t ob = lane / inner, in = lane % inner;
                    const int64_t base = ob * d * inner + in;
                    double dot = 0.0;
                    for (int j = 0; j < d; ++j) dot += gy[base + j * inner] * y[base + j * inner];
                    for (int j = 0; j < d; ++j)
                        g[base + j * inner] += (gy[base + j * inner] - dot) * y[base + j * inner];
                });
            }
        };
    return out;
}

Tensor gelu(const Tensor& a) {
    Tensor out = make_out(a.shape(), a.dtype(), {a});
    const double* pa = a.data().data();
    double* po = out.data().data();
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    for (int64_t i = 0; i < out.numel(); ++i)
        po[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * kInvSqrt2));
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                constexpr double kInvSqrt2 = 0.70710678118654752440;
                constexpr double kInvSqrt2Pi = 0.39894228040143267794;
                const double* x = o.parents[0]->data.data();
                for (int64_t i = 0; i < o.size; ++i) {
                    const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
                    g[i] += o.grad[i] * (cdf + x[i] * pdf);
                }
            }
        };
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int c = x.dim(x.ndim() - 1);
    if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
        throw DimensionError("layer_norm: affine params must be [" + std::to_string(c) + "]");
    check_dtype(x, gamma, "layer_norm");
    const int64_t rows = x.numel() / c;

    Tensor out = make_out(x.shape(), x.dtype(), {x, gamma, beta});
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    double* po = out.data().data();
    double* ph = xhat->data();
    double* pi = inv_std->data();
    par_for(rows, [&](int64_t r) {
        const double* row = px + r * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += row[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double dv = row[j] - mu;
            var += dv * dv;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        pi[r] = inv;
        double* hrow = ph + r * c;
        double* orow = po + r * c;
        for (int j = 0; j < c; ++j) {
            hrow[j] = (row[j] - mu) * inv;
            orow[j] = pg[j] * hrow[j] + pb[j];
        }
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [rows, c, xhat, inv_std](TensorImpl& o) {
            const double* pg = o.parents[1]->data.data();
            const double* gy = o.grad.data();
            const double* ph = xhat->data();
            double* gx = grad_of(o.parents[0]);
            if (gx) {
                par_for(rows, [&](int64_t r) {
                    const double* gyr = gy + r * c;
                    const double* hr = ph + r * c;
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double dh = gyr[j] * pg[j];
                        m1 += dh;
                        m2 += dh * hr[j];
                    }
                    m1 /= c;
                    m2 /= c;
                    const double inv = (*inv_std)[static_cast<size_t>(r)];
                    double* gxr = gx + r * c;
                    for (int j = 0; j < c; ++j)
                        gxr[j] += inv * (gyr[j] * pg[j] - m1 - hr[j] * m2);
                });
            }
            if (double* gg = grad_of(o.parents[1])) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) gg[j] += gy[r * c + j] * ph[r * c + j];
            }
            if (double* gb = grad_of(o.parents[2])) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) gb[j] += gy[r * c + j];
            }
        };
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    if (w.ndim() != 2) throw DimensionError("linear: weight must be 2-D [in,out]");
    const int in = w.dim(0), outc = w.dim(1);
    if (x.dim(x.ndim() - 1) != in)
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(w.shape()));
    check_dtype(x, w, "linear");
    if (bias && (bias->ndim() != 1 || bias->dim(0) != outc))
        throw DimensionError("linear: bias must be [" + std::to_string(outc) + "]");
    const int64_t rows = x.numel() / in;
    std::vector<int> out_shape = x.shape();
    out_shape.back() = outc;
    Tensor out = bias ? make_out(out_shape, x.dtype(), {x, w, *bias})
                      : make_out(out_shape, x.dtype(), {x, w});
    const double* px = x.data().data();
    const double* pw = w.data().data();
    const double* pb = bias ? bias->data().data() : nullptr;
    double* po = out.data().data();
    par_for(rows, [&](int64_t r) {
        double* orow = po + r * outc;
        if (pb)
            std::memcpy(orow, pb, sizeof(double) * static_cast<size_t>(outc));
        const double* xrow = px + r * in;
        for (int i = 0; i < in; ++i) {
            const double xv = xrow[i];
            const double* wrow = pw + static_cast<int64_t>(i) * outc;
            for (int j = 0; j < outc; ++j) orow[j] += xv * wrow[j];
        }
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [rows, in, outc](TensorImpl& o) {
            const double* px = o.parents[0]->data.data();
            const double* pw = o.parents[1]->data.data();
            const double* go = o.grad.data();
            if (double* gx = grad_of(o.parents[0])) {
                par_for(rows, [&](int64_t r) {
                    const double* grow = go + r * outc;
                    double* gxr = gx + r * in;
                    for (int i = 0; i < in; ++i) {
                        const double* wrow = pw + static_cast<int64_t>(i) * outc;
                        double acc = 0.0;
                        for (int j = 0; j < outc; ++j) acc += grow[j] * wrow[j];
                        gxr[i] += acc;
                    }
                });
            }
            if (double* gw = grad_of(o.parents[1])) {
                par_for(in, [&](int64_t i) {
                    double* gwr = gw + i * outc;
                    for (int64_t r = 0; r < rows; ++r) {
                        const double xv = px[r * in + i];
                        const double* grow = go + r * outc;
                        for (int j = 0; j < outc; ++j) gwr[j] += xv * grow[j];
                    }
                });
            }
            if (o.parents.size() > 2) {
                if (double* gb = grad_of(o.parents[2])) {
                    for (int64_t r = 0; r < rows; ++r) {
                        const double* grow = go + r * outc;
                        for (int j = 0; j < outc; ++j) gb[j] += grow[j];
                    }
                }
            }
        };
    return out;
}

namespace {
void check_nchw(const Tensor& x, const char* op) {
    if (x.ndim() != 4) throw DimensionError(std::string(op) + ": expected NCHW input, got " +
                                            shape_str(x.shape()));
}
}  // namespace

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor* bias) {
    check_nchw(x, "conv1x1");
    if (w.ndim() != 2) throw DimensionError("conv1x1: weight must be [K,C]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int k = w.dim(0);
    if (w.dim(1) != c)
        throw DimensionError("conv1x1: channel mismatch, input " + shape_str(x.shape()) +
                             " weight " + shape_str(w.shape()));
    check_dtype(x, w, "conv1x1");
    const int64_t hw = static_cast<int64_t>(h) * wd;
    Tensor out = bias ? make_out({n, k, h, wd}, x.dtype(), {x, w, *bias})
                      : make_out({n, k, h, wd}, x.dtype(), {x, w});
    const double* px = x.data().data();
    const double* pw = w.data().data();
    const double* pb = bias ? bias->data().data() : nullptr;
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * k, [&](int64_t nk) {
        const int64_t ni = nk / k;
        const int ki = static_cast<int>(nk % k);
        double* oplane = po + (ni * k + ki) * hw;
        if (pb) {
            const double bv = pb[ki];
            for (int64_t i = 0; i < hw; ++i) oplane[i] = bv;
        }
        for (int ci = 0; ci < c; ++ci) {
            const double wv = pw[static_cast<int64_t>(ki) * c + ci];
            const double* xplane = px + (ni * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) oplane[i] += wv * xplane[i];
        }
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, k, hw](TensorImpl& o) {
            const double* px = o.parents[0]->data.data();
            const double* pw = o.parents[1]->data.data();
            const double* go = o.grad.data();
            if (double* gx = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
                    const int64_t ni = nc / c;
                    const int ci = static_cast<int>(nc % c);
                    double* gplane = gx + (ni * c + ci) * hw;
                    for (int ki = 0; ki < k; ++ki) {
                        const double wv = pw[static_cast<int64_t>(ki) * c + ci];
                        const double* gout = go + (ni * k + ki) * hw;
                        for (int64_t i = 0; i < hw; ++i) gplane[i] += wv * gout[i];
                    }
                });
            }
            if (double* gw = grad_of(o.parents[1])) {
                par_for(static_cast<int64_t>(k) * c, [&](int64_t kc) {
                    const int ki = static_cast<int>(kc / c), ci = static_cast<int>(kc % c);
                    double acc = 0.0;
                    for (int ni = 0; ni < n; ++ni) {
                        const double* gout = go + (static_cast<int64_t>(ni) * k + ki) * hw;
                        const double* xplane = px + (static_cast<int64_t>(ni) * c + ci) * hw;
                        for (int64_t i = 0; i < hw; ++i) acc += gout[i] * xplane[i];
                    }
                    gw[kc] += acc;
                });
            }
            if (o.parents.size() > 2) {
                if (double* gb = grad_of(o.parents[2])) {
                    par_for(k, [&](int64_t ki) {
                        double acc = 0.0;
                        for (int ni = 0; ni < n; ++ni) {
                            const double* gout = go + (static_cast<int64_t>(ni) * k + ki) * hw;
                            for (int64_t i = 0; i < hw; ++i) acc += gout[i];
                        }
                        gb[ki] += acc;
                    });
                }
            }
        };
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int pad, int dilation) {
    check_nchw(x, "conv2d");
    if (w.ndim() != 4) throw DimensionError("conv2d: weight must be [K,C,kh,kw]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != c)
        throw DimensionError("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                             " weight " + shape_str(w.shape()));
    check_dtype(x, w, "conv2d");
    const int oh = h + 2 * pad - dilation * (kh - 1);
    const int ow = wd + 2 * pad - dilation * (kw - 1);
    if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: kernel larger than padded input");
    Tensor out = bias ? make_out({n, k, oh, ow}, x.dtype(), {x, w, *bias})
                      : make_out({n, k, oh, ow}, x.dtype(), {x, w});
    const double* px = x.data().data();
    const double* pw = w.data().data();
    const double* pb = bias ? bias->data().data() : nullptr;
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * k, [&](int64_t nk) {
        const int64_t ni = nk / k;
        const int ki = static_cast<int>(nk % k);
        double* oplane = po + nk * oh * ow;
        if (pb) {
            const double bv = pb[ki];
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) oplane[i] = bv;
        }
        for (int ci = 0; ci < c; ++ci) {
            const double* xplane = px + (ni * c + ci) * h * wd;
            const double* wblk = pw + (static_cast<int64_t>(ki) * c + ci) * kh * kw;
            for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                    const double wv = wblk[u * kw + v];
                    if (wv == 0.0) continue;
                    for (int y = 0; y < oh; ++y) {
                        const int iy = y - pad + dilation * u;
                        if (iy < 0 || iy >= h) continue;
                        const int x0 = std::max(0, pad - dilation * v);
                        const int x1 = std::min(ow, wd + pad - dilation * v);
                        const double* xrow = xplane + static_cast<int64_t>(iy) * wd - pad + dilation * v;
                        double* orow = oplane + static_cast<int64_t>(y) * ow;
                        for (int xo = x0; xo < x1; ++xo) orow[xo] += wv * xrow[xo];
                    }
                }
        }
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, k, h, wd, kh, kw, pad, dilation, oh, ow](TensorImpl& o) {
            const double* px = o.parents[0]->data.data();
            const double* pw = o.parents[1]->data.data();
            const double* go = o.grad.data();
            if (double* gx = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
                    const int64_t ni = nc / c;
                    const int ci = static_cast<int>(nc % c);
                    double* gplane = gx + nc * h * wd;
                    for (int ki = 0; ki < k; ++ki) {
                        const double* gout = go + (ni * k + ki) * oh * ow;
                        const double* wblk = pw + (static_cast<int64_t>(ki) * c + ci) * kh * kw;
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                const double wv = wblk[u * kw + v];
                                if (wv == 0.0) continue;
                                for (int y = 0; y < oh; ++y) {
                                    const int iy = y - pad + dilation * u;
                                    if (iy < 0 || iy >= h) continue;
                                    const int x0 = std::max(0, pad - dilation * v);
                                    const int x1 = std::min(ow, wd + pad - dilation * v);
                                    double* grow = gplane + static_cast<int64_t>(iy) * wd - pad + dilation * v;
                                    const double* gorow = gout + static_cast<int64_t>(y) * ow;
                                    for (int xo = x0; xo < x1; ++xo) grow[xo] += wv * gorow[xo];
                                }
                            }
                    }
                });
            }
            if (double* gw = grad_of(o.parents[1])) {
                par_for(static_cast<int64_t>(k) * c, [&](int64_t kc) {
                    const int ki = static_cast<int>(kc / c), ci = static_cast<int>(kc % c);
                    double* gwblk = gw + kc * kh * kw;
                    for (int ni = 0; ni < n; ++ni) {
                        const double* gout = go + (static_cast<int64_t>(ni) * k + ki) * oh * ow;
                        const double* xplane = px + (static_cast<int64_t>(ni) * c + ci) * h * wd;
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                double acc = 0.0;
                                for (int y = 0; y < oh; ++y) {
                                    const int iy = y - pad + dilation * u;
                                    if (iy < 0 || iy >= h) continue;
                                    const int x0 = std::max(0, pad - dilation * v);
                                    const int x1 = std::min(ow, wd + pad - dilation * v);
                                    const double* xrow = xplane + static_cast<int64_t>(iy) * wd - pad + dilation * v;
                                    const double* gorow = gout + static_cast<int64_t>(y) * ow;
                                    for (int xo = x0; xo < x1; ++xo) acc += xrow[xo] * gorow[xo];
                                }
                                gwblk[u * kw + v] += acc;
                            }
                    }
                });
            }
            if (o.parents.size() > 2) {
                if (double* gb = grad_of(o.parents[2])) {
                    par_for(k, [&](int64_t ki) {
                        double acc = 0.0;
                        for (int ni = 0; ni < n; ++ni) {
                            const double* gout = go + (static_cast<int64_t>(ni) * k + ki) * oh * ow;
                            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) acc += gout[i];
                        }
                        gb[ki] += acc;
                    });
                }
            }
        };
    return out;
}

Tensor space_to_depth(const Tensor& x, int factor) {
    check_nchw(x, "space_to_depth");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (factor <= 0 || h % factor != 0 || w % factor != 0)
        throw DimensionError("space_to_depth: spatial dims " + shape_str(x.shape()) +
                             " not divisible by factor " + std::to_string(factor));
    const int oh = h / factor, ow = w / factor, f2 = factor * factor;
    Tensor out = make_out({n, c * f2, oh, ow}, x.dtype(), {x});
    const double* px = x.data().data();
    double* po = out.data().data();
    // out channel = block_offset * C + c, block offsets scanned row-major
    auto src_of = [=](int64_t oi) {
        int64_t rem = oi;
        const int xo = static_cast<int>(rem % ow); rem /= ow;
        const int yo = static_cast<int>(rem % oh); rem /= oh;
        const int oc = static_cast<int>(rem % (c * f2)); rem /= (c * f2);
        const int ni = static_cast<int>(rem);
        const int blk = oc / c, ci = oc % c;
        const int dy = blk / factor, dx = blk % factor;
        return ((static_cast<int64_t>(ni) * c + ci) * h + (yo * factor + dy)) * w +
               (xo * factor + dx);
    };
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = px[src_of(i)];
    if (out.requires_grad())
        out.impl()->backward_fn = [src_of](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0]))
                for (int64_t i = 0; i < o.size; ++i) g[src_of(i)] += o.grad[i];
        };
    return out;
}

Tensor avg_pool(const Tensor& x, int factor) {
    check_nchw(x, "avg_pool");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (factor <= 0 || h % factor != 0 || w % factor != 0)
        throw DimensionError("avg_pool: spatial dims " + shape_str(x.shape()) +
                             " not divisible by factor " + std::to_string(factor));
    const int oh = h / factor, ow = w / factor;
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    Tensor out = make_out({n, c, oh, ow}, x.dtype(), {x});
    const double* px = x.data().data();
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
        const double* xplane = px + nc * h * w;
        double* oplane = po + nc * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += xplane[(static_cast<int64_t>(y * factor + dy)) * w + xo * factor + dx];
                oplane[static_cast<int64_t>(y) * ow + xo] = acc * inv;
            }
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, h, w, oh, ow, factor, inv](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
                    double* gplane = g + nc * h * w;
                    const double* gout = o.grad.data() + nc * oh * ow;
                    for (int y = 0; y < oh; ++y)
                        for (int xo = 0; xo < ow; ++xo) {
                            const double gv = gout[static_cast<int64_t>(y) * ow + xo] * inv;
                            for (int dy = 0; dy < factor; ++dy)
                                for (int dx = 0; dx < factor; ++dx)
                                    gplane[(static_cast<int64_t>(y * factor + dy)) * w + xo * factor + dx] += gv;
                        }
                });
            }
        };
    return out;
}

Tensor resize_nearest(const Tensor& x, int factor) {
    check_nchw(x, "resize_nearest");
    if (factor <= 0) throw ArgumentError("resize_nearest: factor must be positive");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h * factor, ow = w * factor;
    Tensor out = make_out({n, c, oh, ow}, x.dtype(), {x});
    const double* px = x.data().data();
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
        const double* xplane = px + nc * h * w;
        double* oplane = po + nc * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const double* xrow = xplane + static_cast<int64_t>(y / factor) * w;
            double* orow = oplane + static_cast<int64_t>(y) * ow;
            for (int xo = 0; xo < ow; ++xo) orow[xo] = xrow[xo / factor];
        }
    });
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, h, w, oh, ow, factor](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
                    double* gplane = g + nc * h * w;
                    const double* gout = o.grad.data() + nc * oh * ow;
                    for (int y = 0; y < oh; ++y)
                        for (int xo = 0; xo < ow; ++xo)
                            gplane[static_cast<int64_t>(y / factor) * w + xo / factor] +=
                                gout[static_cast<int64_t>(y) * ow + xo];
                });
            }
        };
    return out;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    check_nchw(x, "resize_bilinear");
    if (out_h <= 0 || out_w <= 0) throw ArgumentError("resize_bilinear: output dims must be positive");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    // half-pixel-center source mapping with clamped taps
    struct Tap {
        int i0, i1;
        double w0, w1;
    };
    auto make_taps = [](int in, int out) {
        std::vector<Tap> taps(static_cast<size_t>(out));
        const double s = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * s - 0.5;
            double fl = std::floor(src);
            double frac = src - fl;
            int i0 = static_cast<int>(fl);
            int i1 = i0 + 1;
            i0 = std::clamp(i0, 0, in - 1);
            i1 = std::clamp(i1, 0, in - 1);
            taps[static_cast<size_t>(o)] = {i0, i1, 1.0 - frac, frac};
        }
        return taps;
    };
    auto ty = std::make_shared<std::vector<Tap>>(make_taps(h, out_h));
    auto tx = std::make_shared<std::vector<Tap>>(make_taps(w, out_w));
    Tensor out = make_out({n, c, out_h, out_w}, x.dtype(), {x});
    const double* px = x.data().data();
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
        const double* xplane = px + nc * h * w;
        double* oplane = po + nc * static_cast<int64_t>(out_h) * out_w;
        for (int y = 0; y < out_h; ++y) {
            const Tap& t_y = (*ty)[static_cast<size_t>(y)];
            const double* r0 = xplane + static_cast<int64_t>(t_y.i0) * w;
            const double* r1 = xplane + static_cast<int64_t>(t_y.i1) * w;
            double* orow = oplane + static_cast<int64_t>(y) * out_w;
            for (int xo = 0; xo < out_w; ++xo) {
                const Tap& t_x = (*tx)[static_cast<size_t>(xo)];
                orow[xo] = t_y.w0 * (t_x.w0 * r0[t_x.i0] + t_x.w1 * r0[t_x.i1]) +
                           t_y.w1 * (t_x.w0 * r1[t_x.i0] + t_x.w1 * r1[t_x.i1]);
            }
        }
    });
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, h, w, out_h, out_w, ty, tx](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
                    double* gplane = g + nc * h * w;
                    const double* gout = o.grad.data() + nc * static_cast<int64_t>(out_h) * out_w;
                    for (int y = 0; y < out_h; ++y) {
                        const Tap& t_y = (*ty)[static_cast<size_t>(y)];
                        for (int xo = 0; xo < out_w; ++xo) {
                            const Tap& t_x = (*tx)[static_cast<size_t>(xo)];
                            const double gv = gout[static_cast<int64_t>(y) * out_w + xo];
                            gplane[static_cast<int64_t>(t_y.i0) * w + t_x.i0] += gv * t_y.w0 * t_x.w0;
                            gplane[static_cast<int64_t>(t_y.i0) * w + t_x.i1] += gv * t_y.w0 * t_x.w1;
                            gplane[static_cast<int64_t>(t_y.i1) * w + t_x.i0] += gv * t_y.w1 * t_x.w0;
                            gplane[static_cast<int64_t>(t_y.i1) * w + t_x.i1] += gv * t_y.w1 * t_x.w1;
                        }
                    }
                });
            }
        };
    return out;
}

Tensor roll2d(const Tensor& x, int shift_y, int shift_x) {
    check_nchw(x, "roll2d");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto wrap = [](int v, int m) { return ((v % m) + m) % m; };
    const int sy = wrap(shift_y, h), sx = wrap(shift_x, w);
    Tensor out = make_out(x.shape(), x.dtype(), {x});
    const double* px = x.data().data();
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
        const double* xplane = px + nc * h * w;
        double* oplane = po + nc * h * w;
        for (int y = 0; y < h; ++y) {
            const int iy = wrap(y - sy, h);
            for (int xo = 0; xo < w; ++xo)
                oplane[static_cast<int64_t>(y) * w + xo] =
                    xplane[static_cast<int64_t>(iy) * w + wrap(xo - sx, w)];
        }
    });
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, h, w, sy, sx, wrap](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * c, [&](int64_t nc) {
                    double* gplane = g + nc * h * w;
                    const double* gout = o.grad.data() + nc * h * w;
                    for (int y = 0; y < h; ++y) {
                        const int iy = wrap(y - sy, h);
                        for (int xo = 0; xo < w; ++xo)
                            gplane[static_cast<int64_t>(iy) * w + wrap(xo - sx, w)] +=
                                gout[static_cast<int64_t>(y) * w + xo];
                    }
                });
            }
        };
    return out;
}

Tensor window_partition(const Tensor& x, int window) {
    check_nchw(x, "window_partition");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (window <= 0 || h % window != 0 || w % window != 0)
        throw DimensionError("window_partition: " + shape_str(x.shape()) +
                             " not divisible into " + std::to_string(window) + "x" +
                             std::to_string(window) + " windows");
    const int nh = h / window, nw = w / window, t = window * window;
    Tensor out = make_out({n * nh * nw, t, c}, x.dtype(), {x});
    const double* px = x.data().data();
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * nh * nw, [&](int64_t b) {
        const int wx = static_cast<int>(b % nw);
        const int wy = static_cast<int>((b / nw) % nh);
        const int ni = static_cast<int>(b / (static_cast<int64_t>(nh) * nw));
        double* oblk = po + b * t * c;
        for (int tt = 0; tt < t; ++tt) {
            const int yy = wy * window + tt / window;
            const int xx = wx * window + tt % window;
            for (int ci = 0; ci < c; ++ci)
                oblk[static_cast<int64_t>(tt) * c + ci] =
                    px[((static_cast<int64_t>(ni) * c + ci) * h + yy) * w + xx];
        }
    });
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, h, w, nh, nw, window, t](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * nh * nw, [&](int64_t b) {
                    const int wx = static_cast<int>(b % nw);
                    const int wy = static_cast<int>((b / nw) % nh);
                    const int ni = static_cast<int>(b / (static_cast<int64_t>(nh) * nw));
                    const double* gblk = o.grad.data() + b * t * c;
                    for (int tt = 0; tt < t; ++tt) {
                        const int yy = wy * window + tt / window;
                        const int xx = wx * window + tt % window;
                        for (int ci = 0; ci < c; ++ci)
                            g[((static_cast<int64_t>(ni) * c + ci) * h + yy) * w + xx] +=
                                gblk[static_cast<int64_t>(tt) * c + ci];
                    }
                });
            }
        };
    return out;
}

Tensor window_reverse(const Tensor& tns, int window, int n, int c, int h, int w) {
    if (tns.ndim() != 3)
        throw DimensionError("window_reverse: expected [windows, tokens, C], got " +
                             shape_str(tns.shape()));
    const int nh = h / window, nw = w / window, t = window * window;
    if (h % window != 0 || w % window != 0 || tns.dim(0) != n * nh * nw || tns.dim(1) != t ||
        tns.dim(2) != c)
        throw DimensionError("window_reverse: " + shape_str(tns.shape()) +
                             " does not reassemble to [" + std::to_string(n) + "," +
                             std::to_string(c) + "," + std::to_string(h) + "," +
                             std::to_string(w) + "]");
    Tensor out = make_out({n, c, h, w}, tns.dtype(), {tns});
    const double* pt = tns.data().data();
    double* po = out.data().data();
    par_for(static_cast<int64_t>(n) * nh * nw, [&](int64_t b) {
        const int wx = static_cast<int>(b % nw);
        const int wy = static_cast<int>((b / nw) % nh);
        const int ni = static_cast<int>(b / (static_cast<int64_t>(nh) * nw));
        const double* tblk = pt + b * t * c;
        for (int tt = 0; tt < t; ++tt) {
            const int yy = wy * window + tt / window;
            const int xx = wx * window + tt % window;
            for (int ci = 0; ci < c; ++ci)
                po[((static_cast<int64_t>(ni) * c + ci) * h + yy) * w + xx] =
                    tblk[static_cast<int64_t>(tt) * c + ci];
        }
    });
    if (out.requires_grad())
        out.impl()->backward_fn = [n, c, h, w, nh, nw, window, t](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                par_for(static_cast<int64_t>(n) * nh * nw, [&](int64_t b) {
                    const int wx = static_cast<int>(b % nw);
                    const int wy = static_cast<int>((b / nw) % nh);
                    const int ni = static_cast<int>(b / (static_cast<int64_t>(nh) * nw));
                    double* gblk = g + b * t * c;
                    for (int tt = 0; tt < t; ++tt) {
                        const int yy = wy * window + tt / window;
                        const int xx = wx * window + tt % window;
                        for (int ci = 0; ci < c; ++ci)
                            gblk[static_cast<int64_t>(tt) * c + ci] +=
                                o.grad[((static_cast<int64_t>(ni) * c + ci) * h + yy) * w + xx];
                    }
                });
            }
        };
    return out;
}

Tensor sum_all(const Tensor& a) {
    Tensor out = make_out({1}, a.dtype(), {a});
    const double* pa = a.data().data();
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
    out.data()[0] = acc;
    out.impl()->round_to_dtype();
    if (out.requires_grad())
        out.impl()->backward_fn = [](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                const double gv = o.grad[0];
                for (int64_t i = 0; i < o.parents[0]->size; ++i) g[i] += gv;
            }
        };
    return out;
}

Tensor mean_all(const Tensor& a) {
    Tensor s = sum_all(a);
    return scale(s, 1.0 / static_cast<double>(a.numel()));
}

Tensor cross_entropy(const Tensor& logits, const LabelMap& labels, int32_t ignore_label) {
    check_nchw(logits, "cross_entropy");
    const int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (labels.n != n || labels.h != h || labels.w != w)
        throw DimensionError("cross_entropy: labels [" + std::to_string(labels.n) + "," +
                             std::to_string(labels.h) + "," + std::to_string(labels.w) +
                             "] do not match logits " + shape_str(logits.shape()));
    const int64_t hw = static_cast<int64_t>(h) * w;
    const double* pl = logits.data().data();
    auto lse = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * hw, 0.0);
    int64_t kept = 0;
    double total = 0.0;
    for (int ni = 0; ni < n; ++ni)
        for (int64_t p = 0; p < hw; ++p) {
            const int32_t y = labels.v[static_cast<size_t>(ni * hw + p)];
            if (y == ignore_label) continue;
            if (y < 0 || y >= k)
                throw ArgumentError("cross_entropy: label " + std::to_string(y) +
                                    " outside [0," + std::to_string(k) + ")");
            const int64_t base = (static_cast<int64_t>(ni) * k) * hw + p;
            double mx = pl[base];
            for (int ki = 1; ki < k; ++ki) mx = std::max(mx, pl[base + ki * hw]);
            double s = 0.0;
            for (int ki = 0; ki < k; ++ki) s += std::exp(pl[base + ki * hw] - mx);
            const double l = mx + std::log(s);
            (*lse)[static_cast<size_t>(ni * hw + p)] = l;
            total += l - pl[base + static_cast<int64_t>(y) * hw];
            ++kept;
        }
    if (kept == 0) throw DegenerateError("cross_entropy: every pixel carries the ignore label");
    Tensor out = make_out({1}, logits.dtype(), {logits});
    out.data()[0] = total / static_cast<double>(kept);
    out.impl()->round_to_dtype();
    if (out.requires_grad()) {
        auto lab = std::make_shared<LabelMap>(labels);
        out.impl()->backward_fn = [n, k, hw, kept, lse, lab, ignore_label](TensorImpl& o) {
            if (double* g = grad_of(o.parents[0])) {
                const double* pl = o.parents[0]->data.data();
                const double gv = o.grad[0] / static_cast<double>(kept);
                par_for(static_cast<int64_t>(n) * hw, [&](int64_t np) {
                    const int64_t ni = np / hw, p = np % hw;
                    const int32_t y = lab->v[static_cast<size_t>(np)];
                    if (y == ignore_label) return;
                    const int64_t base = ni * k * hw + p;
                    const double l = (*lse)[static_cast<size_t>(np)];
                    for (int ki = 0; ki < k; ++ki) {
                        const double prob = std::exp(pl[base + ki * hw] - l);
                        g[base + ki * hw] += gv * (prob - (ki == y ? 1.0 : 0.0));
                    }
                });
            }
        };
    }
    return out;
}

LabelMap argmax_channels(const Tensor& logits) {
    if (logits.ndim() != 4) throw DimensionError("argmax_channels: expected [N,K,H,W]");
    const int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    LabelMap out;
    out.n = n;
    out.h = h;
    out.w = w;
    out.v.resize(static_cast<size_t>(n) * hw);
    const double* pl = logits.data().data();
    for (int ni = 0; ni < n; ++ni)
        for (int64_t p = 0; p < hw; ++p) {
            const int64_t base = static_cast<int64_t>(ni) * k * hw + p;
            int best = 0;
            double bv = pl[base];
            for (int ki = 1; ki < k; ++ki) {
                const double v = pl[base + ki * hw];
                if (v > bv) {
                    bv = v;
                    best = ki;
                }
            }
            out.v[static_cast<size_t>(ni * hw + p)] = best;
        }
    return out;
}

}  // namespace ops
}  // namespace dbat
