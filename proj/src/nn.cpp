#include "dbat/nn.hpp"

namespace dbat {

Tensor nchw_to_tokens(const Tensor& x) {
    if (x.ndim() != 4) throw DimensionError("nchw_to_tokens: expected NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    return ops::reshape(ops::permute(x, {0, 2, 3, 1}), {n, h * w, c});
}

Tensor tokens_to_nchw(const Tensor& x, int h, int w) {
    if (x.ndim() != 3) throw DimensionError("tokens_to_nchw: expected [N,T,C]");
    const int n = x.dim(0), c = x.dim(2);
    if (x.dim(1) != h * w)
        throw DimensionError("tokens_to_nchw: token count " + std::to_string(x.dim(1)) +
                             " != " + std::to_string(h) + "x" + std::to_string(w));
    return ops::permute(ops::reshape(x, {n, h, w, c}), {0, 3, 1, 2});
}

}  // namespace dbat
