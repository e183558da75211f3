#pragma once

#include <vector>

#include "dbat/tensor.hpp"

namespace dbat {

// Integer label map, the non-differentiable side of segmentation data.
struct LabelMap {
    int n = 0, h = 0, w = 0;
    std::vector<int32_t> v;  // row-major [n,h,w]
    int64_t size() const { return static_cast<int64_t>(n) * h * w; }
};

constexpr int32_t kIgnoreLabel = 255;

namespace ops {

// elementwise, same shape
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// b's shape must be a trailing suffix of a's shape; b broadcasts over the
// leading dims
Tensor add_bcast(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// a: [...,m,k] @ b: [...,k,n] -> [...,m,n]; leading dims broadcast where
// either side is 1
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor slice_last(const Tensor& a, int offset, int length);
// rows of table gathered by index: table [R, C], idx values in [0, R)
Tensor index_select0(const Tensor& table, const std::vector<int>& idx);

Tensor softmax(const Tensor& a, int axis);
Tensor gelu(const Tensor& a);
// normalizes the last dim; gamma/beta shaped [last]
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// x: [..., in] @ w: [in, out] (+ bias [out])
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);

// NCHW kernels
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor* bias);  // w: [K, C]
// stride-1 square kernel, w: [K, C, kh, kw]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int pad, int dilation = 1);
Tensor space_to_depth(const Tensor& x, int factor);
Tensor avg_pool(const Tensor& x, int factor);  // kernel = stride = factor
Tensor resize_nearest(const Tensor& x, int factor);
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor roll2d(const Tensor& x, int shift_y, int shift_x);

// [N,C,H,W] <-> [N*nWin, w*w, C] over non-overlapping w-by-w windows
Tensor window_partition(const Tensor& x, int window);
Tensor window_reverse(const Tensor& t, int window, int n, int c, int h, int w);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// mean cross-entropy over channel axis 1 of [N,K,H,W]; ignored pixels
// contribute nothing; throws DegenerateError when every pixel is ignored
Tensor cross_entropy(const Tensor& logits, const LabelMap& labels,
                     int32_t ignore_label = kIgnoreLabel);

// per-pixel argmax over channel axis of [N,K,H,W]
LabelMap argmax_channels(const Tensor& logits);

}  // namespace ops
}  // namespace dbat
