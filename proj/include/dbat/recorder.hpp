#pragma once

#include <string>

#include "dbat/tensor.hpp"

namespace dbat {

// Passive observation hooks for the analysis tooling. Modules call these
// during forward passes when a recorder is attached; layer order follows
// forward propagation.
struct Recorder {
    virtual ~Recorder() = default;
    // value is an NCHW feature map (or [N,4,H,W] for attention masks)
    virtual void layer(const std::string& /*name*/, const Tensor& /*value*/) {}
    // alpha: softmax-normalized [windows, heads, T, T] weights over window
    // positions; stride converts window offsets to input pixels
    virtual void attention(const std::string& /*name*/, const Tensor& /*alpha*/, int /*window*/,
                           int /*stride*/) {}
};

}  // namespace dbat
