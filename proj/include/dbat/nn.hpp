#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dbat/ops.hpp"
#include "dbat/rng.hpp"
#include "dbat/tensor.hpp"

namespace dbat {

// Named trainable tensor. Names are hierarchical ("encoder.stage2.attn.qkv")
// and define checkpoint placement; weight decay skips entries flagged
// no_decay (biases, norm affines, relative position tables).
struct Parameter {
    std::string name;
    Tensor tensor;
    bool no_decay = false;
};

using ParamList = std::vector<Parameter*>;

// Initialization is seeded per parameter from (seed, name) so construction
// order never matters.
class ParamFactory {
public:
    ParamFactory(uint64_t seed, DType dtype) : seed_(seed), dtype_(dtype) {}

    DType dtype() const { return dtype_; }

    Parameter trunc_normal(const std::string& name, std::vector<int> shape, double std_dev = 0.02) {
        Rng rng(mix_seed(seed_, fnv1a(name)));
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
        for (double& x : v) x = rng.trunc_normal(std_dev);
        return {name, Tensor::from_data(std::move(shape), std::move(v), dtype_, true), false};
    }

    Parameter zeros(const std::string& name, std::vector<int> shape, bool no_decay = true) {
        return {name, Tensor::zeros(std::move(shape), dtype_, true), no_decay};
    }

    Parameter ones(const std::string& name, std::vector<int> shape) {
        return {name, Tensor::full(std::move(shape), 1.0, dtype_, true), true};
    }

private:
    uint64_t seed_;
    DType dtype_;
};

struct LinearLayer {
    Parameter weight;  // [in, out]
    Parameter bias;    // [out]
    bool has_bias = true;

    LinearLayer() = default;
    LinearLayer(ParamFactory& f, const std::string& prefix, int in, int out, bool with_bias = true)
        : weight(f.trunc_normal(prefix + ".weight", {in, out})),
          bias(with_bias ? f.zeros(prefix + ".bias", {out}) : Parameter{}),
          has_bias(with_bias) {}

    Tensor forward(const Tensor& x) const {
        return ops::linear(x, weight.tensor, has_bias ? &bias.tensor : nullptr);
    }
    void collect(ParamList& out) {
        out.push_back(&weight);
        if (has_bias) out.push_back(&bias);
    }
};

struct LayerNormLayer {
    Parameter gamma;
    Parameter beta;

    LayerNormLayer() = default;
    LayerNormLayer(ParamFactory& f, const std::string& prefix, int dim)
        : gamma(f.ones(prefix + ".gamma", {dim})), beta(f.zeros(prefix + ".beta", {dim})) {}

    Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma.tensor, beta.tensor); }
    void collect(ParamList& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

struct Conv1x1Layer {
    Parameter weight;  // [K, C]
    Parameter bias;    // [K]

    Conv1x1Layer() = default;
    Conv1x1Layer(ParamFactory& f, const std::string& prefix, int in, int out)
        : weight(f.trunc_normal(prefix + ".weight", {out, in})),
          bias(f.zeros(prefix + ".bias", {out})) {}

    Tensor forward(const Tensor& x) const { return ops::conv1x1(x, weight.tensor, &bias.tensor); }
    void collect(ParamList& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

struct Conv2dLayer {
    Parameter weight;  // [K, C, k, k]
    Parameter bias;    // [K]
    int pad = 1;
    int dilation = 1;

    Conv2dLayer() = default;
    Conv2dLayer(ParamFactory& f, const std::string& prefix, int in, int out, int ksize,
                int dilation_ = 1)
        : weight(f.trunc_normal(prefix + ".weight", {out, in, ksize, ksize})),
          bias(f.zeros(prefix + ".bias", {out})),
          pad(dilation_ * (ksize - 1) / 2),
          dilation(dilation_) {}

    Tensor forward(const Tensor& x) const {
        return ops::conv2d(x, weight.tensor, &bias.tensor, pad, dilation);
    }
    void collect(ParamList& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// layout helpers shared by every module that hops between feature-map and
// token views
Tensor nchw_to_tokens(const Tensor& x);                     // [N,C,H,W] -> [N,H*W,C]
Tensor tokens_to_nchw(const Tensor& x, int h, int w);       // [N,T,C] -> [N,C,h,w]

}  // namespace dbat
