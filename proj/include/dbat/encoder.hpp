#pragma once

#include <array>
#include <vector>

#include "dbat/nn.hpp"
#include "dbat/recorder.hpp"

namespace dbat {

struct EncoderConfig {
    int embed_dim = 16;                       // channels at stage 1, doubled per stage
    std::vector<int> depths = {1, 1, 1, 1};   // blocks per stage
    std::vector<int> heads = {2, 4, 4, 8};    // must divide that stage's channels
    int window = 4;                           // clamped per stage to min(window, Hs, Ws)
    bool shift_windows = false;               // cyclic shift in alternate blocks
    int in_channels = 3;
    int image_h = 64;
    int image_w = 64;

    int stage_channels(int s) const { return embed_dim << s; }      // s in [0,4)
    int stage_stride(int s) const { return 4 << s; }
    int stage_h(int s) const { return image_h / stage_stride(s); }
    int stage_w(int s) const { return image_w / stage_stride(s); }
    int effective_window(int s) const {
        return std::min(window, std::min(stage_h(s), stage_w(s)));
    }
    // throws ConfigError on any violated invariant
    void validate() const;
};

// The four stage outputs at strides 4/8/16/32.
struct StagePyramid {
    std::array<Tensor, 4> maps;
    static constexpr std::array<int, 4> strides = {4, 8, 16, 32};
};

// Multi-head self-attention over non-overlapping square windows with a
// learned relative position bias, optionally on cyclic-shifted windows.
struct WindowAttention {
    std::string name;
    int dim = 0, heads = 0, window = 0, stride = 0;
    LinearLayer qkv;
    LinearLayer proj;
    Parameter rel_bias;           // [(2w-1)^2, heads]
    std::vector<int> rel_index;   // [T*T] lookups into rel_bias

    WindowAttention() = default;
    WindowAttention(ParamFactory& f, const std::string& name, int dim, int heads, int window,
                    int stride);

    // tokens [N, H*W, C] -> same; shift > 0 rolls windows and masks
    // cross-boundary pairs
    Tensor forward(const Tensor& x, int h, int w, int shift, Recorder* rec) const;
    void collect(ParamList& out);
};

// pre-norm transformer block: x + attn(LN(x)), then x + MLP(LN(x))
struct SwinBlock {
    LayerNormLayer norm1, norm2;
    WindowAttention attn;
    LinearLayer fc1, fc2;
    int shift = 0;

    SwinBlock() = default;
    SwinBlock(ParamFactory& f, const std::string& prefix, int dim, int heads, int window,
              int stride, int shift);
    Tensor forward(const Tensor& x, int h, int w, Recorder* rec) const;
    void collect(ParamList& out);
};

// 2x2 neighborhood concat (4C) -> LayerNorm -> Linear to 2C, halving the
// spatial resolution
struct PatchMergeLayer {
    LayerNormLayer norm;
    LinearLayer reduce;

    PatchMergeLayer() = default;
    PatchMergeLayer(ParamFactory& f, const std::string& prefix, int dim);
    Tensor forward(const Tensor& tokens, int h, int w) const;
    void collect(ParamList& out);
};

// non-overlapping 4x4 patches -> linear projection -> LayerNorm
struct PatchEmbed {
    LinearLayer proj;
    LayerNormLayer norm;

    PatchEmbed() = default;
    PatchEmbed(ParamFactory& f, const std::string& prefix, int in_channels, int dim);
    Tensor forward(const Tensor& image) const;  // -> tokens [N, H/4*W/4, C1]
    void collect(ParamList& out);
};

struct Encoder {
    EncoderConfig cfg;
    PatchEmbed embed;
    std::array<std::vector<SwinBlock>, 4> stages;
    std::array<PatchMergeLayer, 3> merges;
    std::array<LayerNormLayer, 4> out_norms;  // pyramid taps are post-stage LN

    Encoder() = default;
    Encoder(ParamFactory& f, const EncoderConfig& cfg);
    StagePyramid forward(const Tensor& image, Recorder* rec = nullptr) const;
    void collect(ParamList& out);
};

}  // namespace dbat
