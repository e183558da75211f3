#pragma once

#include <array>

#include "dbat/encoder.hpp"

namespace dbat {

enum class MaskPredictor { conv1x1, dilated_conv };
enum class Downsampler { mlp, average_pool };

struct DbaConfig {
    MaskPredictor mask_predictor = MaskPredictor::conv1x1;
    Downsampler downsampler = Downsampler::mlp;
    int dilation = 2;  // dilated_conv only
};

// Per-pixel stage weights at Map4 resolution; along axis 1 every pixel is a
// softmax over the four stages.
struct AttentionStack {
    Tensor weights;  // [N, 4, H4, W4]
};

// per-pixel convex combination: out[n,c,h,w] = sum_i attn[n,i,h,w] * maps[i][n,c,h,w],
// mask weights broadcast across channels
Tensor aggregate(const std::array<Tensor, 4>& maps, const AttentionStack& attn);

// Dynamic backward attention: masks predicted from Map4 select per pixel how
// much each stage's (shape-aligned) features contribute.
struct Dba {
    DbaConfig cfg;
    int c4 = 0;
    Conv1x1Layer pred_conv;      // conv1x1 predictor
    Conv2dLayer pred_dilated;    // dilated 3x3 predictor
    std::array<Conv1x1Layer, 3> down_proj;  // projection to C4 per shallow stage
    std::array<int, 3> down_factor = {8, 4, 2};

    Dba() = default;
    Dba(ParamFactory& f, const EncoderConfig& enc, const DbaConfig& cfg);

    AttentionStack predict_masks(const Tensor& map4, Recorder* rec = nullptr) const;
    // i in 1..3; matches Map4 in spatial shape and channels
    Tensor downsample_map(const Tensor& map_i, int i) const;
    // -> aggregated feature [N, C4, H4, W4]
    Tensor forward(const StagePyramid& pyr, AttentionStack* attn_out = nullptr,
                   Recorder* rec = nullptr) const;
    void collect(ParamList& out);
};

}  // namespace dbat
