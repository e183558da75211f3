#pragma once

#include "dbat/encoder.hpp"

namespace dbat {

enum class MergeMode { attention, plain_residual };

struct MergeConfig {
    MergeMode mode = MergeMode::attention;
    int heads = 4;
    int window = 4;  // clamped to Map4's spatial size
};

// Global-to-local injection of the aggregated features into Map4: queries
// come from Map4, keys/values from the aggregated features, attention runs
// within non-overlapping windows, and the result rides a residual on the raw
// Map4.
struct FeatureMerge {
    MergeConfig cfg;
    int dim = 0;
    int window_eff = 0;
    LayerNormLayer norm_q, norm_kv;
    LinearLayer q_proj, k_proj, v_proj, out_proj;

    FeatureMerge() = default;
    FeatureMerge(ParamFactory& f, const EncoderConfig& enc, const MergeConfig& cfg);

    Tensor forward(const Tensor& map4, const Tensor& aggregated, Recorder* rec = nullptr) const;
    void collect(ParamList& out);
};

}  // namespace dbat
