#pragma once

#include <array>

#include "dbat/encoder.hpp"

namespace dbat {

// Pixel Acc / Mean Acc / mIoU plus their per-class breakdown. Classes without
// ground-truth pixels carry NaN per-class entries and are excluded from the
// averaged scores.
struct MetricsReport {
    int num_classes = 0;
    double pixel_acc = 0.0;
    double mean_acc = 0.0;
    double miou = 0.0;
    std::vector<double> per_class_acc;
    std::vector<double> per_class_iou;
    std::vector<int64_t> confusion;  // [K*K] row-major, rows index ground truth

    std::string to_json_string(int indent = -1) const;
};

MetricsReport compute_metrics(const LabelMap& pred, const LabelMap& labels, int num_classes,
                              int32_t ignore_label = kIgnoreLabel);

// FPN-lite decoder: lateral 1x1 projections, top-down nearest upsampling with
// addition, 3x3 smoothing per level, sum fusion at stride 4, class
// projection, bilinear upsample to the input resolution.
struct FpnHead {
    int channels = 32;
    int num_classes = 0;
    std::array<Conv1x1Layer, 4> lateral;
    std::array<Conv2dLayer, 4> smooth;
    Conv1x1Layer classifier;

    FpnHead() = default;
    FpnHead(ParamFactory& f, const EncoderConfig& enc, int fpn_channels, int num_classes);

    // maps: {Map1, Map2, Map3, X} where X sits at stride 32 (MergedFeature or
    // Map4); returns [N, K, out_h, out_w]
    Tensor forward(const std::array<Tensor, 4>& maps, int out_h, int out_w,
                   Recorder* rec = nullptr) const;
    void collect(ParamList& out);
};

}  // namespace dbat
