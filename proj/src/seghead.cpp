#include "dbat/seghead.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"

namespace dbat {

MetricsReport compute_metrics(const LabelMap& pred, const LabelMap& labels, int num_classes,
                              int32_t ignore_label) {
    if (pred.n != labels.n || pred.h != labels.h || pred.w != labels.w)
        throw DimensionError("metrics: prediction and label maps disagree in shape");
    if (num_classes <= 0) throw ArgumentError("metrics: num_classes must be positive");

    MetricsReport r;
    r.num_classes = num_classes;
    r.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
    for (int64_t i = 0; i < labels.size(); ++i) {
        const int32_t g = labels.v[static_cast<size_t>(i)];
        if (g == ignore_label) continue;
        const int32_t p = pred.v[static_cast<size_t>(i)];
        if (g < 0 || g >= num_classes)
            throw ArgumentError("metrics: label " + std::to_string(g) + " outside [0," +
                                std::to_string(num_classes) + ")");
        if (p < 0 || p >= num_classes)
            throw ArgumentError("metrics: prediction " + std::to_string(p) + " outside [0," +
                                std::to_string(num_classes) + ")");
        ++r.confusion[static_cast<size_t>(g) * num_classes + p];
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    int64_t total = 0, correct = 0;
    r.per_class_acc.assign(static_cast<size_t>(num_classes), nan);
    r.per_class_iou.assign(static_cast<size_t>(num_classes), nan);
    double acc_sum = 0.0, iou_sum = 0.0;
    int present = 0;
    for (int k = 0; k < num_classes; ++k) {
        int64_t row = 0, col = 0;
        for (int j = 0; j < num_classes; ++j) {
            row += r.confusion[static_cast<size_t>(k) * num_classes + j];
            col += r.confusion[static_cast<size_t>(j) * num_classes + k];
        }
        const int64_t diag = r.confusion[static_cast<size_t>(k) * num_classes + k];
        total += row;
        correct += diag;
        if (row > 0) {
            const double acc = static_cast<double>(diag) / static_cast<double>(row);
            const double iou = static_cast<double>(diag) / static_cast<double>(row + col - diag);
            r.per_class_acc[static_cast<size_t>(k)] = acc;
            r.per_class_iou[static_cast<size_t>(k)] = iou;
            acc_sum += acc;
            iou_sum += iou;
            ++present;
        } else if (col > 0) {
            // never in ground truth but predicted: IoU defined (0), still
            // excluded from the averages
            r.per_class_iou[static_cast<size_t>(k)] = 0.0;
        }
    }
    if (total == 0) throw DegenerateError("metrics: every pixel carries the ignore label");
    r.pixel_acc = static_cast<double>(correct) / static_cast<double>(total);
    r.mean_acc = present > 0 ? acc_sum / present : nan;
    r.miou = present > 0 ? iou_sum / present : nan;
    return r;
}

std::string MetricsReport::to_json_string(int indent) const {
    nlohmann::json j;
    j["pixel_acc"] = pixel_acc;
    j["mean_acc"] = mean_acc;
    j["miou"] = miou;
    j["per_class_acc"] = per_class_acc;
    j["per_class_iou"] = per_class_iou;
    nlohmann::json rows = nlohmann::json::array();
    for (int k = 0; k < num_classes; ++k) {
        nlohmann::json row = nlohmann::json::array();
        for (int l = 0; l < num_classes; ++l)
            row.push_back(confusion[static_cast<size_t>(k) * num_classes + l]);
        rows.push_back(row);
    }
    j["confusion"] = rows;
    return j.dump(indent);
}

FpnHead::FpnHead(ParamFactory& f, const EncoderConfig& enc, int fpn_channels, int num_classes_)
    : channels(fpn_channels), num_classes(num_classes_) {
    if (fpn_channels <= 0) throw ConfigError("fpn: channels must be positive");
    if (num_classes_ < 2) throw ConfigError("fpn: need at least 2 classes");
    for (int i = 0; i < 4; ++i) {
        lateral[static_cast<size_t>(i)] = Conv1x1Layer(
            f, "head.lateral" + std::to_string(i + 1), enc.stage_channels(i), channels);
        smooth[static_cast<size_t>(i)] =
            Conv2dLayer(f, "head.smooth" + std::to_string(i + 1), channels, channels, 3);
    }
    classifier = Conv1x1Layer(f, "head.classifier", channels, num_classes);
}

Tensor FpnHead::forward(const std::array<Tensor, 4>& maps, int out_h, int out_w,
                        Recorder* rec) const {
    std::array<Tensor, 4> p;
    for (int i = 0; i < 4; ++i) p[static_cast<size_t>(i)] = lateral[static_cast<size_t>(i)].forward(maps[static_cast<size_t>(i)]);
    for (int i = 2; i >= 0; --i)
        p[static_cast<size_t>(i)] =
            ops::add(p[static_cast<size_t>(i)], ops::resize_nearest(p[static_cast<size_t>(i) + 1], 2));
    Tensor fused;
    for (int i = 0; i < 4; ++i) {
        Tensor s = smooth[static_cast<size_t>(i)].forward(p[static_cast<size_t>(i)]);
        if (rec) rec->layer("head.p" + std::to_string(i + 1), s);
        if (i > 0) s = ops::resize_nearest(s, 1 << i);
        fused = i == 0 ? s : ops::add(fused, s);
    }
    Tensor logits = classifier.forward(fused);
    logits = ops::resize_bilinear(logits, out_h, out_w);
    if (rec) rec->layer("head.logits", logits);
    return logits;
}

void FpnHead::collect(ParamList& out) {
    for (auto& l : lateral) l.collect(out);
    for (auto& s : smooth) s.collect(out);
    classifier.collect(out);
}

}  // namespace dbat
