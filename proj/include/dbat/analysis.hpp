#pragma once

#include <array>
#include <map>
#include <optional>

#include "dbat/checkpoint.hpp"

namespace dbat {

// (examples x features) activation matrix recorded from one layer
struct ActivationMatrix {
    std::string layer_name;
    int m = 0;  // rows
    int p = 0;  // features
    std::vector<double> x;  // row-major

    double& at(int r, int c) { return x[static_cast<size_t>(r) * p + c]; }
    double at(int r, int c) const { return x[static_cast<size_t>(r) * p + c]; }
};

// unbiased HSIC estimator over Gram matrices with zeroed diagonals;
// m must be at least 4
double hsic1(const std::vector<double>& k, const std::vector<double>& l, int m);

// X X^T after centering is NOT applied here; callers center first
std::vector<double> gram(const ActivationMatrix& x);
void center_columns(ActivationMatrix& x);

// normalized layer similarity; centers columns of both inputs, throws
// DegenerateError when either self-similarity vanishes (constant layer)
double cka(const ActivationMatrix& x, const ActivationMatrix& y);

// Rows for CKA are (example, probe location) pairs with channels as
// features. Locations live in normalized image space and are shared across
// layers (and both models), so rows correspond even when resolutions differ.
std::vector<std::pair<double, double>> probe_locations(uint64_t seed, int count);
ActivationMatrix activation_matrix(const std::string& layer, const Tensor& value_nchw,
                                   const std::vector<std::pair<double, double>>& locations);

struct CkaMatrixResult {
    std::vector<std::string> layers_a, layers_b;
    std::vector<double> values;  // row-major |a| x |b|; NaN marks degenerate cells

    double at(size_t i, size_t j) const { return values[i * layers_b.size() + j]; }
    std::optional<double> lookup(const std::string& a, const std::string& b) const;
    std::string to_json_string(int indent = -1) const;
    std::string to_csv() const;
};

// HSIC sums accumulate across probe minibatches and normalize once at the
// end; both models see identical probe inputs
CkaMatrixResult cka_matrix(const DbatModel& model_a, const DbatModel& model_b,
                           const RunConfig& cfg, uint64_t probe_seed);

struct AttentionHeadStat {
    std::string layer;
    int stage = 0;  // 1..4 for encoder stages, 0 for the merge module
    int head = 0;
    double mean_distance = 0.0;   // attention-weighted pixel distance, input units
    double equivalent_side = 0.0; // side of the square whose diagonal is mean_distance
};

struct AttentionStatsReport {
    std::array<double, 4> mask_means = {0, 0, 0, 0};  // Attn1..Attn4 averages
    std::vector<AttentionHeadStat> heads;

    std::string to_json_string(int indent = -1) const;
    std::string to_csv() const;
};

AttentionStatsReport attention_stats(const DbatModel& model, const RunConfig& cfg,
                                     uint64_t probe_seed);

// ---------------------------------------------------------------------------
// network dissection against the synthetic concept corpus

struct ConceptRef {
    std::string category;  // "texture" | "color" | "shape"
    int id = 0;
    std::string name() const { return category + ":" + std::to_string(id); }
};

struct UnitDissection {
    int unit = 0;
    double threshold = 0.0;
    double best_iou = 0.0;
    int best_concept = -1;  // index into concepts, -1 when nothing matched
    bool labeled = false;
};

struct DissectionReport {
    std::string layer;
    double quantile = 0.005;
    double iou_threshold = 0.04;
    std::vector<ConceptRef> concepts;
    std::vector<UnitDissection> units;
    std::map<std::string, int> category_counts;
    int unlabeled = 0;

    std::string to_json_string(int indent = -1) const;
    std::string to_csv() const;
};

// Thresholds each unit at its top-`quantile` activation value, upsamples the
// binary masks to label resolution, and assigns the best-IoU concept when it
// clears iou_threshold.
DissectionReport dissect(const DbatModel& model, const std::string& layer,
                         const std::vector<SyntheticScene>& corpus, double quantile = 0.005,
                         double iou_threshold = 0.04);

// same, over externally supplied per-image activations [C, h, w]
DissectionReport dissect_activations(const std::string& layer,
                                     const std::vector<Tensor>& activations,
                                     const std::vector<SyntheticScene>& corpus, double quantile,
                                     double iou_threshold);

// raw activation dump: JSON header line + little-endian f32 payload, one
// file per recorded layer
void dump_activations(const DbatModel& model, const RunConfig& cfg, uint64_t probe_seed,
                      const std::filesystem::path& dir);

}  // namespace dbat
