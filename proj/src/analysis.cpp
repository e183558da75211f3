#include "dbat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "dbat/rng.hpp"

namespace dbat {

namespace {

// records every named layer tensor of one forward pass
struct CaptureRecorder : Recorder {
    std::vector<std::pair<std::string, Tensor>> captured;
    void layer(const std::string& name, const Tensor& value) override {
        captured.emplace_back(name, value);
    }
};

}  // namespace

double hsic1(const std::vector<double>& k, const std::vector<double>& l, int m) {
    if (m < 4) throw ArgumentError("hsic1 undefined for m < 4 (got m=" + std::to_string(m) + ")");
    if (k.size() != static_cast<size_t>(m) * m || l.size() != static_cast<size_t>(m) * m)
        throw DimensionError("hsic1: Gram matrices must be " + std::to_string(m) + "x" +
                             std::to_string(m));
    // the three contractions over zero-diagonal matrices: tr(K~L~), 1'K~1,
    // 1'L~1, 1'K~L~1
    double trace_kl = 0.0, sum_k = 0.0, sum_l = 0.0, cross = 0.0;
    std::vector<double> krow(static_cast<size_t>(m), 0.0), lrow(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            if (i == j) continue;
            const double kv = k[static_cast<size_t>(i) * m + j];
            const double lv = l[static_cast<size_t>(j) * m + i];
            trace_kl += kv * lv;
            krow[static_cast<size_t>(i)] += kv;
            lrow[static_cast<size_t>(i)] += l[static_cast<size_t>(i) * m + j];
        }
    for (int i = 0; i < m; ++i) {
        sum_k += krow[static_cast<size_t>(i)];
        sum_l += lrow[static_cast<size_t>(i)];
    }
    // 1' K~ L~ 1 = sum_j (col sums of K~)_j (row sums of L~)_j; K~ cols via rows
    std::vector<double> kcol(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            if (i == j) continue;
            kcol[static_cast<size_t>(j)] += k[static_cast<size_t>(i) * m + j];
        }
    for (int j = 0; j < m; ++j) cross += kcol[static_cast<size_t>(j)] * lrow[static_cast<size_t>(j)];

    const double md = static_cast<double>(m);
    return (trace_kl + (sum_k * sum_l) / ((md - 1.0) * (md - 2.0)) - (2.0 / (md - 2.0)) * cross) /
           (md * (md - 3.0));
}

std::vector<double> gram(const ActivationMatrix& x) {
    std::vector<double> k(static_cast<size_t>(x.m) * x.m, 0.0);
    for (int i = 0; i < x.m; ++i)
        for (int j = i; j < x.m; ++j) {
            double acc = 0.0;
            for (int f = 0; f < x.p; ++f) acc += x.at(i, f) * x.at(j, f);
            k[static_cast<size_t>(i) * x.m + j] = acc;
            k[static_cast<size_t>(j) * x.m + i] = acc;
        }
    return k;
}

void center_columns(ActivationMatrix& x) {
    for (int f = 0; f < x.p; ++f) {
        double mu = 0.0;
        for (int r = 0; r < x.m; ++r) mu += x.at(r, f);
        mu /= x.m;
        for (int r = 0; r < x.m; ++r) x.at(r, f) -= mu;
    }
}

double cka(const ActivationMatrix& x, const ActivationMatrix& y) {
    if (x.m != y.m)
        throw DimensionError("cka: example counts differ (" + std::to_string(x.m) + " vs " +
                             std::to_string(y.m) + ")");
    ActivationMatrix xc = x, yc = y;
    center_columns(xc);
    center_columns(yc);
    const std::vector<double> k = gram(xc), l = gram(yc);
    const double sxx = hsic1(k, k, x.m);
    const double syy = hsic1(l, l, y.m);
    constexpr double kTol = 1e-12;
    if (sxx <= kTol || syy <= kTol)
        throw DegenerateError("cka: degenerate layer (self-HSIC vanishes for \"" +
                              (sxx <= kTol ? x.layer_name : y.layer_name) + "\")");
    const double v = hsic1(k, l, x.m) / std::sqrt(sxx * syy);
    return std::clamp(v, -1.0, 1.0);
}

std::vector<std::pair<double, double>> probe_locations(uint64_t seed, int count) {
    Rng rng(mix_seed(seed, 0xCA11));
    std::vector<std::pair<double, double>> locs(static_cast<size_t>(count));
    for (auto& [u, v] : locs) {
        u = rng.uniform();
        v = rng.uniform();
    }
    return locs;
}

ActivationMatrix activation_matrix(const std::string& layer, const Tensor& value,
                                   const std::vector<std::pair<double, double>>& locations) {
    if (value.ndim() != 4)
        throw DimensionError("activation_matrix: layer \"" + layer + "\" is not NCHW");
    const int n = value.dim(0), c = value.dim(1), h = value.dim(2), w = value.dim(3);
    ActivationMatrix out;
    out.layer_name = layer;
    out.m = n * static_cast<int>(locations.size());
    out.p = c;
    out.x.resize(static_cast<size_t>(out.m) * c);
    const double* pv = value.data().data();
    int r = 0;
    for (int ni = 0; ni < n; ++ni)
        for (const auto& [u, v] : locations) {
            const int y = std::min(h - 1, static_cast<int>(u * h));
            const int x = std::min(w - 1, static_cast<int>(v * w));
            for (int ci = 0; ci < c; ++ci)
                out.at(r, ci) =
                    pv[((static_cast<int64_t>(ni) * c + ci) * h + y) * w + x];
            ++r;
        }
    return out;
}

std::optional<double> CkaMatrixResult::lookup(const std::string& a, const std::string& b) const {
    auto ia = std::find(layers_a.begin(), layers_a.end(), a);
    auto ib = std::find(layers_b.begin(), layers_b.end(), b);
    if (ia == layers_a.end() || ib == layers_b.end()) return std::nullopt;
    return at(static_cast<size_t>(ia - layers_a.begin()), static_cast<size_t>(ib - layers_b.begin()));
}

std::string CkaMatrixResult::to_json_string(int indent) const {
    nlohmann::json j;
    j["layers_a"] = layers_a;
    j["layers_b"] = layers_b;
    nlohmann::json rows = nlohmann::json::array();
    for (size_t i = 0; i < layers_a.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t jj = 0; jj < layers_b.size(); ++jj) row.push_back(at(i, jj));
        rows.push_back(row);
    }
    j["matrix"] = rows;
    return j.dump(indent);
}

std::string CkaMatrixResult::to_csv() const {
    std::ostringstream os;
    os << "layer";
    for (const auto& b : layers_b) os << "," << b;
    os << "\n";
    for (size_t i = 0; i < layers_a.size(); ++i) {
        os << layers_a[i];
        for (size_t jj = 0; jj < layers_b.size(); ++jj) {
            const double v = at(i, jj);
            os << ",";
            if (std::isfinite(v)) os << v;
        }
        os << "\n";
    }
    return os.str();
}

CkaMatrixResult cka_matrix(const DbatModel& model_a, const DbatModel& model_b,
                           const RunConfig& cfg, uint64_t probe_seed) {
    NoGradGuard ng;
    const int batches = std::max(1, cfg.analysis.probe_batches);
    const int bsz = std::max(1, cfg.analysis.probe_batch_size);
    const int rows_per_example = std::max(1, cfg.analysis.cka_max_rows / bsz);

    CkaMatrixResult result;
    std::vector<double> s_xy;  // row-major later
    std::vector<double> s_xx, s_yy;

    for (int bi = 0; bi < batches; ++bi) {
        std::vector<SyntheticScene> scenes;
        for (int j = 0; j < bsz; ++j)
            scenes.push_back(generate_scene(
                scene_seed(mix_seed(probe_seed, 0x9b0be), static_cast<int64_t>(bi) * bsz + j),
                cfg.data.num_classes, cfg.data.crop, 0.0, cfg.data.preset));
        Tensor images = scenes_to_tensor(scenes, DType::f32);

        CaptureRecorder rec_a, rec_b;
        model_a.forward(images, &rec_a);
        model_b.forward(images, &rec_b);

        if (bi == 0) {
            for (auto& [name, t] : rec_a.captured) result.layers_a.push_back(name);
            for (auto& [name, t] : rec_b.captured) result.layers_b.push_back(name);
            s_xy.assign(result.layers_a.size() * result.layers_b.size(), 0.0);
            s_xx.assign(result.layers_a.size(), 0.0);
            s_yy.assign(result.layers_b.size(), 0.0);
        }

        const auto locs = probe_locations(mix_seed(probe_seed, static_cast<uint64_t>(bi)),
                                          rows_per_example);
        std::vector<std::vector<double>> grams_a, grams_b;
        int m = 0;
        for (size_t i = 0; i < rec_a.captured.size(); ++i) {
            ActivationMatrix am =
                activation_matrix(rec_a.captured[i].first, rec_a.captured[i].second, locs);
            center_columns(am);
            m = am.m;
            grams_a.push_back(gram(am));
        }
        for (size_t i = 0; i < rec_b.captured.size(); ++i) {
            ActivationMatrix am =
                activation_matrix(rec_b.captured[i].first, rec_b.captured[i].second, locs);
            center_columns(am);
            grams_b.push_back(gram(am));
        }
        for (size_t i = 0; i < grams_a.size(); ++i) {
            s_xx[i] += hsic1(grams_a[i], grams_a[i], m);
            for (size_t j = 0; j < grams_b.size(); ++j)
                s_xy[i * grams_b.size() + j] += hsic1(grams_a[i], grams_b[j], m);
        }
        for (size_t j = 0; j < grams_b.size(); ++j) s_yy[j] += hsic1(grams_b[j], grams_b[j], m);
    }

    constexpr double kTol = 1e-12;
    result.values.assign(result.layers_a.size() * result.layers_b.size(),
                         std::numeric_limits<double>::quiet_NaN());
    for (size_t i = 0; i < result.layers_a.size(); ++i)
        for (size_t j = 0; j < result.layers_b.size(); ++j) {
            if (s_xx[i] <= kTol || s_yy[j] <= kTol) continue;  // degenerate cell stays NaN
            result.values[i * result.layers_b.size() + j] =
                std::clamp(s_xy[i * result.layers_b.size() + j] / std::sqrt(s_xx[i] * s_yy[j]),
                           -1.0, 1.0);
        }
    return result;
}

// ---------------------------------------------------------------------------
// attention statistics

namespace {

struct StatsRecorder : Recorder {
    struct HeadAcc {
        double dist_sum = 0.0;
        int64_t query_count = 0;
    };
    // key: (layer, head)
    std::map<std::pair<std::string, int>, HeadAcc> heads;
    std::map<std::string, std::pair<int, int>> layer_meta;  // window, stride
    std::array<double, 4> mask_sum = {0, 0, 0, 0};
    int64_t mask_count = 0;

    void attention(const std::string& name, const Tensor& alpha, int window,
                   int stride) override {
        const int b = alpha.dim(0), nh = alpha.dim(1), t = alpha.dim(2);
        layer_meta[name] = {window, stride};
        // pairwise distances between window positions, in window units
        std::vector<double> dist(static_cast<size_t>(t) * t);
        for (int q = 0; q < t; ++q)
            for (int k = 0; k < t; ++k) {
                const double dy = q / window - k / window;
                const double dx = q % window - k % window;
                dist[static_cast<size_t>(q) * t + k] = std::sqrt(dy * dy + dx * dx);
            }
        const double* pa = alpha.data().data();
        for (int hd = 0; hd < nh; ++hd) {
            HeadAcc& acc = heads[{name, hd}];
            for (int bi = 0; bi < b; ++bi) {
                const double* blk = pa + ((static_cast<int64_t>(bi) * nh + hd)) * t * t;
                for (int q = 0; q < t; ++q)
                    for (int k = 0; k < t; ++k)
                        acc.dist_sum += blk[static_cast<int64_t>(q) * t + k] *
                                        dist[static_cast<size_t>(q) * t + k] * stride;
            }
            acc.query_count += static_cast<int64_t>(b) * t;
        }
    }

    void layer(const std::string& name, const Tensor& value) override {
        if (name != "dba.attn") return;
        const int n = value.dim(0), h = value.dim(2), w = value.dim(3);
        const int64_t hw = static_cast<int64_t>(h) * w;
        const double* pv = value.data().data();
        for (int ni = 0; ni < n; ++ni)
            for (int i = 0; i < 4; ++i) {
                const double* plane = pv + (static_cast<int64_t>(ni) * 4 + i) * hw;
                for (int64_t p = 0; p < hw; ++p) mask_sum[static_cast<size_t>(i)] += plane[p];
            }
        mask_count += static_cast<int64_t>(n) * hw;
    }
};

int stage_of_layer(const std::string& name) {
    auto pos = name.find("stage");
    if (pos == std::string::npos) return 0;
    return name[pos + 5] - '0';
}

}  // namespace

AttentionStatsReport attention_stats(const DbatModel& model, const RunConfig& cfg,
                                     uint64_t probe_seed) {
    if (!model.dba)
        throw ArgumentError("attention_stats: model has no DBA module (disable_dba set)");
    NoGradGuard ng;
    StatsRecorder rec;
    const int batches = std::max(1, cfg.analysis.probe_batches);
    const int bsz = std::max(1, cfg.analysis.probe_batch_size);
    for (int bi = 0; bi < batches; ++bi) {
        std::vector<SyntheticScene> scenes;
        for (int j = 0; j < bsz; ++j)
            scenes.push_back(generate_scene(
                scene_seed(mix_seed(probe_seed, 0x57a7), static_cast<int64_t>(bi) * bsz + j),
                cfg.data.num_classes, cfg.data.crop, 0.0, cfg.data.preset));
        model.forward(scenes_to_tensor(scenes, DType::f32), &rec);
    }

    AttentionStatsReport report;
    for (int i = 0; i < 4; ++i)
        report.mask_means[static_cast<size_t>(i)] =
            rec.mask_count > 0 ? rec.mask_sum[static_cast<size_t>(i)] / rec.mask_count : 0.0;
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    for (const auto& [key, acc] : rec.heads) {
        AttentionHeadStat s;
        s.layer = key.first;
        s.stage = stage_of_layer(key.first);
        s.head = key.second;
        s.mean_distance = acc.query_count > 0 ? acc.dist_sum / acc.query_count : 0.0;
        s.equivalent_side = s.mean_distance * kInvSqrt2;
        report.heads.push_back(s);
    }
    std::sort(report.heads.begin(), report.heads.end(),
              [](const AttentionHeadStat& a, const AttentionHeadStat& b) {
                  return std::tie(a.layer, a.head) < std::tie(b.layer, b.head);
              });
    return report;
}

std::string AttentionStatsReport::to_json_string(int indent) const {
    nlohmann::json j;
    j["mask_means"] = mask_means;
    nlohmann::json hs = nlohmann::json::array();
    for (const auto& h : heads)
        hs.push_back({{"layer", h.layer},
                      {"stage", h.stage},
                      {"head", h.head},
                      {"mean_distance", h.mean_distance},
                      {"equivalent_side", h.equivalent_side}});
    j["heads"] = hs;
    return j.dump(indent);
}

std::string AttentionStatsReport::to_csv() const {
    std::ostringstream os;
    os << "layer,stage,head,mean_distance,equivalent_side\n";
    for (const auto& h : heads)
        os << h.layer << "," << h.stage << "," << h.head << "," << h.mean_distance << ","
           << h.equivalent_side << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// network dissection

DissectionReport dissect_activations(const std::string& layer,
                                     const std::vector<Tensor>& activations,
                                     const std::vector<SyntheticScene>& corpus, double quantile,
                                     double iou_threshold) {
    if (corpus.empty()) throw ArgumentError("dissect: empty concept corpus");
    if (activations.size() != corpus.size())
        throw DimensionError("dissect: activation count does not match corpus size");
    if (quantile <= 0.0 || quantile >= 1.0)
        throw ArgumentError("dissect: quantile must lie in (0,1)");

    const int crop = corpus[0].crop;
    const int units = activations[0].dim(activations[0].ndim() - 3);

    // enumerate concepts present in the corpus
    DissectionReport report;
    report.layer = layer;
    report.quantile = quantile;
    report.iou_threshold = iou_threshold;
    const struct {
        const char* category;
        const std::vector<int32_t> SyntheticScene::* field;
    } kCategories[] = {{"texture", &SyntheticScene::texture_id},
                       {"color", &SyntheticScene::color_id},
                       {"shape", &SyntheticScene::shape_id}};
    for (const auto& cat : kCategories) {
        std::vector<int32_t> ids;
        for (const SyntheticScene& s : corpus)
            for (int32_t v : s.*cat.field)
                if (std::find(ids.begin(), ids.end(), v) == ids.end()) ids.push_back(v);
        std::sort(ids.begin(), ids.end());
        for (int32_t id : ids) report.concepts.push_back({cat.category, id});
        report.category_counts[cat.category] = 0;
    }

    // per-image binary masks at label resolution for every unit
    const size_t n_img = corpus.size();
    auto plane_of = [&](const Tensor& t, int unit) {
        // accepts [C,h,w] or [1,C,h,w]
        const int nd = t.ndim();
        const int h = t.dim(nd - 2), w = t.dim(nd - 1);
        return std::tuple<const double*, int, int>(
            t.data().data() + static_cast<int64_t>(unit) * h * w, h, w);
    };

    for (int u = 0; u < units; ++u) {
        // activation distribution across the whole corpus
        std::vector<double> values;
        for (const Tensor& t : activations) {
            auto [p, h, w] = plane_of(t, u);
            values.insert(values.end(), p, p + static_cast<int64_t>(h) * w);
        }
        const int64_t n_vals = static_cast<int64_t>(values.size());
        const int64_t k_above = std::llround(quantile * static_cast<double>(n_vals));
        // threshold so exactly k_above entries (up to ties) fall strictly above
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        const double a_k = sorted[static_cast<size_t>(n_vals - 1 - k_above)];

        std::vector<int64_t> inter(report.concepts.size(), 0), uni(report.concepts.size(), 0);
        for (size_t img = 0; img < n_img; ++img) {
            auto [p, h, w] = plane_of(activations[img], u);
            std::vector<uint8_t> mask;
            if (h == crop && w == crop) {
                mask.resize(static_cast<size_t>(crop) * crop);
                for (int64_t i = 0; i < static_cast<int64_t>(crop) * crop; ++i)
                    mask[static_cast<size_t>(i)] = p[i] > a_k ? 1 : 0;
            } else {
                std::vector<double> bin(static_cast<size_t>(h) * w);
                for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
                    bin[static_cast<size_t>(i)] = p[i] > a_k ? 1.0 : 0.0;
                NoGradGuard ng;
                Tensor up = ops::resize_bilinear(
                    Tensor::from_data({1, 1, h, w}, std::move(bin), DType::f64), crop, crop);
                mask.resize(static_cast<size_t>(crop) * crop);
                for (int64_t i = 0; i < static_cast<int64_t>(crop) * crop; ++i)
                    mask[static_cast<size_t>(i)] = up.data()[static_cast<size_t>(i)] > 0.5 ? 1 : 0;
            }
            for (size_t c = 0; c < report.concepts.size(); ++c) {
                const ConceptRef& ref = report.concepts[c];
                const std::vector<int32_t>* field = nullptr;
                for (const auto& cat : kCategories)
                    if (ref.category == cat.category) field = &(corpus[img].*cat.field);
                for (size_t i = 0; i < mask.size(); ++i) {
                    const bool in_concept = (*field)[i] == ref.id;
                    const bool in_mask = mask[i] != 0;
                    if (in_concept && in_mask) ++inter[c];
                    if (in_concept || in_mask) ++uni[c];
                }
            }
        }

        UnitDissection ur;
        ur.unit = u;
        ur.threshold = a_k;
        for (size_t c = 0; c < report.concepts.size(); ++c) {
            const double iou =
                uni[c] > 0 ? static_cast<double>(inter[c]) / static_cast<double>(uni[c]) : 0.0;
            if (ur.best_concept < 0 || iou > ur.best_iou) {
                ur.best_iou = iou;
                ur.best_concept = static_cast<int>(c);
            }
        }
        ur.labeled = ur.best_iou > iou_threshold;
        if (ur.labeled)
            ++report.category_counts[report.concepts[static_cast<size_t>(ur.best_concept)].category];
        else
            ++report.unlabeled;
        report.units.push_back(ur);
    }
    return report;
}

DissectionReport dissect(const DbatModel& model, const std::string& layer,
                         const std::vector<SyntheticScene>& corpus, double quantile,
                         double iou_threshold) {
    if (corpus.empty()) throw ArgumentError("dissect: empty concept corpus");
    NoGradGuard ng;
    std::vector<Tensor> acts;
    for (const SyntheticScene& s : corpus) {
        CaptureRecorder rec;
        model.forward(scenes_to_tensor({s}, DType::f32), &rec);
        Tensor found;
        for (auto& [name, t] : rec.captured)
            if (name == layer) found = t;
        if (!found.defined()) {
            std::string known;
            for (auto& [name, t] : rec.captured) known += (known.empty() ? "" : ", ") + name;
            throw ArgumentError("dissect: layer \"" + layer + "\" not recorded; known layers: " +
                                known);
        }
        acts.push_back(found);
    }
    return dissect_activations(layer, acts, corpus, quantile, iou_threshold);
}

std::string DissectionReport::to_json_string(int indent) const {
    nlohmann::json j;
    j["layer"] = layer;
    j["quantile"] = quantile;
    j["iou_threshold"] = iou_threshold;
    nlohmann::json us = nlohmann::json::array();
    for (const auto& u : units) {
        nlohmann::json e = {{"unit", u.unit},
                            {"threshold", u.threshold},
                            {"best_iou", u.best_iou},
                            {"labeled", u.labeled}};
        e["best_concept"] =
            u.best_concept >= 0 ? nlohmann::json(concepts[static_cast<size_t>(u.best_concept)].name())
                                : nlohmann::json(nullptr);
        us.push_back(e);
    }
    j["units"] = us;
    j["category_counts"] = category_counts;
    j["unlabeled"] = unlabeled;
    return j.dump(indent);
}

std::string DissectionReport::to_csv() const {
    std::ostringstream os;
    os << "unit,threshold,best_iou,best_concept,labeled\n";
    for (const auto& u : units)
        os << u.unit << "," << u.threshold << "," << u.best_iou << ","
           << (u.best_concept >= 0 ? concepts[static_cast<size_t>(u.best_concept)].name() : "")
           << "," << (u.labeled ? 1 : 0) << "\n";
    return os.str();
}

void dump_activations(const DbatModel& model, const RunConfig& cfg, uint64_t probe_seed,
                      const std::filesystem::path& dir) {
    NoGradGuard ng;
    std::filesystem::create_directories(dir);
    std::vector<SyntheticScene> scenes;
    for (int j = 0; j < std::max(1, cfg.analysis.probe_batch_size); ++j)
        scenes.push_back(generate_scene(scene_seed(mix_seed(probe_seed, 0xd0b), j),
                                        cfg.data.num_classes, cfg.data.crop, 0.0,
                                        cfg.data.preset));
    CaptureRecorder rec;
    model.forward(scenes_to_tensor(scenes, DType::f32), &rec);
    for (auto& [name, t] : rec.captured) {
        nlohmann::json header = {{"layer_name", name},
                                 {"shape", t.shape()},
                                 {"dtype", "f32"},
                                 {"order", "row-major"}};
        std::ofstream os(dir / (name + ".act"), std::ios::binary | std::ios::trunc);
        if (!os) throw EvaluationError("dump_activations: cannot write into " + dir.string());
        const std::string h = header.dump();
        os << h << "\n";
        std::vector<unsigned char> buf(static_cast<size_t>(t.numel()) * 4);
        for (int64_t i = 0; i < t.numel(); ++i) {
            const float f = static_cast<float>(t.data()[static_cast<size_t>(i)]);
            uint32_t u;
            std::memcpy(&u, &f, 4);
            buf[static_cast<size_t>(i) * 4] = static_cast<unsigned char>(u);
            buf[static_cast<size_t>(i) * 4 + 1] = static_cast<unsigned char>(u >> 8);
            buf[static_cast<size_t>(i) * 4 + 2] = static_cast<unsigned char>(u >> 16);
            buf[static_cast<size_t>(i) * 4 + 3] = static_cast<unsigned char>(u >> 24);
        }
        os.write(reinterpret_cast<const char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size()));
    }
}

}  // namespace dbat
