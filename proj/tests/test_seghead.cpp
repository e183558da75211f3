#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbat/gradcheck.hpp"
#include "dbat/model.hpp"
#include "dbat/rng.hpp"

#include "json.hpp"

using namespace dbat;

namespace {

Tensor rand_nchw(Rng& rng, std::vector<int> shape, bool rg = false) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(-1, 1);
    return Tensor::from_data(std::move(shape), std::move(v), DType::f64, rg);
}

EncoderConfig enc_cfg(int crop, int dim) {
    EncoderConfig cfg;
    cfg.embed_dim = dim;
    cfg.heads = {1, 1, 2, 2};
    cfg.image_h = crop;
    cfg.image_w = crop;
    return cfg;
}

std::array<Tensor, 4> rand_maps(Rng& rng, const EncoderConfig& ec, int n, bool rg = false) {
    std::array<Tensor, 4> maps;
    for (int s = 0; s < 4; ++s)
        maps[static_cast<size_t>(s)] =
            rand_nchw(rng, {n, ec.stage_channels(s), ec.stage_h(s), ec.stage_w(s)}, rg);
    return maps;
}

}  // namespace

TEST_CASE("decode: shape contract and zero collapse") {
    EncoderConfig ec = enc_cfg(32, 4);
    ParamFactory f(1, DType::f64);
    FpnHead head(f, ec, 8, 5);
    Rng rng(2);

    Tensor logits = head.forward(rand_maps(rng, ec, 2), 32, 32);
    CHECK(logits.shape() == std::vector<int>{2, 5, 32, 32});

    // all-zero features with zero parameters give zero logits -> uniform
    // class posterior
    ParamList params;
    head.collect(params);
    for (Parameter* p : params) std::fill(p->tensor.data().begin(), p->tensor.data().end(), 0.0);
    std::array<Tensor, 4> zeros;
    for (int s = 0; s < 4; ++s)
        zeros[static_cast<size_t>(s)] =
            Tensor::zeros({1, ec.stage_channels(s), ec.stage_h(s), ec.stage_w(s)}, DType::f64);
    Tensor zl = head.forward(zeros, 32, 32);
    for (double v : zl.data()) CHECK(v == 0.0);
    Tensor posterior = ops::softmax(zl, 1);
    for (double v : posterior.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("gradient reaches every lateral projection") {
    EncoderConfig ec = enc_cfg(32, 2);
    ParamFactory f(3, DType::f64);
    FpnHead head(f, ec, 4, 2);
    Rng rng(4);
    std::array<Tensor, 4> maps = rand_maps(rng, ec, 1);

    std::vector<std::pair<std::string, Tensor>> check;
    for (int i = 0; i < 4; ++i) {
        check.push_back({head.lateral[static_cast<size_t>(i)].weight.name,
                         head.lateral[static_cast<size_t>(i)].weight.tensor});
        check.push_back({head.lateral[static_cast<size_t>(i)].bias.name,
                         head.lateral[static_cast<size_t>(i)].bias.tensor});
    }
    auto loss = [&] {
        Rng prng(9);
        Tensor out = head.forward(maps, 32, 32);
        std::vector<double> w(static_cast<size_t>(out.numel()));
        for (double& v : w) v = prng.uniform(-1, 1);
        return ops::sum_all(ops::mul(out, Tensor::from_data(out.shape(), std::move(w), DType::f64)));
    };
    GradCheckReport rep = grad_check(loss, check, 1e-4, 1e-4);
    INFO(rep.summary());
    CHECK(rep.ok());
    loss().backward();
    for (int i = 0; i < 4; ++i) {
        double norm = 0;
        for (double v : head.lateral[static_cast<size_t>(i)].weight.tensor.grad()) norm += v * v;
        CHECK(norm > 0.0);
    }
}

TEST_CASE("metrics: hand-built 2x2 confusion case") {
    LabelMap gt{1, 2, 2, {0, 0, 1, 1}};
    LabelMap pred{1, 2, 2, {0, 1, 1, 1}};
    MetricsReport r = compute_metrics(pred, gt, 2);
    CHECK(std::fabs(r.pixel_acc - 0.75) < 1e-9);
    CHECK(std::fabs(r.mean_acc - 0.75) < 1e-9);
    CHECK(std::fabs(r.per_class_iou[0] - 0.5) < 1e-9);
    CHECK(std::fabs(r.per_class_iou[1] - 2.0 / 3.0) < 1e-9);
    CHECK(std::fabs(r.miou - 7.0 / 12.0) < 1e-9);
    CHECK(r.confusion == std::vector<int64_t>{1, 1, 0, 2});
}

TEST_CASE("metrics: perfect prediction and ignore masking") {
    LabelMap gt{1, 2, 2, {0, 1, 2, 1}};
    MetricsReport perfect = compute_metrics(gt, gt, 3);
    CHECK(perfect.pixel_acc == 1.0);
    CHECK(perfect.mean_acc == 1.0);
    CHECK(perfect.miou == 1.0);

    // everything ignored except one correct pixel
    LabelMap sparse = gt;
    sparse.v = {kIgnoreLabel, kIgnoreLabel, 2, kIgnoreLabel};
    LabelMap pred{1, 2, 2, {1, 0, 2, 0}};
    MetricsReport r = compute_metrics(pred, sparse, 3);
    CHECK(r.pixel_acc == 1.0);

    LabelMap none = gt;
    none.v = {kIgnoreLabel, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel};
    CHECK_THROWS_AS(compute_metrics(pred, none, 3), DegenerateError);

    // classes absent from ground truth stay out of the averages
    MetricsReport partial = compute_metrics(pred, sparse, 5);
    CHECK(std::isnan(partial.per_class_acc[4]));
    CHECK(partial.mean_acc == 1.0);
}

TEST_CASE("metrics are pixel-permutation invariant and match brute force") {
    Rng rng(5);
    const int n = 2, h = 6, w = 5, k = 4;
    LabelMap gt{n, h, w, {}}, pred{n, h, w, {}};
    for (int i = 0; i < n * h * w; ++i) {
        gt.v.push_back(rng.uniform() < 0.15 ? kIgnoreLabel
                                            : static_cast<int32_t>(rng.uniform_int(0, k - 1)));
        pred.v.push_back(static_cast<int32_t>(rng.uniform_int(0, k - 1)));
    }
    MetricsReport r = compute_metrics(pred, gt, k);

    // brute-force pixel accuracy
    int64_t correct = 0, total = 0;
    for (int i = 0; i < n * h * w; ++i) {
        if (gt.v[static_cast<size_t>(i)] == kIgnoreLabel) continue;
        ++total;
        if (gt.v[static_cast<size_t>(i)] == pred.v[static_cast<size_t>(i)]) ++correct;
    }
    CHECK(r.pixel_acc == doctest::Approx(static_cast<double>(correct) / total).epsilon(1e-12));

    // permute pixels jointly
    std::vector<size_t> perm(static_cast<size_t>(n) * h * w);
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    LabelMap gt2 = gt, pred2 = pred;
    for (size_t i = 0; i < perm.size(); ++i) {
        gt2.v[i] = gt.v[perm[i]];
        pred2.v[i] = pred.v[perm[i]];
    }
    MetricsReport r2 = compute_metrics(pred2, gt2, k);
    CHECK(r2.pixel_acc == r.pixel_acc);
    CHECK(r2.mean_acc == r.mean_acc);
    CHECK(r2.miou == r.miou);
    CHECK(r2.confusion == r.confusion);
}

TEST_CASE("metrics serialize with the documented field names") {
    LabelMap gt{1, 1, 2, {0, 1}};
    MetricsReport r = compute_metrics(gt, gt, 2);
    nlohmann::json j = nlohmann::json::parse(r.to_json_string());
    for (const char* key :
         {"pixel_acc", "mean_acc", "miou", "per_class_acc", "per_class_iou", "confusion"})
        CHECK(j.contains(key));
    CHECK(j["pixel_acc"].get<double>() == 1.0);
}

TEST_CASE("one small gradient step decreases the loss (5 seeds)") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        ModelConfig mc;
        mc.encoder = enc_cfg(32, 2);
        mc.fpn_channels = 4;
        mc.num_classes = 3;
        DbatModel model(seed, DType::f64, mc);
        Rng rng(seed + 70);
        std::vector<double> img(static_cast<size_t>(3) * 32 * 32);
        for (double& v : img) v = rng.uniform(0, 1);
        Tensor images = Tensor::from_data({1, 3, 32, 32}, std::move(img), DType::f64);
        LabelMap labels{1, 32, 32, {}};
        labels.v.resize(static_cast<size_t>(32) * 32);
        for (auto& v : labels.v) v = static_cast<int32_t>(rng.uniform_int(0, 2));

        for (Parameter* p : model.parameters()) p->tensor.zero_grad();
        Tensor loss = ops::cross_entropy(model.forward(images).logits, labels);
        const double before = loss.item();
        loss.backward();
        for (Parameter* p : model.parameters()) {
            const auto& g = p->tensor.grad();
            if (g.empty()) continue;
            auto& x = p->tensor.data();
            for (size_t i = 0; i < x.size(); ++i) x[i] -= 1e-3 * g[i];
        }
        const double after = ops::cross_entropy(model.forward(images).logits, labels).item();
        CHECK(after < before);
    }
}
