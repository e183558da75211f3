// Acceptance suite: one criterion per function, one pass/fail line each.
// Run all: `dbat_acceptance`; a single criterion: `dbat_acceptance --criterion N`.

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "dbat/analysis.hpp"
#include "dbat/gradcheck.hpp"

using namespace dbat;
namespace fs = std::filesystem;

namespace {

struct Check {
    std::ostringstream log;
    bool ok = true;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            log << "    FAILED: " << what << "\n";
        }
    }
    void note(const std::string& what) { log << "    " << what << "\n"; }
};

fs::path work_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "dbat_acceptance" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double scale = 1.0, bool rg = false) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(-scale, scale);
    return Tensor::from_data(std::move(shape), std::move(v), DType::f64, rg);
}

Tensor projection_loss(const Tensor& out, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(static_cast<size_t>(out.numel()));
    for (double& v : w) v = rng.uniform(-1, 1);
    return ops::sum_all(ops::mul(out, Tensor::from_data(out.shape(), std::move(w), out.dtype())));
}

EncoderConfig small_encoder(int h, int w, int dim = 4) {
    EncoderConfig cfg;
    cfg.embed_dim = dim;
    cfg.heads = {1, 1, 2, 2};
    cfg.image_h = h;
    cfg.image_w = w;
    return cfg;
}

// --------------------------------------------------------------------------
// criterion 1: encoder shape law

void criterion_shape_law(Check& c) {
    Rng rng(1);
    {
        NoGradGuard ng;
        ParamFactory f(1, DType::f64);
        Encoder enc(f, small_encoder(512, 512));
        StagePyramid pyr = enc.forward(rand_tensor(rng, {1, 3, 512, 512}));
        for (int s = 0; s < 4; ++s) {
            const int expect = 512 / (4 << s);  // H / (2 * 2^i)
            c.expect(pyr.maps[static_cast<size_t>(s)].dim(2) == expect &&
                         pyr.maps[static_cast<size_t>(s)].dim(3) == expect,
                     "512 stage " + std::to_string(s + 1));
            c.expect(StagePyramid::strides[static_cast<size_t>(s)] == (4 << s), "stride table");
        }
    }
    int done = 0;
    uint64_t trial = 0;
    while (done < 10) {
        Rng trng(trial++);
        const int h = 32 * static_cast<int>(trng.uniform_int(1, 6));
        const int w = 32 * static_cast<int>(trng.uniform_int(1, 6));
        EncoderConfig cfg = small_encoder(h, w);
        try {
            cfg.validate();
        } catch (const ConfigError&) {
            continue;
        }
        NoGradGuard ng;
        ParamFactory f(trial, DType::f64);
        Encoder enc(f, cfg);
        StagePyramid pyr = enc.forward(rand_tensor(trng, {1, 3, h, w}));
        for (int s = 0; s < 4; ++s)
            c.expect(pyr.maps[static_cast<size_t>(s)].dim(2) == h / (4 << s) &&
                         pyr.maps[static_cast<size_t>(s)].dim(3) == w / (4 << s),
                     "random size " + std::to_string(h) + "x" + std::to_string(w));
        ++done;
    }
    c.note("512x512 and 10 random valid sizes");
}

// --------------------------------------------------------------------------
// criterion 2: aggregation equals the quadruple-loop oracle

void criterion_aggregate_oracle(Check& c) {
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + trial % 2, ch = 2 + trial % 3, h = 2 + trial % 2, w = 2;
        std::array<Tensor, 4> maps;
        for (auto& m : maps) m = rand_tensor(rng, {n, ch, h, w}, 2.0);
        std::vector<double> logits(static_cast<size_t>(n) * 4 * h * w);
        for (double& v : logits) v = rng.uniform(-2, 2);
        AttentionStack attn{
            ops::softmax(Tensor::from_data({n, 4, h, w}, std::move(logits), DType::f64), 1)};
        Tensor out = aggregate(maps, attn);

        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < ch; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double acc = 0, lo = 1e30, hi = -1e30;
                        for (int i = 0; i < 4; ++i) {
                            const double mv = maps[static_cast<size_t>(i)].at({ni, ci, y, x});
                            acc += attn.weights.at({ni, i, y, x}) * mv;
                            lo = std::min(lo, mv);
                            hi = std::max(hi, mv);
                        }
                        const double got = out.at({ni, ci, y, x});
                        worst = std::max(worst, std::fabs(got - acc));
                        c.expect(std::fabs(got - acc) < 1e-6, "oracle mismatch");
                        c.expect(got >= lo - 1e-6 && got <= hi + 1e-6, "convexity bound");
                    }
    }
    c.note("50 instances, max |diff| " + std::to_string(worst));
}

// --------------------------------------------------------------------------
// criterion 3: mask normalization

void criterion_mask_normalization(Check& c) {
    EncoderConfig ec = small_encoder(64, 64, 8);
    for (int trial = 0; trial < 100; ++trial) {
        ParamFactory f(static_cast<uint64_t>(trial), DType::f64);
        Dba dba(f, ec, trial % 2 ? DbaConfig{MaskPredictor::dilated_conv, Downsampler::mlp, 2}
                                 : DbaConfig{});
        Rng rng(static_cast<uint64_t>(trial) + 300);
        Tensor map4 = rand_tensor(rng, {1, ec.stage_channels(3), 2, 2}, 3.0);
        NoGradGuard ng;
        AttentionStack attn = dba.predict_masks(map4);
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                double sum = 0;
                for (int i = 0; i < 4; ++i) sum += attn.weights.at({0, i, y, x});
                c.expect(std::fabs(sum - 1.0) < 1e-6, "mask sum");
            }
    }
    c.note("100 random forward passes");
}

// --------------------------------------------------------------------------
// criterion 4: finite-difference gradient suite

void criterion_gradient_suite(Check& c) {
    const double eps = 1e-4, tol = 1e-4;

    {  // window attention block
        ParamFactory f(41, DType::f64);
        SwinBlock blk(f, "blk", 6, 2, 2, 4, 0);
        Rng rng(42);
        Tensor x = rand_tensor(rng, {1, 6, 4, 4}, 1.0, true);
        ParamList ps;
        blk.collect(ps);
        std::vector<std::pair<std::string, Tensor>> params = {{"input", x}};
        for (Parameter* p : ps) params.push_back({p->name, p->tensor});
        auto loss = [&] { return projection_loss(blk.forward(nchw_to_tokens(x), 4, 4, nullptr), 7); };
        GradCheckReport rep = grad_check(loss, params, eps, tol);
        c.expect(rep.ok(), "window attention: " + rep.summary());
        c.note("window attention " + rep.summary());
    }
    {  // patch merge
        ParamFactory f(43, DType::f64);
        PatchMergeLayer pm(f, "pm", 4);
        Rng rng(44);
        Tensor x = rand_tensor(rng, {1, 4, 4, 4}, 1.0, true);
        ParamList ps;
        pm.collect(ps);
        std::vector<std::pair<std::string, Tensor>> params = {{"input", x}};
        for (Parameter* p : ps) params.push_back({p->name, p->tensor});
        auto loss = [&] { return projection_loss(pm.forward(nchw_to_tokens(x), 4, 4), 8); };
        GradCheckReport rep = grad_check(loss, params, eps, tol);
        c.expect(rep.ok(), "patch merge: " + rep.summary());
        c.note("patch merge " + rep.summary());
    }
    {  // DBA: masks + downsample + aggregate
        EncoderConfig ec = small_encoder(32, 32, 2);
        ParamFactory f(45, DType::f64);
        Dba dba(f, ec, DbaConfig{});
        Rng rng(46);
        StagePyramid pyr;
        for (int s = 0; s < 4; ++s)
            pyr.maps[static_cast<size_t>(s)] = rand_tensor(
                rng, {1, ec.stage_channels(s), ec.stage_h(s), ec.stage_w(s)}, 1.0, true);
        ParamList ps;
        dba.collect(ps);
        std::vector<std::pair<std::string, Tensor>> params;
        for (Parameter* p : ps) params.push_back({p->name, p->tensor});
        for (int s = 0; s < 4; ++s)
            params.push_back({"map" + std::to_string(s + 1), pyr.maps[static_cast<size_t>(s)]});
        auto loss = [&] { return projection_loss(dba.forward(pyr), 9); };
        GradCheckReport rep = grad_check(loss, params, eps, tol);
        c.expect(rep.ok(), "dba: " + rep.summary());
        c.note("dba " + rep.summary());
    }
    {  // merge module
        EncoderConfig ec = small_encoder(64, 64, 4);
        MergeConfig mc;
        mc.heads = 2;
        mc.window = 2;
        ParamFactory f(47, DType::f64);
        FeatureMerge merge(f, ec, mc);
        {  // generic parameters: lift the zero-initialized output projection
            Rng wrng(470);
            for (double& v : merge.out_proj.weight.tensor.data()) v = wrng.uniform(-0.05, 0.05);
        }
        Rng rng(48);
        Tensor map4 = rand_tensor(rng, {1, 32, 2, 2}, 1.0, true);
        Tensor agg = rand_tensor(rng, {1, 32, 2, 2}, 1.0, true);
        ParamList ps;
        merge.collect(ps);
        std::vector<std::pair<std::string, Tensor>> params = {{"map4", map4}, {"agg", agg}};
        for (Parameter* p : ps) params.push_back({p->name, p->tensor});
        auto loss = [&] { return projection_loss(merge.forward(map4, agg), 10); };
        GradCheckReport rep = grad_check(loss, params, eps, tol);
        c.expect(rep.ok(), "merge: " + rep.summary());
        c.note("merge " + rep.summary());
    }
    {  // full toy model on a 1x3x32x32 input through the training loss
        ModelConfig mc;
        mc.encoder = small_encoder(32, 32, 4);
        mc.fpn_channels = 8;
        mc.num_classes = 2;
        DbatModel model(49, DType::f64, mc);
        Rng rng(50);
        Tensor img = rand_tensor(rng, {1, 3, 32, 32}, 0.5, true);
        LabelMap labels{1, 32, 32, {}};
        labels.v.resize(32 * 32);
        for (auto& v : labels.v) v = static_cast<int32_t>(rng.uniform_int(0, 1));
        std::vector<std::pair<std::string, Tensor>> params = {{"image", img}};
        for (Parameter* p : model.parameters()) params.push_back({p->name, p->tensor});
        auto loss = [&] { return ops::cross_entropy(model.forward(img).logits, labels); };
        // the full model has ~50k entries; a seeded 60-per-parameter sample
        // covers every module's gradient path within the time budget
        GradCheckReport rep = grad_check(loss, params, eps, tol, 60, 2024);
        c.expect(rep.ok(), "full model: " + rep.summary());
        c.note("full model " + rep.summary());
    }
}

// --------------------------------------------------------------------------
// criterion 5: CKA / HSIC1

double hsic1_loop_oracle(const std::vector<double>& k, const std::vector<double>& l, int m) {
    std::vector<double> kt(k), lt(l);
    for (int i = 0; i < m; ++i) {
        kt[static_cast<size_t>(i) * m + i] = 0.0;
        lt[static_cast<size_t>(i) * m + i] = 0.0;
    }
    double trace = 0, sk = 0, sl = 0, cross = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            trace += kt[static_cast<size_t>(i) * m + j] * lt[static_cast<size_t>(j) * m + i];
    for (int i = 0; i < m * m; ++i) {
        sk += kt[static_cast<size_t>(i)];
        sl += lt[static_cast<size_t>(i)];
    }
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            double v = 0;
            for (int q = 0; q < m; ++q)
                v += kt[static_cast<size_t>(i) * m + q] * lt[static_cast<size_t>(q) * m + j];
            cross += v;
        }
    const double md = m;
    return (trace + sk * sl / ((md - 1) * (md - 2)) - 2.0 / (md - 2) * cross) / (md * (md - 3));
}

void criterion_cka(Check& c) {
    Rng rng(5);
    ActivationMatrix x;
    x.layer_name = "x";
    x.m = 24;
    x.p = 7;
    x.x.resize(static_cast<size_t>(x.m) * x.p);
    for (double& v : x.x) v = rng.uniform(-1, 1);
    c.expect(std::fabs(cka(x, x) - 1.0) < 1e-9, "cka(X,X) = 1");

    ActivationMatrix y = x;
    y.layer_name = "y";
    for (double& v : y.x) v = rng.uniform(-1, 1);
    ActivationMatrix xs = x;
    for (double& v : xs.x) v *= 3.7;
    c.expect(std::fabs(cka(xs, y) - cka(x, y)) < 1e-9, "isotropic scaling invariance");

    bool threw = false;
    try {
        std::vector<double> k(9, 1.0);
        hsic1(k, k, 3);
    } catch (const ArgumentError&) {
        threw = true;
    }
    c.expect(threw, "hsic1 rejects m < 4");

    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int m = static_cast<int>(rng.uniform_int(4, 32));
        const int p = static_cast<int>(rng.uniform_int(1, 6));
        std::vector<double> feat(static_cast<size_t>(m) * p);
        std::vector<double> k(static_cast<size_t>(m) * m), l(static_cast<size_t>(m) * m);
        auto fill_gram = [&](std::vector<double>& g) {
            for (double& v : feat) v = rng.uniform(-1, 1);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    double acc = 0;
                    for (int q = 0; q < p; ++q)
                        acc += feat[static_cast<size_t>(i) * p + q] * feat[static_cast<size_t>(j) * p + q];
                    g[static_cast<size_t>(i) * m + j] = acc;
                }
        };
        fill_gram(k);
        fill_gram(l);
        const double diff = std::fabs(hsic1(k, l, m) - hsic1_loop_oracle(k, l, m));
        worst = std::max(worst, diff);
        c.expect(diff < 1e-9, "loop oracle trial " + std::to_string(trial));
    }
    c.note("loop oracle over 100 instances, worst |diff| " + std::to_string(worst));

    std::vector<double> ones(16, 1.0);
    c.expect(hsic1(ones, ones, 4) == 0.0, "m=4 all-ones hand case evaluates to 0");
}

// --------------------------------------------------------------------------
// criterion 6: dissection

void criterion_dissection(Check& c) {
    std::vector<SyntheticScene> corpus;
    for (int i = 0; i < 3; ++i)
        corpus.push_back(generate_scene(static_cast<uint64_t>(i) + 600, 4, 16, 0.0,
                                        TexturePreset::textured));
    const int crop = 16;
    const int target = corpus[0].texture_id[5];

    // indicator unit: thresholded mask equals the concept mask exactly
    std::vector<Tensor> acts;
    int64_t active = 0, total = 0;
    double bump = 0;
    for (const SyntheticScene& s : corpus) {
        std::vector<double> plane(static_cast<size_t>(crop) * crop);
        for (int p = 0; p < crop * crop; ++p) {
            const bool on = s.texture_id[static_cast<size_t>(p)] == target;
            bump += 1e-7;
            plane[static_cast<size_t>(p)] = on ? 1.0 + bump : -1.0 - bump;
            if (on) ++active;
            ++total;
        }
        acts.push_back(Tensor::from_data({1, crop, crop}, std::move(plane), DType::f64));
    }
    const double q = static_cast<double>(active) / static_cast<double>(total);
    DissectionReport ind = dissect_activations("probe", acts, corpus, q, 0.04);
    c.expect(std::fabs(ind.units[0].best_iou - 1.0) < 1e-12, "indicator IoU 1.0");
    c.expect(ind.units[0].labeled, "indicator labeled");
    c.expect(ind.concepts[static_cast<size_t>(ind.units[0].best_concept)].category == "texture" &&
                 ind.concepts[static_cast<size_t>(ind.units[0].best_concept)].id == target,
             "indicator labeled with the right concept");

    // constant unit stays unlabeled
    std::vector<Tensor> flat(corpus.size(), Tensor::full({1, crop, crop}, 0.3, DType::f64));
    DissectionReport cons = dissect_activations("probe", flat, corpus, 0.005, 0.04);
    c.expect(!cons.units[0].labeled, "constant unit unlabeled");

    // counting oracle + quantile property on random activations
    Rng rng(61);
    std::vector<Tensor> rand_acts;
    int64_t n_vals = 0;
    for (size_t i = 0; i < corpus.size(); ++i) {
        std::vector<double> plane(static_cast<size_t>(crop) * crop);
        for (double& v : plane) v = rng.normal();
        n_vals += static_cast<int64_t>(plane.size());
        rand_acts.push_back(Tensor::from_data({1, crop, crop}, std::move(plane), DType::f64));
    }
    const double rq = 0.12;
    DissectionReport rr = dissect_activations("probe", rand_acts, corpus, rq, 0.04);

    int64_t above = 0;
    for (const Tensor& t : rand_acts)
        for (double v : t.data())
            if (v > rr.units[0].threshold) ++above;
    c.expect(std::fabs(static_cast<double>(above) / static_cast<double>(n_vals) - rq) <=
                 1.0 / static_cast<double>(n_vals) + 1e-12,
             "threshold quantile property");

    double best = -1;
    for (const ConceptRef& ref : rr.concepts) {
        int64_t inter = 0, uni = 0;
        for (size_t img = 0; img < corpus.size(); ++img) {
            const std::vector<int32_t>& field = ref.category == "texture"
                                                    ? corpus[img].texture_id
                                                : ref.category == "color" ? corpus[img].color_id
                                                                          : corpus[img].shape_id;
            for (int p = 0; p < crop * crop; ++p) {
                const bool in_mask = rand_acts[img].data()[static_cast<size_t>(p)] > rr.units[0].threshold;
                const bool in_concept = field[static_cast<size_t>(p)] == ref.id;
                if (in_mask && in_concept) ++inter;
                if (in_mask || in_concept) ++uni;
            }
        }
        best = std::max(best, uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0);
    }
    c.expect(std::fabs(rr.units[0].best_iou - best) < 1e-9, "IoU counting oracle");
}

// --------------------------------------------------------------------------
// criterion 7: learning-rate schedule

void criterion_schedule(Check& c) {
    TrainConfig cfg;
    cfg.lr_peak = 6e-5;
    cfg.warmup_steps = 1500;
    cfg.total_steps = 3000;
    cfg.poly_power = 1.0;
    c.expect(lr_at(0, cfg) == 0.0, "lr(0) = 0");
    c.expect(std::fabs(lr_at(1500, cfg) - 6e-5) < 1e-20, "lr(1500) = 6e-5");
    c.expect(std::fabs(lr_at(1500, cfg) - cfg.lr_peak) < 1e-12, "warmup boundary continuity");
    c.expect(lr_at(3000, cfg) == 0.0, "endpoint 0 at poly_power 1");
}

// --------------------------------------------------------------------------
// criterion 8: metrics hand case

void criterion_metrics(Check& c) {
    LabelMap gt{1, 2, 2, {0, 0, 1, 1}};
    LabelMap pred{1, 2, 2, {0, 1, 1, 1}};
    MetricsReport r = compute_metrics(pred, gt, 2);
    c.expect(std::fabs(r.pixel_acc - 0.75) < 1e-9, "pixel_acc 0.75");
    c.expect(std::fabs(r.mean_acc - 0.75) < 1e-9, "mean_acc 0.75");
    c.expect(std::fabs(r.miou - 7.0 / 12.0) < 1e-9, "miou 7/12");

    // ignored pixels are excluded exactly: metrics match the kept submap
    LabelMap gt_ig{1, 2, 4, {0, kIgnoreLabel, 0, kIgnoreLabel, 1, kIgnoreLabel, 1, kIgnoreLabel}};
    LabelMap pr_ig{1, 2, 4, {0, 1, 1, 0, 1, 0, 1, 1}};
    MetricsReport a = compute_metrics(pr_ig, gt_ig, 2);
    MetricsReport b = compute_metrics(pred, gt, 2);
    c.expect(a.pixel_acc == b.pixel_acc && a.mean_acc == b.mean_acc && a.miou == b.miou &&
                 a.confusion == b.confusion,
             "IGNORE exclusion is exact");
}

// --------------------------------------------------------------------------
// criterion 9: determinism and persistence

RunConfig small_run(uint64_t seed, int steps) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.encoder.embed_dim = 4;
    cfg.encoder.heads = {1, 1, 2, 2};
    cfg.fpn_channels = 8;
    cfg.data.crop = 32;
    cfg.data.num_classes = 3;
    cfg.train.total_steps = steps;
    cfg.train.warmup_steps = 2;
    cfg.train.batch_size = 2;
    cfg.train.lr_peak = 1e-3;
    return cfg;
}

void criterion_determinism(Check& c) {
    RunConfig cfg = small_run(91, 6);
    auto d1 = work_dir("det1"), d2 = work_dir("det2");
    TrainResult r1 = train_loop(cfg, d1);
    TrainResult r2 = train_loop(cfg, d2);
    c.expect(read_file(d1 / "steps.jsonl") == read_file(d2 / "steps.jsonl"),
             "same-seed logs bit-identical");
    c.expect(read_file(r1.final_checkpoint) == read_file(r2.final_checkpoint),
             "same-seed checkpoints bit-identical");

    DbatModel model(cfg.seed, DType::f32, cfg.model_config());
    AdamW opt(model.parameters(), cfg.train);
    load_checkpoint(model, &opt, r1.final_checkpoint);
    save_checkpoint(model, cfg, 6, &opt, d1 / "resaved.dbat");
    c.expect(read_file(r1.final_checkpoint) == read_file(d1 / "resaved.dbat"),
             "save-load-save byte-identical");

    RunConfig rcfg = small_run(92, 6);
    rcfg.train.checkpoint_every = 3;
    auto df = work_dir("resume_full"), dp = work_dir("resume_part");
    TrainResult full = train_loop(rcfg, df);
    TrainResult part = train_loop(rcfg, dp, df / "checkpoint_3.dbat");
    c.expect(read_file(full.final_checkpoint) == read_file(part.final_checkpoint),
             "resume equivalence bit-exact");
}

// --------------------------------------------------------------------------
// criterion 10: end-to-end smoke + ablation direction

// frozen smoke/directional calibration: the directional comparison runs at
// K=8 where texture families repeat across two frequency ranks, so class
// identity hinges on the resolution mix the aggregation provides
constexpr int kSmokeSteps = 500;
constexpr double kSmokeLrPeak = 2e-3;
constexpr int kDirectionalSteps = 500;
constexpr int kDirectionalClasses = 8;
constexpr double kDirectionalLrPeak = 1.5e-3;
constexpr int kDirectionalWarmup = 60;
constexpr uint64_t kDirectionalEvalSeed = 77;
constexpr int kDirectionalEvalScenes = 24;

RunConfig smoke_config(uint64_t seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.heads = {2, 4, 4, 8};
    cfg.fpn_channels = 32;
    cfg.data.crop = 64;
    cfg.data.num_classes = 4;
    cfg.data.preset = TexturePreset::flat;
    cfg.train.total_steps = kSmokeSteps;
    cfg.train.warmup_steps = 100;
    cfg.train.batch_size = 4;
    cfg.train.lr_peak = kSmokeLrPeak;
    return cfg;
}

void criterion_smoke(Check& c) {
    // (a) toy run on the flat-color preset reaches 0.90 training accuracy
    RunConfig cfg = smoke_config(7);
    TrainResult smoke = train_loop(cfg, work_dir("smoke"));
    c.note("smoke train pixel_acc " + std::to_string(smoke.final_train_pixel_acc));
    c.expect(smoke.final_train_pixel_acc >= 0.90, "flat-preset smoke >= 0.90");

    // (b) the backbone-only ablation trains without error
    RunConfig bb = small_run(71, 40);
    bb.ablation.disable_dba = true;
    bb.ablation.disable_merge = true;
    bb.data.preset = TexturePreset::textured;
    TrainResult bbr = train_loop(bb, work_dir("backbone_only"));
    c.expect(std::isfinite(bbr.final_loss), "backbone-only trains");

    // (c) the ablation grid emits its delta table
    const char* cli = std::getenv("DBAT_CLI");
    if (cli && *cli) {
        auto adir = work_dir("ablate");
        RunConfig acfg = small_run(72, 30);
        acfg.data.preset = TexturePreset::textured;
        {
            std::ofstream os(adir / "config.json");
            os << run_config_to_json(acfg).dump(2);
        }
        const std::string cmd = std::string(cli) + " ablate --config " +
                                (adir / "config.json").string() + " --out " +
                                (adir / "grid").string() + " > /dev/null 2>&1";
        c.expect(std::system(cmd.c_str()) == 0, "ablate command succeeds");
        c.expect(fs::exists(adir / "grid" / "ablation.json") &&
                     fs::exists(adir / "grid" / "ablation.csv"),
                 "ablation table emitted");
        if (fs::exists(adir / "grid" / "ablation.csv")) {
            const std::string csv = read_file(adir / "grid" / "ablation.csv");
            c.expect(csv.find("delta_pixel_acc,delta_mean_acc") != std::string::npos,
                     "delta columns present");
            c.expect(csv.find("backbone_only") != std::string::npos, "grid rows present");
        }
    } else {
        c.expect(false, "DBAT_CLI not set; cannot exercise the ablate command");
    }

    // (d) directional stand-in: full model >= backbone-only on held-out
    // scenes, averaged over 3 seeds
    auto eval_acc = [](const RunConfig& rc, const fs::path& ckpt) {
        DbatModel model(rc.seed, DType::f32, rc.model_config());
        load_checkpoint(model, nullptr, ckpt);
        NoGradGuard ng;
        LabelMap all_pred, all_gt;
        for (int i = 0; i < kDirectionalEvalScenes; ++i) {
            SyntheticScene s = generate_scene(scene_seed(kDirectionalEvalSeed, i),
                                              rc.data.num_classes, rc.data.crop, 0.0,
                                              rc.data.preset);
            LabelMap gt = scenes_to_labels({s});
            LabelMap pred =
                ops::argmax_channels(model.forward(scenes_to_tensor({s}, DType::f32)).logits);
            all_pred.n += 1;
            all_pred.h = pred.h;
            all_pred.w = pred.w;
            all_pred.v.insert(all_pred.v.end(), pred.v.begin(), pred.v.end());
            all_gt.n += 1;
            all_gt.h = gt.h;
            all_gt.w = gt.w;
            all_gt.v.insert(all_gt.v.end(), gt.v.begin(), gt.v.end());
        }
        return compute_metrics(all_pred, all_gt, rc.data.num_classes).pixel_acc;
    };

    double full_mean = 0, bb_mean = 0;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        RunConfig dir_cfg = smoke_config(seed);
        dir_cfg.data.preset = TexturePreset::textured;
        dir_cfg.data.num_classes = kDirectionalClasses;
        dir_cfg.train.total_steps = kDirectionalSteps;
        dir_cfg.train.warmup_steps = kDirectionalWarmup;
        dir_cfg.train.lr_peak = kDirectionalLrPeak;
        TrainResult fr = train_loop(dir_cfg, work_dir("dir_full_" + std::to_string(seed)));
        const double fa = eval_acc(dir_cfg, fr.final_checkpoint);

        RunConfig bb_cfg = dir_cfg;
        bb_cfg.ablation.disable_dba = true;
        bb_cfg.ablation.disable_merge = true;
        TrainResult br = train_loop(bb_cfg, work_dir("dir_bb_" + std::to_string(seed)));
        const double ba = eval_acc(bb_cfg, br.final_checkpoint);

        full_mean += fa / 3.0;
        bb_mean += ba / 3.0;
        c.note("seed " + std::to_string(seed) + ": full " + std::to_string(fa) +
               " vs backbone " + std::to_string(ba));
    }
    c.note("3-seed mean: full " + std::to_string(full_mean) + " vs backbone " +
           std::to_string(bb_mean));
    c.expect(full_mean >= bb_mean, "full model >= backbone-only (3-seed average)");
}

// --------------------------------------------------------------------------
// criterion 11: attention statistics

void criterion_attention_stats(Check& c) {
    // w = 1 everywhere: every equivalent side is zero
    RunConfig w1 = small_run(111, 2);
    w1.encoder.window = 1;
    w1.merge.window = 1;
    DbatModel m1(w1.seed, DType::f32, w1.model_config());
    AttentionStatsReport r1 = attention_stats(m1, w1, 42);
    for (const AttentionHeadStat& h : r1.heads)
        c.expect(h.mean_distance == 0.0 && h.equivalent_side == 0.0, "w=1 side is 0");

    // uniform attention over a 4x4 window at stride 4 matches brute force
    RunConfig cfg = small_run(112, 2);
    DbatModel model(cfg.seed, DType::f32, cfg.model_config());
    for (Parameter* p : model.parameters())
        if (p->name.find("stage1.block0.attn") != std::string::npos)
            std::fill(p->tensor.data().begin(), p->tensor.data().end(), 0.0);
    AttentionStatsReport r = attention_stats(model, cfg, 43);
    double expect = 0;
    for (int q = 0; q < 16; ++q)
        for (int k = 0; k < 16; ++k) {
            const double dy = q / 4 - k / 4, dx = q % 4 - k % 4;
            expect += std::sqrt(dy * dy + dx * dx);
        }
    expect = expect / 256.0 * 4.0;
    bool found = false;
    for (const AttentionHeadStat& h : r.heads)
        if (h.layer.find("stage1.block0") != std::string::npos) {
            found = true;
            c.expect(std::fabs(h.mean_distance - expect) < 1e-6,
                     "uniform window matches pairwise oracle");
        }
    c.expect(found, "stage-1 head recorded");

    const double sum = r.mask_means[0] + r.mask_means[1] + r.mask_means[2] + r.mask_means[3];
    c.expect(std::fabs(sum - 1.0) < 1e-6, "mask means sum to 1");
}

struct Criterion {
    int id;
    const char* name;
    std::function<void(Check&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

    const std::vector<Criterion> criteria = {
        {1, "encoder shape law", criterion_shape_law},
        {2, "aggregation oracle equivalence", criterion_aggregate_oracle},
        {3, "mask normalization", criterion_mask_normalization},
        {4, "finite-difference gradient suite", criterion_gradient_suite},
        {5, "CKA / HSIC1", criterion_cka},
        {6, "network dissection", criterion_dissection},
        {7, "learning-rate schedule", criterion_schedule},
        {8, "segmentation metrics", criterion_metrics},
        {9, "determinism and persistence", criterion_determinism},
        {10, "end-to-end smoke and ablation direction", criterion_smoke},
        {11, "attention statistics", criterion_attention_stats},
    };

    int failures = 0;
    for (const Criterion& cr : criteria) {
        if (only != 0 && cr.id != only) continue;
        Check check;
        const auto start = std::chrono::steady_clock::now();
        try {
            cr.run(check);
        } catch (const std::exception& e) {
            check.ok = false;
            check.log << "    EXCEPTION: " << e.what() << "\n";
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %2d: %s (%.1f s)\n", check.ok ? "PASS" : "FAIL", cr.id,
                    cr.name, secs);
        if (!check.ok || std::getenv("DBAT_ACCEPTANCE_VERBOSE"))
            std::fputs(check.log.str().c_str(), stdout);
        if (!check.ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
