// dbat: train / eval / ablate / analyze / dump-activations entry point.
// Errors leave on stderr as one JSON line; exit codes: 2 usage, 3 config,
// 4 checkpoint, 5 runtime.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "dbat/analysis.hpp"

namespace fs = std::filesystem;
using namespace dbat;

namespace {

void fail(const std::string& code, const std::string& message, int exit_code) {
    nlohmann::json err = {{"error", code}, {"message", message}};
    std::cerr << err.dump() << "\n";
    std::exit(exit_code);
}

RunConfig config_from_file(const std::string& path, std::optional<uint64_t> seed,
                           std::optional<double> poly_power) {
    RunConfig cfg = load_run_config(path);
    if (seed) cfg.seed = *seed;
    if (poly_power) cfg.train.poly_power = *poly_power;
    return cfg;
}

struct LoadedModel {
    RunConfig cfg;
    std::unique_ptr<DbatModel> model;
};

LoadedModel model_from_checkpoint(const std::string& path) {
    if (!fs::exists(path)) throw CheckpointError("checkpoint: no such file " + path);
    CheckpointInfo info = peek_checkpoint(path);
    LoadedModel lm;
    lm.cfg = info.config;
    lm.model = std::make_unique<DbatModel>(lm.cfg.seed, DType::f32, lm.cfg.model_config());
    load_checkpoint(*lm.model, nullptr, path);
    return lm;
}

MetricsReport evaluate(const DbatModel& model, const RunConfig& cfg, uint64_t data_seed,
                       int scenes) {
    NoGradGuard ng;
    LabelMap all_pred, all_gt;
    const int b = std::max(1, cfg.train.batch_size);
    for (int first = 0; first < scenes; first += b) {
        const int take = std::min(b, scenes - first);
        std::vector<SyntheticScene> batch;
        for (int j = 0; j < take; ++j)
            batch.push_back(generate_scene(scene_seed(data_seed, first + j),
                                           cfg.data.num_classes, cfg.data.crop,
                                           cfg.data.ignore_fraction, cfg.data.preset));
        LabelMap gt = scenes_to_labels(batch);
        LabelMap pred = ops::argmax_channels(model.forward(scenes_to_tensor(batch, DType::f32)).logits);
        all_pred.n += pred.n;
        all_pred.h = pred.h;
        all_pred.w = pred.w;
        all_pred.v.insert(all_pred.v.end(), pred.v.begin(), pred.v.end());
        all_gt.n += gt.n;
        all_gt.h = gt.h;
        all_gt.w = gt.w;
        all_gt.v.insert(all_gt.v.end(), gt.v.begin(), gt.v.end());
    }
    return compute_metrics(all_pred, all_gt, cfg.data.num_classes);
}

void print_metrics_summary(const MetricsReport& m, const std::string& metrics_preset) {
    std::cout << "pixel_acc=" << m.pixel_acc << " mean_acc=" << m.mean_acc;
    if (metrics_preset != "lmd") std::cout << " miou=" << m.miou;
    std::cout << "\n";
}

void write_text(const fs::path& file, const std::string& content) {
    std::ofstream os(file, std::ios::trunc);
    if (!os) throw EvaluationError("cannot write " + file.string());
    os << content;
    if (content.empty() || content.back() != '\n') os << "\n";
}

struct AblationRow {
    std::string variant;
    double pixel_acc = 0, mean_acc = 0, d_pixel = 0, d_mean = 0;
};

int run_ablate(const RunConfig& base_cfg, const fs::path& out_dir) {
    struct Variant {
        const char* name;
        void (*mutate)(RunConfig&);
    };
    // single-switch variants mirroring the component-removal and
    // implementation-choice tables
    const Variant variants[] = {
        {"no_merge", [](RunConfig& c) { c.ablation.disable_merge = true; }},
        {"backbone_only",
         [](RunConfig& c) {
             c.ablation.disable_merge = true;
             c.ablation.disable_dba = true;
         }},
        {"dilated_predictor",
         [](RunConfig& c) { c.dba.mask_predictor = MaskPredictor::dilated_conv; }},
        {"avgpool_downsample",
         [](RunConfig& c) { c.dba.downsampler = Downsampler::average_pool; }},
        {"plain_residual", [](RunConfig& c) { c.merge.mode = MergeMode::plain_residual; }},
    };

    fs::create_directories(out_dir);
    const uint64_t eval_seed = mix_seed(base_cfg.seed, fnv1a("ablate_eval"));
    const int eval_scenes = 16;

    std::cout << "[ablate] training baseline (full model)\n";
    train_loop(base_cfg, out_dir / "full");
    LoadedModel base = model_from_checkpoint((out_dir / "full" / "checkpoint_final.dbat").string());
    MetricsReport base_m = evaluate(*base.model, base.cfg, eval_seed, eval_scenes);

    std::vector<AblationRow> rows;
    for (const Variant& v : variants) {
        RunConfig cfg = base_cfg;
        v.mutate(cfg);
        std::cout << "[ablate] training variant " << v.name << "\n";
        train_loop(cfg, out_dir / v.name);
        LoadedModel lm =
            model_from_checkpoint((out_dir / v.name / "checkpoint_final.dbat").string());
        MetricsReport m = evaluate(*lm.model, lm.cfg, eval_seed, eval_scenes);
        AblationRow row;
        row.variant = v.name;
        row.pixel_acc = m.pixel_acc;
        row.mean_acc = m.mean_acc;
        row.d_pixel = (m.pixel_acc - base_m.pixel_acc) * 100.0;  // percentage points
        row.d_mean = (m.mean_acc - base_m.mean_acc) * 100.0;
        rows.push_back(row);
    }

    nlohmann::json j;
    j["baseline"] = {{"pixel_acc", base_m.pixel_acc}, {"mean_acc", base_m.mean_acc}};
    nlohmann::json jr = nlohmann::json::array();
    std::ostringstream csv;
    csv << "variant,pixel_acc,mean_acc,delta_pixel_acc,delta_mean_acc\n";
    std::cout << "variant              | Δ Pixel Acc | Δ Mean Acc\n";
    std::cout << "---------------------+--------------+------------\n";
    for (const AblationRow& r : rows) {
        jr.push_back({{"variant", r.variant},
                      {"pixel_acc", r.pixel_acc},
                      {"mean_acc", r.mean_acc},
                      {"delta_pixel_acc", r.d_pixel},
                      {"delta_mean_acc", r.d_mean}});
        csv << r.variant << "," << r.pixel_acc << "," << r.mean_acc << "," << r.d_pixel << ","
            << r.d_mean << "\n";
        std::printf("%-20s | %+12.2f | %+10.2f\n", r.variant.c_str(), r.d_pixel, r.d_mean);
    }
    j["rows"] = jr;
    write_text(out_dir / "ablation.json", j.dump(2));
    write_text(out_dir / "ablation.csv", csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dbat: cross-resolution attention segmentation testbed"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/run", checkpoint_path;
    std::optional<uint64_t> seed_override;
    std::optional<double> poly_power;

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", config_path, "run config JSON")->required();
    train_cmd->add_option("--seed", seed_override, "override config seed");
    train_cmd->add_option("--out", out_dir, "run directory");
    train_cmd->add_option("--poly-power", poly_power, "override polynomial decay exponent");
    std::string resume_path;
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on generated scenes");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    uint64_t data_seed = 999;
    int eval_scenes = 16;
    std::string metrics_out;
    eval_cmd->add_option("--data-seed", data_seed, "scene stream seed");
    eval_cmd->add_option("--scenes", eval_scenes, "number of scenes");
    eval_cmd->add_option("--out", metrics_out, "metrics JSON output file");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train the ablation grid and emit deltas");
    ablate_cmd->add_option("--config", config_path, "run config JSON")->required();
    ablate_cmd->add_option("--seed", seed_override, "override config seed");
    ablate_cmd->add_option("--out", out_dir, "output directory")->required();
    ablate_cmd->add_option("--poly-power", poly_power, "override polynomial decay exponent");

    // analyze
    auto* analyze_cmd = app.add_subcommand("analyze", "interpretability tooling");
    analyze_cmd->require_subcommand(1);
    auto* cka_cmd = analyze_cmd->add_subcommand("cka", "layer-similarity matrix of two runs");
    std::string ckpt_a, ckpt_b;
    uint64_t probe_seed = 4242;
    cka_cmd->add_option("--a", ckpt_a, "checkpoint A")->required();
    cka_cmd->add_option("--b", ckpt_b, "checkpoint B")->required();
    cka_cmd->add_option("--out", out_dir, "output directory")->required();
    cka_cmd->add_option("--probe-seed", probe_seed, "probe scene seed");

    auto* attn_cmd = analyze_cmd->add_subcommand("attn", "attention statistics");
    attn_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    attn_cmd->add_option("--out", out_dir, "output directory")->required();
    attn_cmd->add_option("--probe-seed", probe_seed, "probe scene seed");

    auto* dissect_cmd = analyze_cmd->add_subcommand("dissect", "unit-concept alignment");
    dissect_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    dissect_cmd->add_option("--out", out_dir, "output directory")->required();
    std::string dissect_layer;
    std::optional<double> quantile, iou_threshold;
    uint64_t corpus_seed = 31337;
    std::optional<int> corpus_size;
    dissect_cmd->add_option("--layer", dissect_layer, "layer to dissect (default from config)");
    dissect_cmd->add_option("--quantile", quantile, "activation fraction above threshold");
    dissect_cmd->add_option("--iou-threshold", iou_threshold, "labeling IoU threshold");
    dissect_cmd->add_option("--corpus-seed", corpus_seed, "concept corpus seed");
    dissect_cmd->add_option("--corpus-size", corpus_size, "concept corpus size");

    // dump-activations
    auto* dump_cmd = app.add_subcommand("dump-activations", "write per-layer activation files");
    dump_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    dump_cmd->add_option("--out", out_dir, "output directory")->required();
    dump_cmd->add_option("--probe-seed", probe_seed, "probe scene seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::exit(app.exit(e));
    } catch (const CLI::ParseError& e) {
        fail("usage", e.what(), 2);
    }

    try {
        if (*train_cmd) {
            RunConfig cfg = config_from_file(config_path, seed_override, poly_power);
            std::optional<fs::path> resume;
            if (!resume_path.empty()) resume = resume_path;
            TrainResult r = train_loop(cfg, out_dir, resume);
            std::cout << "trained " << r.steps << " steps, final loss " << r.final_loss
                      << ", train pixel_acc " << r.final_train_pixel_acc << "\n";
            std::cout << "checkpoint: " << r.final_checkpoint.string() << "\n";
        } else if (*eval_cmd) {
            LoadedModel lm = model_from_checkpoint(checkpoint_path);
            MetricsReport m = evaluate(*lm.model, lm.cfg, data_seed, eval_scenes);
            if (!metrics_out.empty()) write_text(metrics_out, m.to_json_string(2));
            print_metrics_summary(m, lm.cfg.data.metrics_preset);
        } else if (*ablate_cmd) {
            RunConfig cfg = config_from_file(config_path, seed_override, poly_power);
            return run_ablate(cfg, out_dir);
        } else if (*cka_cmd) {
            LoadedModel a = model_from_checkpoint(ckpt_a);
            LoadedModel b = model_from_checkpoint(ckpt_b);
            CkaMatrixResult m = cka_matrix(*a.model, *b.model, a.cfg, probe_seed);
            fs::create_directories(out_dir);
            write_text(fs::path(out_dir) / "cka.json", m.to_json_string(2));
            write_text(fs::path(out_dir) / "cka.csv", m.to_csv());
            std::cout << "cka matrix " << m.layers_a.size() << "x" << m.layers_b.size()
                      << " written to " << out_dir << "\n";
        } else if (*attn_cmd) {
            LoadedModel lm = model_from_checkpoint(checkpoint_path);
            AttentionStatsReport r = attention_stats(*lm.model, lm.cfg, probe_seed);
            fs::create_directories(out_dir);
            write_text(fs::path(out_dir) / "attention_stats.json", r.to_json_string(2));
            write_text(fs::path(out_dir) / "attention_stats.csv", r.to_csv());
            std::cout << "mask means:";
            for (double v : r.mask_means) std::cout << " " << v;
            std::cout << "\n";
        } else if (*dissect_cmd) {
            LoadedModel lm = model_from_checkpoint(checkpoint_path);
            const std::string layer =
                dissect_layer.empty() ? lm.cfg.analysis.dissect_layer : dissect_layer;
            const double q = quantile.value_or(lm.cfg.analysis.quantile);
            const double thr = iou_threshold.value_or(lm.cfg.analysis.iou_threshold);
            const int n = corpus_size.value_or(lm.cfg.analysis.corpus_size);
            std::vector<SyntheticScene> corpus;
            for (int i = 0; i < n; ++i)
                corpus.push_back(generate_scene(scene_seed(corpus_seed, i),
                                                lm.cfg.data.num_classes, lm.cfg.data.crop, 0.0,
                                                lm.cfg.data.preset));
            DissectionReport r = dissect(*lm.model, layer, corpus, q, thr);
            fs::create_directories(out_dir);
            write_text(fs::path(out_dir) / "dissection.json", r.to_json_string(2));
            write_text(fs::path(out_dir) / "dissection.csv", r.to_csv());
            std::cout << "dissected " << r.units.size() << " units of " << layer << ": ";
            for (const auto& [cat, count] : r.category_counts)
                std::cout << cat << "=" << count << " ";
            std::cout << "unlabeled=" << r.unlabeled << "\n";
        } else if (*dump_cmd) {
            LoadedModel lm = model_from_checkpoint(checkpoint_path);
            dump_activations(*lm.model, lm.cfg, probe_seed, out_dir);
            std::cout << "activations written to " << out_dir << "\n";
        }
    } catch (const ConfigError& e) {
        fail("config", e.what(), 3);
    } catch (const CheckpointError& e) {
        fail("checkpoint", e.what(), 4);
    } catch (const std::exception& e) {
        fail("runtime", e.what(), 5);
    }
    return 0;
}
