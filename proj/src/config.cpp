#include "dbat/config.hpp"

#include <fstream>
#include <set>

namespace dbat {

namespace {

using nlohmann::json;

void expect_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
        }
    }
}

MaskPredictor parse_mask_predictor(const std::string& s) {
    if (s == "conv1x1") return MaskPredictor::conv1x1;
    if (s == "dilated_conv") return MaskPredictor::dilated_conv;
    throw ConfigError("dba.mask_predictor must be \"conv1x1\" or \"dilated_conv\", got \"" + s +
                      "\"");
}

Downsampler parse_downsampler(const std::string& s) {
    if (s == "mlp") return Downsampler::mlp;
    if (s == "average_pool") return Downsampler::average_pool;
    throw ConfigError("dba.downsampler must be \"mlp\" or \"average_pool\", got \"" + s + "\"");
}

MergeMode parse_merge_mode(const std::string& s) {
    if (s == "attention") return MergeMode::attention;
    if (s == "plain_residual") return MergeMode::plain_residual;
    throw ConfigError("merge.mode must be \"attention\" or \"plain_residual\", got \"" + s +
                      "\"");
}

TexturePreset parse_preset(const std::string& s) {
    if (s == "flat") return TexturePreset::flat;
    if (s == "textured") return TexturePreset::textured;
    throw ConfigError("data.preset must be \"flat\" or \"textured\", got \"" + s + "\"");
}

}  // namespace

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.encoder = encoder;
    m.encoder.image_h = data.crop;
    m.encoder.image_w = data.crop;
    m.dba = dba;
    m.merge = merge;
    m.fpn_channels = fpn_channels;
    m.num_classes = data.num_classes;
    m.ablation = ablation;
    return m;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg;
    expect_keys(j, "config", {"seed", "model", "data", "train", "analysis"});
    read(j, "seed", cfg.seed);

    if (j.contains("model")) {
        const json& m = j.at("model");
        expect_keys(m, "model",
                    {"embed_dim", "depths", "heads", "window", "shift_windows", "dba", "merge",
                     "fpn_channels", "ablation"});
        read(m, "embed_dim", cfg.encoder.embed_dim);
        read(m, "depths", cfg.encoder.depths);
        read(m, "heads", cfg.encoder.heads);
        read(m, "window", cfg.encoder.window);
        read(m, "shift_windows", cfg.encoder.shift_windows);
        read(m, "fpn_channels", cfg.fpn_channels);
        if (m.contains("dba")) {
            const json& d = m.at("dba");
            expect_keys(d, "model.dba", {"mask_predictor", "downsampler", "dilation"});
            std::string mp = "conv1x1", ds = "mlp";
            read(d, "mask_predictor", mp);
            read(d, "downsampler", ds);
            read(d, "dilation", cfg.dba.dilation);
            cfg.dba.mask_predictor = parse_mask_predictor(mp);
            cfg.dba.downsampler = parse_downsampler(ds);
            if (cfg.dba.dilation <= 0) throw ConfigError("model.dba.dilation must be positive");
        }
        if (m.contains("merge")) {
            const json& g = m.at("merge");
            expect_keys(g, "model.merge", {"mode", "heads", "window"});
            std::string mode = "attention";
            read(g, "mode", mode);
            read(g, "heads", cfg.merge.heads);
            read(g, "window", cfg.merge.window);
            cfg.merge.mode = parse_merge_mode(mode);
        }
        if (m.contains("ablation")) {
            const json& a = m.at("ablation");
            expect_keys(a, "model.ablation", {"disable_dba", "disable_merge"});
            read(a, "disable_dba", cfg.ablation.disable_dba);
            read(a, "disable_merge", cfg.ablation.disable_merge);
        }
    }

    if (j.contains("data")) {
        const json& d = j.at("data");
        expect_keys(d, "data",
                    {"num_classes", "crop", "ignore_fraction", "preset", "metrics_preset"});
        read(d, "num_classes", cfg.data.num_classes);
        read(d, "crop", cfg.data.crop);
        read(d, "ignore_fraction", cfg.data.ignore_fraction);
        std::string preset = preset_name(cfg.data.preset);
        read(d, "preset", preset);
        cfg.data.preset = parse_preset(preset);
        read(d, "metrics_preset", cfg.data.metrics_preset);
        if (cfg.data.metrics_preset != "standard" && cfg.data.metrics_preset != "lmd")
            throw ConfigError("data.metrics_preset must be \"standard\" or \"lmd\"");
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        expect_keys(t, "train",
                    {"lr_peak", "warmup_steps", "total_steps", "poly_power", "batch_size",
                     "beta1", "beta2", "weight_decay", "checkpoint_every"});
        read(t, "lr_peak", cfg.train.lr_peak);
        read(t, "warmup_steps", cfg.train.warmup_steps);
        read(t, "total_steps", cfg.train.total_steps);
        read(t, "poly_power", cfg.train.poly_power);
        read(t, "batch_size", cfg.train.batch_size);
        read(t, "beta1", cfg.train.beta1);
        read(t, "beta2", cfg.train.beta2);
        read(t, "weight_decay", cfg.train.weight_decay);
        read(t, "checkpoint_every", cfg.train.checkpoint_every);
    }

    if (j.contains("analysis")) {
        const json& a = j.at("analysis");
        expect_keys(a, "analysis",
                    {"probe_batches", "probe_batch_size", "cka_max_rows", "dissect_layer",
                     "quantile", "iou_threshold", "corpus_size"});
        read(a, "probe_batches", cfg.analysis.probe_batches);
        read(a, "probe_batch_size", cfg.analysis.probe_batch_size);
        read(a, "cka_max_rows", cfg.analysis.cka_max_rows);
        read(a, "dissect_layer", cfg.analysis.dissect_layer);
        read(a, "quantile", cfg.analysis.quantile);
        read(a, "iou_threshold", cfg.analysis.iou_threshold);
        read(a, "corpus_size", cfg.analysis.corpus_size);
    }

    if (cfg.train.lr_peak <= 0) throw ConfigError("train.lr_peak must be positive");
    if (cfg.train.warmup_steps < 0 || cfg.train.total_steps <= 0 ||
        cfg.train.warmup_steps >= cfg.train.total_steps)
        throw ConfigError("train: need 0 <= warmup_steps < total_steps");
    if (cfg.train.batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (cfg.data.num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
    if (cfg.analysis.quantile <= 0 || cfg.analysis.quantile >= 1)
        throw ConfigError("analysis.quantile must lie in (0,1)");
    cfg.model_config().encoder.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["model"] = {
        {"embed_dim", cfg.encoder.embed_dim},
        {"depths", cfg.encoder.depths},
        {"heads", cfg.encoder.heads},
        {"window", cfg.encoder.window},
        {"shift_windows", cfg.encoder.shift_windows},
        {"fpn_channels", cfg.fpn_channels},
        {"dba",
         {{"mask_predictor",
           cfg.dba.mask_predictor == MaskPredictor::conv1x1 ? "conv1x1" : "dilated_conv"},
          {"downsampler", cfg.dba.downsampler == Downsampler::mlp ? "mlp" : "average_pool"},
          {"dilation", cfg.dba.dilation}}},
        {"merge",
         {{"mode", cfg.merge.mode == MergeMode::attention ? "attention" : "plain_residual"},
          {"heads", cfg.merge.heads},
          {"window", cfg.merge.window}}},
        {"ablation",
         {{"disable_dba", cfg.ablation.disable_dba},
          {"disable_merge", cfg.ablation.disable_merge}}},
    };
    j["data"] = {
        {"num_classes", cfg.data.num_classes},
        {"crop", cfg.data.crop},
        {"ignore_fraction", cfg.data.ignore_fraction},
        {"preset", preset_name(cfg.data.preset)},
        {"metrics_preset", cfg.data.metrics_preset},
    };
    j["train"] = {
        {"lr_peak", cfg.train.lr_peak},
        {"warmup_steps", cfg.train.warmup_steps},
        {"total_steps", cfg.train.total_steps},
        {"poly_power", cfg.train.poly_power},
        {"batch_size", cfg.train.batch_size},
        {"beta1", cfg.train.beta1},
        {"beta2", cfg.train.beta2},
        {"weight_decay", cfg.train.weight_decay},
        {"checkpoint_every", cfg.train.checkpoint_every},
    };
    j["analysis"] = {
        {"probe_batches", cfg.analysis.probe_batches},
        {"probe_batch_size", cfg.analysis.probe_batch_size},
        {"cka_max_rows", cfg.analysis.cka_max_rows},
        {"dissect_layer", cfg.analysis.dissect_layer},
        {"quantile", cfg.analysis.quantile},
        {"iou_threshold", cfg.analysis.iou_threshold},
        {"corpus_size", cfg.analysis.corpus_size},
    };
    return j;
}

}  // namespace dbat
