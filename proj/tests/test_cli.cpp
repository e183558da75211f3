#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dbat/config.hpp"

using namespace dbat;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return DBAT_CLI_PATH; }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string run_cli_stdout(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    std::string out;
    std::array<char, 256> buf;
    while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    pclose(pipe);
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path tmp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / "dbat_cli_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_tiny_config(const fs::path& dir, const std::string& extra_data = "") {
    const fs::path file = dir / "config.json";
    std::ofstream os(file);
    os << R"({
  "seed": 5,
  "model": {"embed_dim": 4, "heads": [1, 1, 2, 2], "fpn_channels": 8},
  "data": {"num_classes": 3, "crop": 32)" << extra_data << R"(},
  "train": {"lr_peak": 0.002, "warmup_steps": 2, "total_steps": 6, "batch_size": 2}
})";
    return file;
}

}  // namespace

TEST_CASE("config parsing: defaults, overrides, unknown keys rejected") {
    RunConfig def = parse_run_config(nlohmann::json::object());
    CHECK(def.encoder.embed_dim == 16);
    CHECK(def.train.beta1 == 0.9);
    CHECK(def.train.weight_decay == 0.01);
    CHECK(def.data.preset == TexturePreset::flat);

    nlohmann::json j = {{"model", {{"embed_dim", 8}}}};
    CHECK(parse_run_config(j).encoder.embed_dim == 8);

    CHECK_THROWS_AS(parse_run_config({{"modle", nlohmann::json::object()}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config({{"model", {{"embde_dim", 8}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config({{"train", {{"total_steps", 0}}}}), ConfigError);
    CHECK_THROWS_AS(parse_run_config({{"model", {{"dba", {{"downsampler", "maxpool"}}}}}}),
                    ConfigError);

    // resolved round trip is stable
    RunConfig cfg = parse_run_config(j);
    nlohmann::json out = run_config_to_json(cfg);
    RunConfig back = parse_run_config(out);
    CHECK(run_config_to_json(back) == out);
}

TEST_CASE("train twice with the same seed produces identical step logs") {
    auto dir = tmp_dir("determinism");
    const fs::path cfg = write_tiny_config(dir);
    const fs::path out1 = dir / "run1", out2 = dir / "run2";
    CHECK(run_cli("train --config " + cfg.string() + " --seed 7 --out " + out1.string()) == 0);
    CHECK(run_cli("train --config " + cfg.string() + " --seed 7 --out " + out2.string()) == 0);
    CHECK(read_file(out1 / "steps.jsonl") == read_file(out2 / "steps.jsonl"));
    CHECK(read_file(out1 / "checkpoint_final.dbat") == read_file(out2 / "checkpoint_final.dbat"));
    CHECK(fs::exists(out1 / "config.resolved.json"));
    // the resolved config carries the seed override
    nlohmann::json resolved = nlohmann::json::parse(read_file(out1 / "config.resolved.json"));
    CHECK(resolved["seed"].get<uint64_t>() == 7);
}

TEST_CASE("error paths use distinct exit codes") {
    auto dir = tmp_dir("errors");
    const fs::path cfg = write_tiny_config(dir);

    CHECK(run_cli("--definitely-not-a-flag") == 2);
    CHECK(run_cli("train") == 2);  // missing required --config
    CHECK(run_cli("train --config /nonexistent.json --out " + (dir / "x").string()) == 3);
    CHECK(run_cli("eval --checkpoint /nonexistent.dbat") == 4);

    std::ofstream bad(dir / "bad.json");
    bad << "{\"train\": {\"lr_peek\": 1}}";
    bad.close();
    CHECK(run_cli("train --config " + (dir / "bad.json").string() + " --out " +
                  (dir / "y").string()) == 3);
}

TEST_CASE("eval emits a metrics JSON and an lmd-style summary hides miou") {
    auto dir = tmp_dir("eval");
    const fs::path cfg = write_tiny_config(dir);
    const fs::path run = dir / "run";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run.string()) == 0);
    const std::string ckpt = (run / "checkpoint_final.dbat").string();

    CHECK(run_cli("eval --checkpoint " + ckpt + " --scenes 4 --out " + (dir / "m.json").string()) ==
          0);
    nlohmann::json m = nlohmann::json::parse(read_file(dir / "m.json"));
    for (const char* key : {"pixel_acc", "mean_acc", "miou", "confusion"}) CHECK(m.contains(key));

    std::string summary = run_cli_stdout("eval --checkpoint " + ckpt + " --scenes 4");
    CHECK(summary.find("pixel_acc=") != std::string::npos);
    CHECK(summary.find("miou=") != std::string::npos);

    // lmd preset suppresses miou in the summary (but not in the JSON)
    auto dir2 = tmp_dir("eval_lmd");
    const fs::path cfg2 = write_tiny_config(dir2, R"(, "metrics_preset": "lmd")");
    const fs::path run2 = dir2 / "run";
    REQUIRE(run_cli("train --config " + cfg2.string() + " --out " + run2.string()) == 0);
    std::string lmd_summary = run_cli_stdout(
        "eval --checkpoint " + (run2 / "checkpoint_final.dbat").string() + " --scenes 4 --out " +
        (dir2 / "m.json").string());
    CHECK(lmd_summary.find("pixel_acc=") != std::string::npos);
    CHECK(lmd_summary.find("miou=") == std::string::npos);
    CHECK(nlohmann::json::parse(read_file(dir2 / "m.json")).contains("miou"));
}

TEST_CASE("analyze cka of a run against itself yields a unit diagonal") {
    auto dir = tmp_dir("cka");
    const fs::path cfg = write_tiny_config(dir);
    const fs::path run = dir / "run";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run.string()) == 0);
    const std::string ckpt = (run / "checkpoint_final.dbat").string();
    CHECK(run_cli("analyze cka --a " + ckpt + " --b " + ckpt + " --out " +
                  (dir / "out").string()) == 0);
    nlohmann::json m = nlohmann::json::parse(read_file(dir / "out" / "cka.json"));
    const auto layers = m["layers_a"].get<std::vector<std::string>>();
    for (size_t i = 0; i < layers.size(); ++i) {
        if (m["matrix"][i][i].is_null()) continue;
        CHECK(std::fabs(m["matrix"][i][i].get<double>() - 1.0) < 1e-6);
    }
    CHECK(fs::exists(dir / "out" / "cka.csv"));
}

TEST_CASE("analyze attn and dissect write JSON and CSV artifacts") {
    auto dir = tmp_dir("analyze");
    const fs::path cfg = write_tiny_config(dir);
    const fs::path run = dir / "run";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run.string()) == 0);
    const std::string ckpt = (run / "checkpoint_final.dbat").string();

    CHECK(run_cli("analyze attn --checkpoint " + ckpt + " --out " + (dir / "attn").string()) == 0);
    nlohmann::json a = nlohmann::json::parse(read_file(dir / "attn" / "attention_stats.json"));
    double sum = 0;
    for (const auto& v : a["mask_means"]) sum += v.get<double>();
    CHECK(std::fabs(sum - 1.0) < 1e-6);

    CHECK(run_cli("analyze dissect --checkpoint " + ckpt + " --layer encoder.map1 --corpus-size 2 "
                  "--quantile 0.05 --out " + (dir / "dis").string()) == 0);
    nlohmann::json d = nlohmann::json::parse(read_file(dir / "dis" / "dissection.json"));
    CHECK(d["quantile"].get<double>() == 0.05);
    CHECK(d["units"].size() == 4);

    CHECK(run_cli("dump-activations --checkpoint " + ckpt + " --out " + (dir / "acts").string()) ==
          0);
    CHECK(fs::exists(dir / "acts" / "head.logits.act"));
}
