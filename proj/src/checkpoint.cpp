#include "dbat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dbat {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void write_f32_payload(std::ostream& os, const std::vector<double>& values) {
    std::vector<unsigned char> buf(values.size() * 4);
    for (size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        buf[i * 4] = static_cast<unsigned char>(u);
        buf[i * 4 + 1] = static_cast<unsigned char>(u >> 8);
        buf[i * 4 + 2] = static_cast<unsigned char>(u >> 16);
        buf[i * 4 + 3] = static_cast<unsigned char>(u >> 24);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_f32_payload(std::istream& is, std::vector<double>& out, size_t count) {
    std::vector<unsigned char> buf(count * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw CheckpointError("checkpoint: truncated payload");
    out.resize(count);
    for (size_t i = 0; i < count; ++i) {
        const uint32_t u = static_cast<uint32_t>(buf[i * 4]) |
                           static_cast<uint32_t>(buf[i * 4 + 1]) << 8 |
                           static_cast<uint32_t>(buf[i * 4 + 2]) << 16 |
                           static_cast<uint32_t>(buf[i * 4 + 3]) << 24;
        float f;
        std::memcpy(&f, &u, 4);
        out[i] = static_cast<double>(f);
    }
}

nlohmann::json read_header(std::istream& is, const std::string& file) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DBAT", 4) != 0)
        throw CheckpointError("checkpoint " + file + ": bad magic bytes");
    const uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint " + file + ": unsupported format version " +
                              std::to_string(version));
    const uint32_t hlen = read_u32(is);
    std::string hstr(hlen, '\0');
    is.read(hstr.data(), hlen);
    if (!is) throw CheckpointError("checkpoint " + file + ": truncated header");
    try {
        return nlohmann::json::parse(hstr);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint " + file + ": invalid header: " + e.what());
    }
}

}  // namespace

void save_checkpoint(const DbatModel& model, const RunConfig& cfg, int64_t step, const AdamW* opt,
                     const std::filesystem::path& file) {
    nlohmann::json header;
    header["config"] = run_config_to_json(cfg);
    header["step"] = step;
    header["seed"] = cfg.seed;
    header["has_optimizer"] = opt != nullptr;
    nlohmann::json manifest = nlohmann::json::array();
    int64_t offset = 0;
    for (const Parameter* p : model.parameters()) {
        manifest.push_back({{"name", p->name},
                            {"shape", p->tensor.shape()},
                            {"offset", offset},
                            {"numel", p->tensor.numel()}});
        offset += p->tensor.numel() * 4;
    }
    header["params"] = manifest;
    const std::string hstr = header.dump();

    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot write " + file.string());
    os.write("DBAT", 4);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<uint32_t>(hstr.size()));
    os.write(hstr.data(), static_cast<std::streamsize>(hstr.size()));
    for (const Parameter* p : model.parameters()) write_f32_payload(os, p->tensor.data());
    if (opt) {
        AdamW& o = *const_cast<AdamW*>(opt);
        for (const auto& m : o.exp_avg()) write_f32_payload(os, m);
        for (const auto& v : o.exp_avg_sq()) write_f32_payload(os, v);
    }
    if (!os) throw CheckpointError("checkpoint: write failed for " + file.string());
}

CheckpointInfo peek_checkpoint(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + file.string());
    const nlohmann::json header = read_header(is, file.string());
    CheckpointInfo info;
    info.config = parse_run_config(header.at("config"));
    info.step = header.at("step").get<int64_t>();
    info.seed = header.at("seed").get<uint64_t>();
    info.has_optimizer = header.at("has_optimizer").get<bool>();
    return info;
}

CheckpointInfo load_checkpoint(DbatModel& model, AdamW* opt, const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + file.string());
    const nlohmann::json header = read_header(is, file.string());

    CheckpointInfo info;
    info.config = parse_run_config(header.at("config"));
    info.step = header.at("step").get<int64_t>();
    info.seed = header.at("seed").get<uint64_t>();
    info.has_optimizer = header.at("has_optimizer").get<bool>();

    const nlohmann::json& manifest = header.at("params");
    if (manifest.size() != model.parameters().size())
        throw CheckpointError("checkpoint: parameter count " + std::to_string(manifest.size()) +
                              " does not match model (" +
                              std::to_string(model.parameters().size()) + ")");

    std::vector<std::vector<double>> values(manifest.size());
    for (size_t i = 0; i < manifest.size(); ++i) {
        const nlohmann::json& entry = manifest[i];
        const std::string name = entry.at("name").get<std::string>();
        Parameter* p = model.find_parameter(name);
        if (!p) throw CheckpointError("checkpoint: model has no parameter \"" + name + "\"");
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        if (shape != p->tensor.shape())
            throw CheckpointError("checkpoint: parameter \"" + name + "\" has shape " +
                                  shape_str(shape) + " but model expects " +
                                  shape_str(p->tensor.shape()));
        read_f32_payload(is, values[i], static_cast<size_t>(p->tensor.numel()));
    }
    // all entries validated; now commit
    for (size_t i = 0; i < manifest.size(); ++i) {
        Parameter* p = model.find_parameter(manifest[i].at("name").get<std::string>());
        p->tensor.data() = std::move(values[i]);
    }
    if (opt) {
        if (!info.has_optimizer)
            throw CheckpointError("checkpoint " + file.string() + ": no optimizer state stored");
        auto& m = opt->exp_avg();
        auto& v = opt->exp_avg_sq();
        for (size_t i = 0; i < m.size(); ++i) read_f32_payload(is, m[i], m[i].size());
        for (size_t i = 0; i < v.size(); ++i) read_f32_payload(is, v[i], v[i].size());
        opt->set_t(info.step);
    }
    return info;
}

}  // namespace dbat
