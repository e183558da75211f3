#pragma once

#include <filesystem>

#include "dbat/config.hpp"
#include "dbat/train.hpp"

namespace dbat {

// Checkpoint layout: magic "DBAT", format version u32, header length u32,
// JSON header (config, parameter manifest with names/shapes/offsets, step,
// seed), little-endian f32 parameter payload, then optimizer moments
// (exp_avg, exp_avg_sq) in the same layout when present.
constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const DbatModel& model, const RunConfig& cfg, int64_t step, const AdamW* opt,
                     const std::filesystem::path& file);

// header-only read, used to rebuild the model before loading tensors
struct CheckpointInfo {
    RunConfig config;
    int64_t step = 0;
    uint64_t seed = 0;
    bool has_optimizer = false;
};
CheckpointInfo peek_checkpoint(const std::filesystem::path& file);

// Fills model parameters (and optimizer state when opt != nullptr) from the
// file. Any mismatch against the model's parameter set raises CheckpointError
// naming the offending parameter.
CheckpointInfo load_checkpoint(DbatModel& model, AdamW* opt, const std::filesystem::path& file);

}  // namespace dbat
