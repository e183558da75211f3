#pragma once

#include <filesystem>
#include <optional>

#include "dbat/config.hpp"

namespace dbat {

// linear warm-up to lr_peak, then polynomial decay to zero; valid for
// step in [0, total_steps]
double lr_at(int64_t step, const TrainConfig& cfg);

// Decoupled weight decay; bias/norm parameters (no_decay) are exempt. State
// values live on the f32 grid when the parameters do, which keeps checkpoint
// round-trips and resumed runs bit-exact.
class AdamW {
public:
    AdamW(const std::vector<Parameter*>& params, const TrainConfig& cfg);

    void step(const std::vector<Parameter*>& params, double lr);

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    std::vector<std::vector<double>>& exp_avg() { return m_; }
    std::vector<std::vector<double>>& exp_avg_sq() { return v_; }

private:
    double beta1_, beta2_, weight_decay_;
    double eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct StepLogEntry {
    int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    int64_t steps = 0;
    double final_loss = 0.0;
    double final_train_pixel_acc = 0.0;
    std::filesystem::path final_checkpoint;
    std::vector<StepLogEntry> log;
};

// Runs the training loop into out_dir: writes config.resolved.json,
// steps.jsonl, periodic + final checkpoints, and train_summary.json. The
// data stream is stateless in the step index, so `resume` continues
// bit-exactly. A non-finite loss aborts with EvaluationError naming the step.
TrainResult train_loop(const RunConfig& cfg, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume = std::nullopt);

// accuracy of the model on training-stream scenes [0, count)
double train_pixel_acc(const DbatModel& model, const RunConfig& cfg, int count);

}  // namespace dbat
