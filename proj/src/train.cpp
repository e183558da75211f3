#include "dbat/train.hpp"

#include <cmath>
#include <fstream>

#include "dbat/checkpoint.hpp"

namespace dbat {

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps)
        throw ArgumentError("lr_at: step " + std::to_string(step) + " outside [0," +
                            std::to_string(cfg.total_steps) + "]");
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
        return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr_peak * std::pow(1.0 - progress, cfg.poly_power);
}

AdamW::AdamW(const std::vector<Parameter*>& params, const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), weight_decay_(cfg.weight_decay) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params[i]->tensor.numel()), 0.0);
        v_[i].assign(static_cast<size_t>(params[i]->tensor.numel()), 0.0);
    }
}

void AdamW::step(const std::vector<Parameter*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter* p = params[i];
        const bool f32 = p->tensor.dtype() == DType::f32;
        const double wd = p->no_decay ? 0.0 : weight_decay_;
        const std::vector<double>& g = p->tensor.grad();
        std::vector<double>& x = p->tensor.data();
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        if (g.empty()) continue;  // parameter unused by this graph
        for (size_t j = 0; j < x.size(); ++j) {
            double mj = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            double vj = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            if (f32) {
                mj = round_f32(mj);
                vj = round_f32(vj);
            }
            m[j] = mj;
            v[j] = vj;
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            double xj = x[j] - lr * (mhat / (std::sqrt(vhat) + eps_) + wd * x[j]);
            x[j] = f32 ? round_f32(xj) : xj;
        }
    }
}

namespace {

std::vector<SyntheticScene> make_batch(const RunConfig& cfg, int64_t first_index, int count) {
    std::vector<SyntheticScene> scenes;
    scenes.reserve(static_cast<size_t>(count));
    for (int j = 0; j < count; ++j)
        scenes.push_back(generate_scene(scene_seed(cfg.data_stream_seed(), first_index + j),
                                        cfg.data.num_classes, cfg.data.crop,
                                        cfg.data.ignore_fraction, cfg.data.preset));
    return scenes;
}

}  // namespace

double train_pixel_acc(const DbatModel& model, const RunConfig& cfg, int count) {
    NoGradGuard ng;
    const int b = cfg.train.batch_size;
    LabelMap all_pred, all_gt;
    for (int first = 0; first < count; first += b) {
        const int take = std::min(b, count - first);
        auto scenes = make_batch(cfg, first, take);
        Tensor images = scenes_to_tensor(scenes, DType::f32);
        LabelMap gt = scenes_to_labels(scenes);
        LabelMap pred = ops::argmax_channels(model.forward(images).logits);
        all_pred.n += pred.n;
        all_pred.h = pred.h;
        all_pred.w = pred.w;
        all_pred.v.insert(all_pred.v.end(), pred.v.begin(), pred.v.end());
        all_gt.n += gt.n;
        all_gt.h = gt.h;
        all_gt.w = gt.w;
        all_gt.v.insert(all_gt.v.end(), gt.v.begin(), gt.v.end());
    }
    return compute_metrics(all_pred, all_gt, cfg.data.num_classes).pixel_acc;
}

TrainResult train_loop(const RunConfig& cfg, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume) {
    std::filesystem::create_directories(out_dir);
    DbatModel model(cfg.seed, DType::f32, cfg.model_config());
    AdamW opt(model.parameters(), cfg.train);

    int64_t start = 0;
    if (resume) {
        CheckpointInfo info = load_checkpoint(model, &opt, *resume);
        if (run_config_to_json(info.config) != run_config_to_json(cfg))
            throw CheckpointError("resume: checkpoint config does not match the requested run");
        start = info.step;
    }

    {
        std::ofstream cf(out_dir / "config.resolved.json");
        cf << run_config_to_json(cfg).dump(2) << "\n";
    }
    std::ofstream log_file(out_dir / "steps.jsonl",
                           resume ? std::ios::app : std::ios::trunc);

    TrainResult result;
    const int b = cfg.train.batch_size;
    for (int64_t step = start + 1; step <= cfg.train.total_steps; ++step) {
        const double lr = lr_at(step, cfg.train);
        auto scenes = make_batch(cfg, (step - 1) * b, b);
        Tensor images = scenes_to_tensor(scenes, DType::f32);
        LabelMap labels = scenes_to_labels(scenes);

        for (Parameter* p : model.parameters()) p->tensor.zero_grad();
        ForwardOut out = model.forward(images);
        Tensor loss = ops::cross_entropy(out.logits, labels);
        const double loss_val = loss.item();
        if (!std::isfinite(loss_val))
            throw EvaluationError("training aborted: non-finite loss at step " +
                                  std::to_string(step));
        loss.backward();
        opt.step(model.parameters(), lr);

        StepLogEntry entry{step, lr, loss_val};
        result.log.push_back(entry);
        nlohmann::json line = {{"step", entry.step}, {"lr", entry.lr}, {"loss", entry.loss}};
        log_file << line.dump() << "\n";
        result.final_loss = loss_val;

        if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 &&
            step < cfg.train.total_steps)
            save_checkpoint(model, cfg, step, &opt,
                            out_dir / ("checkpoint_" + std::to_string(step) + ".dbat"));
    }
    result.steps = cfg.train.total_steps;
    result.final_checkpoint = out_dir / "checkpoint_final.dbat";
    save_checkpoint(model, cfg, cfg.train.total_steps, &opt, result.final_checkpoint);

    result.final_train_pixel_acc = train_pixel_acc(model, cfg, 2 * b);
    {
        std::ofstream sf(out_dir / "train_summary.json");
        nlohmann::json s = {{"steps", result.steps},
                            {"final_loss", result.final_loss},
                            {"final_train_pixel_acc", result.final_train_pixel_acc}};
        sf << s.dump(2) << "\n";
    }
    return result;
}

}  // namespace dbat
