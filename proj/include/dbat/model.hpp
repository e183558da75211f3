#pragma once

#include <memory>
#include <optional>

#include "dbat/dba.hpp"
#include "dbat/merge.hpp"
#include "dbat/seghead.hpp"

namespace dbat {

struct AblationFlags {
    bool disable_dba = false;    // feed Map4 straight into merge
    bool disable_merge = false;  // decoder sees the raw Map4 (backbone-only
                                 // when combined with disable_dba)
};

struct ModelConfig {
    EncoderConfig encoder;
    DbaConfig dba;
    MergeConfig merge;
    int fpn_channels = 32;
    int num_classes = 4;
    AblationFlags ablation;
};

struct ForwardOut {
    StagePyramid pyramid;
    AttentionStack attn;  // undefined tensor when DBA disabled
    Tensor aggregated;    // undefined when DBA disabled
    Tensor merged;        // Map4 when merge disabled
    Tensor logits;
};

struct DbatModel {
    ModelConfig cfg;
    Encoder encoder;
    std::optional<Dba> dba;
    std::optional<FeatureMerge> merge;
    FpnHead head;

    DbatModel(uint64_t seed, DType dtype, const ModelConfig& cfg);

    ForwardOut forward(const Tensor& images, Recorder* rec = nullptr) const;
    // stable name-ordered view used by the optimizer and checkpoints
    const std::vector<Parameter*>& parameters() const { return params_; }
    Parameter* find_parameter(const std::string& name) const;
    int64_t parameter_count() const;

private:
    std::vector<Parameter*> params_;
};

}  // namespace dbat
