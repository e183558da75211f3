#include "dbat/model.hpp"

#include <algorithm>

namespace dbat {

DbatModel::DbatModel(uint64_t seed, DType dtype, const ModelConfig& cfg_) : cfg(cfg_) {
    ParamFactory f(seed, dtype);
    encoder = Encoder(f, cfg.encoder);
    if (!cfg.ablation.disable_dba) dba.emplace(f, cfg.encoder, cfg.dba);
    if (!cfg.ablation.disable_merge) merge.emplace(f, cfg.encoder, cfg.merge);
    head = FpnHead(f, cfg.encoder, cfg.fpn_channels, cfg.num_classes);

    encoder.collect(params_);
    if (dba) dba->collect(params_);
    if (merge) merge->collect(params_);
    head.collect(params_);
    std::sort(params_.begin(), params_.end(),
              [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
    for (size_t i = 1; i < params_.size(); ++i)
        if (params_[i]->name == params_[i - 1]->name)
            throw ConfigError("model: duplicate parameter name " + params_[i]->name);
}

ForwardOut DbatModel::forward(const Tensor& images, Recorder* rec) const {
    ForwardOut out;
    out.pyramid = encoder.forward(images, rec);
    const Tensor& map4 = out.pyramid.maps[3];

    if (dba) {
        out.aggregated = dba->forward(out.pyramid, &out.attn, rec);
    }
    const Tensor& merge_input = dba ? out.aggregated : map4;

    if (merge)
        out.merged = merge->forward(map4, merge_input, rec);
    else
        out.merged = map4;

    std::array<Tensor, 4> decoder_maps = {out.pyramid.maps[0], out.pyramid.maps[1],
                                          out.pyramid.maps[2], out.merged};
    out.logits = head.forward(decoder_maps, cfg.encoder.image_h, cfg.encoder.image_w, rec);
    return out;
}

Parameter* DbatModel::find_parameter(const std::string& name) const {
    for (Parameter* p : params_)
        if (p->name == name) return p;
    return nullptr;
}

int64_t DbatModel::parameter_count() const {
    int64_t n = 0;
    for (const Parameter* p : params_) n += p->tensor.numel();
    return n;
}

}  // namespace dbat
