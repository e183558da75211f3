#include "dbat/merge.hpp"

#include <cmath>

namespace dbat {

FeatureMerge::FeatureMerge(ParamFactory& f, const EncoderConfig& enc, const MergeConfig& cfg_)
    : cfg(cfg_), dim(enc.stage_channels(3)) {
    const int h4 = enc.stage_h(3), w4 = enc.stage_w(3);
    window_eff = std::min(cfg.window, std::min(h4, w4));
    if (h4 % window_eff != 0 || w4 % window_eff != 0)
        throw ConfigError("merge: Map4 size " + std::to_string(h4) + "x" + std::to_string(w4) +
                          " not divisible by window " + std::to_string(window_eff));
    if (cfg.mode == MergeMode::attention) {
        if (cfg.heads <= 0 || dim % cfg.heads != 0)
            throw ConfigError("merge: heads " + std::to_string(cfg.heads) +
                              " must divide channels " + std::to_string(dim));
        norm_q = LayerNormLayer(f, "merge.norm_q", dim);
        norm_kv = LayerNormLayer(f, "merge.norm_kv", dim);
        q_proj = LinearLayer(f, "merge.q", dim, dim);
        k_proj = LinearLayer(f, "merge.k", dim, dim);
        v_proj = LinearLayer(f, "merge.v", dim, dim);
        out_proj = LinearLayer(f, "merge.out", dim, dim);
        // zero-initialized output projection: the merged feature starts as
        // Map4 exactly and the attention branch grows in as it learns
        std::fill(out_proj.weight.tensor.data().begin(), out_proj.weight.tensor.data().end(),
                  0.0);
    }
}

Tensor FeatureMerge::forward(const Tensor& map4, const Tensor& aggregated, Recorder* rec) const {
    if (map4.shape() != aggregated.shape())
        throw DimensionError("merge: Map4 " + shape_str(map4.shape()) +
                             " and aggregated features " + shape_str(aggregated.shape()) +
                             " must agree");
    if (cfg.mode == MergeMode::plain_residual) {
        Tensor out = ops::add(map4, aggregated);
        if (rec) rec->layer("merge.out", out);
        return out;
    }

    const int n = map4.dim(0), c = map4.dim(1), h = map4.dim(2), w = map4.dim(3);
    if (c != dim) throw DimensionError("merge: channel mismatch");
    const int wn = window_eff, t = wn * wn, dh = dim / cfg.heads;

    Tensor qw = ops::window_partition(map4, wn);        // [B, T, C]
    Tensor kvw = ops::window_partition(aggregated, wn);
    const int b = qw.dim(0);
    auto head_split = [&](const Tensor& v) {
        return ops::permute(ops::reshape(v, {b, t, cfg.heads, dh}), {0, 2, 1, 3});
    };
    Tensor q = head_split(q_proj.forward(norm_q.forward(qw)));
    Tensor k = head_split(k_proj.forward(norm_kv.forward(kvw)));
    Tensor v = head_split(v_proj.forward(norm_kv.forward(kvw)));

    Tensor scores = ops::scale(ops::matmul(q, ops::transpose_last2(k)), 1.0 / std::sqrt(dh));
    Tensor alpha = ops::softmax(scores, 3);
    if (rec) rec->attention("merge", alpha, wn, 32);

    Tensor ctx = ops::reshape(ops::permute(ops::matmul(alpha, v), {0, 2, 1, 3}), {b, t, c});
    ctx = out_proj.forward(ctx);
    Tensor out = ops::add(map4, ops::window_reverse(ctx, wn, n, c, h, w));
    if (rec) rec->layer("merge.out", out);
    return out;
}

void FeatureMerge::collect(ParamList& out) {
    if (cfg.mode != MergeMode::attention) return;
    norm_q.collect(out);
    norm_kv.collect(out);
    q_proj.collect(out);
    k_proj.collect(out);
    v_proj.collect(out);
    out_proj.collect(out);
}

}  // namespace dbat
