#include "dbat/dba.hpp"

namespace dbat {

namespace {
double* grad_of(const TensorImplPtr& p) {
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}
}  // namespace

Tensor aggregate(const std::array<Tensor, 4>& maps, const AttentionStack& attn) {
    const Tensor& a = attn.weights;
    if (a.ndim() != 4 || a.dim(1) != 4)
        throw DimensionError("aggregate: attention stack must be [N,4,H,W], got " +
                             shape_str(a.shape()));
    const int n = maps[0].dim(0), c = maps[0].dim(1), h = maps[0].dim(2), w = maps[0].dim(3);
    for (const Tensor& m : maps)
        if (m.shape() != maps[0].shape())
            throw DimensionError("aggregate: stage maps disagree, " + shape_str(m.shape()) +
                                 " vs " + shape_str(maps[0].shape()));
    if (a.dim(0) != n || a.dim(2) != h || a.dim(3) != w)
        throw DimensionError("aggregate: attention " + shape_str(a.shape()) +
                             " does not match maps " + shape_str(maps[0].shape()));

    bool rg = grad_enabled() &&
              (a.requires_grad() || maps[0].requires_grad() || maps[1].requires_grad() ||
               maps[2].requires_grad() || maps[3].requires_grad());
    Tensor out = Tensor::zeros({n, c, h, w}, a.dtype(), rg);
    if (rg) {
        out.impl()->parents = {a.ptr(), maps[0].ptr(), maps[1].ptr(), maps[2].ptr(),
                               maps[3].ptr()};
    }
    const int64_t hw = static_cast<int64_t>(h) * w;
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (int i = 0; i < 4; ++i) {
        const double* pm = maps[static_cast<size_t>(i)].data().data();
        for (int ni = 0; ni < n; ++ni) {
            const double* aplane = pa + (static_cast<int64_t>(ni) * 4 + i) * hw;
            for (int ci = 0; ci < c; ++ci) {
                const double* mplane = pm + (static_cast<int64_t>(ni) * c + ci) * hw;
                double* oplane = po + (static_cast<int64_t>(ni) * c + ci) * hw;
                for (int64_t p = 0; p < hw; ++p) oplane[p] += aplane[p] * mplane[p];
            }
        }
    }
    out.impl()->round_to_dtype();
    if (rg)
        out.impl()->backward_fn = [n, c, hw](TensorImpl& o) {
            const double* go = o.grad.data();
            const double* pa = o.parents[0]->data.data();
            if (double* ga = grad_of(o.parents[0])) {
                for (int i = 0; i < 4; ++i) {
                    const double* pm = o.parents[static_cast<size_t>(i) + 1]->data.data();
                    for (int ni = 0; ni < n; ++ni) {
                        double* gplane = ga + (static_cast<int64_t>(ni) * 4 + i) * hw;
                        for (int ci = 0; ci < c; ++ci) {
                            const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
                            for (int64_t p = 0; p < hw; ++p)
                                gplane[p] += pm[base + p] * go[base + p];
                        }
                    }
                }
            }
            for (int i = 0; i < 4; ++i) {
                if (double* gm = grad_of(o.parents[static_cast<size_t>(i) + 1])) {
                    for (int ni = 0; ni < n; ++ni) {
                        const double* aplane = pa + (static_cast<int64_t>(ni) * 4 + i) * hw;
                        for (int ci = 0; ci < c; ++ci) {
                            const int64_t base = (static_cast<int64_t>(ni) * c + ci) * hw;
                            for (int64_t p = 0; p < hw; ++p)
                                gm[base + p] += aplane[p] * go[base + p];
                        }
                    }
                }
            }
        };
    return out;
}

Dba::Dba(ParamFactory& f, const EncoderConfig& enc, const DbaConfig& cfg_)
    : cfg(cfg_), c4(enc.stage_channels(3)) {
    if (cfg.mask_predictor == MaskPredictor::conv1x1)
        pred_conv = Conv1x1Layer(f, "dba.predictor", c4, 4);
    else
        pred_dilated = Conv2dLayer(f, "dba.predictor", c4, 4, 3, cfg.dilation);
    for (int i = 0; i < 3; ++i) {
        const int factor = 1 << (3 - i);  // 8, 4, 2 for stages 1..3
        down_factor[static_cast<size_t>(i)] = factor;
        const int ci = enc.stage_channels(i);
        const int in = cfg.downsampler == Downsampler::mlp ? ci * factor * factor : ci;
        down_proj[static_cast<size_t>(i)] =
            Conv1x1Layer(f, "dba.down" + std::to_string(i + 1) + ".proj", in, c4);
    }
}

AttentionStack Dba::predict_masks(const Tensor& map4, Recorder* rec) const {
    if (map4.ndim() != 4 || map4.dim(1) != c4)
        throw DimensionError("predict_masks: expected [N," + std::to_string(c4) +
                             ",H4,W4], got " + shape_str(map4.shape()));
    Tensor logits = cfg.mask_predictor == MaskPredictor::conv1x1 ? pred_conv.forward(map4)
                                                                 : pred_dilated.forward(map4);
    AttentionStack stack{ops::softmax(logits, 1)};
    if (rec) rec->layer("dba.attn", stack.weights);
    return stack;
}

Tensor Dba::downsample_map(const Tensor& map_i, int i) const {
    if (i < 1 || i > 3)
        throw ArgumentError("downsample_map: stage index " + std::to_string(i) +
                            " outside 1..3");
    const int factor = down_factor[static_cast<size_t>(i - 1)];
    const Conv1x1Layer& proj = down_proj[static_cast<size_t>(i - 1)];
    if (cfg.downsampler == Downsampler::mlp)
        return proj.forward(ops::space_to_depth(map_i, factor));
    return proj.forward(ops::avg_pool(map_i, factor));
}

Tensor Dba::forward(const StagePyramid& pyr, AttentionStack* attn_out, Recorder* rec) const {
    const Tensor& map4 = pyr.maps[3];
    AttentionStack attn = predict_masks(map4, rec);
    std::array<Tensor, 4> ds;
    for (int i = 1; i <= 3; ++i) {
        ds[static_cast<size_t>(i - 1)] = downsample_map(pyr.maps[static_cast<size_t>(i - 1)], i);
        if (rec) rec->layer("dba.down" + std::to_string(i), ds[static_cast<size_t>(i - 1)]);
    }
    ds[3] = map4;  // identity for the deepest stage
    Tensor agg = aggregate(ds, attn);
    if (rec) rec->layer("dba.aggregated", agg);
    if (attn_out) *attn_out = attn;
    return agg;
}

void Dba::collect(ParamList& out) {
    if (cfg.mask_predictor == MaskPredictor::conv1x1)
        pred_conv.collect(out);
    else
        pred_dilated.collect(out);
    for (auto& d : down_proj) d.collect(out);
}

}  // namespace dbat
