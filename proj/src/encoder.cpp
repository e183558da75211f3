#include "dbat/encoder.hpp"

#include <cmath>

namespace dbat {

void EncoderConfig::validate() const {
    if (embed_dim <= 0) throw ConfigError("encoder: embed_dim must be positive");
    if (depths.size() != 4 || heads.size() != 4)
        throw ConfigError("encoder: depths and heads must list exactly 4 stages");
    if (window <= 0) throw ConfigError("encoder: window must be positive");
    if (in_channels <= 0) throw ConfigError("encoder: in_channels must be positive");
    if (image_h <= 0 || image_w <= 0 || image_h % 32 != 0 || image_w % 32 != 0)
        throw ConfigError("encoder: image size " + std::to_string(image_h) + "x" +
                          std::to_string(image_w) + " must be a positive multiple of 32");
    for (int s = 0; s < 4; ++s) {
        if (depths[static_cast<size_t>(s)] <= 0)
            throw ConfigError("encoder: stage " + std::to_string(s + 1) + " depth must be >= 1");
        const int c = stage_channels(s);
        const int h = heads[static_cast<size_t>(s)];
        if (h <= 0 || c % h != 0)
            throw ConfigError("encoder: stage " + std::to_string(s + 1) + " heads " +
                              std::to_string(h) + " must divide channels " + std::to_string(c));
        const int w = effective_window(s);
        if (stage_h(s) % w != 0 || stage_w(s) % w != 0)
            throw ConfigError("encoder: stage " + std::to_string(s + 1) + " size " +
                              std::to_string(stage_h(s)) + "x" + std::to_string(stage_w(s)) +
                              " not divisible by window " + std::to_string(w));
    }
}

// ---------------------------------------------------------------------------
// WindowAttention

WindowAttention::WindowAttention(ParamFactory& f, const std::string& name_, int dim_, int heads_,
                                 int window_, int stride_)
    : name(name_),
      dim(dim_),
      heads(heads_),
      window(window_),
      stride(stride_),
      qkv(f, name_ + ".qkv", dim_, 3 * dim_),
      proj(f, name_ + ".proj", dim_, dim_),
      rel_bias(f.zeros(name_ + ".rel_bias", {(2 * window_ - 1) * (2 * window_ - 1), heads_})) {
    const int t = window * window;
    rel_index.resize(static_cast<size_t>(t) * t);
    for (int q = 0; q < t; ++q)
        for (int k = 0; k < t; ++k) {
            const int dy = q / window - k / window + window - 1;
            const int dx = q % window - k % window + window - 1;
            rel_index[static_cast<size_t>(q) * t + k] = dy * (2 * window - 1) + dx;
        }
}

namespace {

// region ids for the shifted-window mask, following the cyclic-shift
// construction: windows that straddle the roll boundary get -inf score for
// cross-region pairs
Tensor shift_mask(int h, int w, int window, int shift, int heads, DType dt) {
    std::vector<int> region(static_cast<size_t>(h) * w);
    auto band = [&](int size, int coord) {
        if (coord < size - window) return 0;
        if (coord < size - shift) return 1;
        return 2;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            region[static_cast<size_t>(y) * w + x] = band(h, y) * 3 + band(w, x);
    const int nh = h / window, nw = w / window, t = window * window;
    std::vector<double> mask(static_cast<size_t>(nh) * nw * heads * t * t, 0.0);
    for (int wy = 0; wy < nh; ++wy)
        for (int wx = 0; wx < nw; ++wx) {
            const int64_t wbase = (static_cast<int64_t>(wy) * nw + wx) * heads * t * t;
            for (int a = 0; a < t; ++a)
                for (int b = 0; b < t; ++b) {
                    const int ra = region[static_cast<size_t>(wy * window + a / window) * w +
                                          wx * window + a % window];
                    const int rb = region[static_cast<size_t>(wy * window + b / window) * w +
                                          wx * window + b % window];
                    if (ra != rb)
                        for (int hd = 0; hd < heads; ++hd)
                            mask[static_cast<size_t>(wbase + (static_cast<int64_t>(hd) * t + a) * t + b)] =
                                -1e9;
                }
        }
    return Tensor::from_data({nh * nw, heads, t, t}, std::move(mask), dt);
}

}  // namespace

Tensor WindowAttention::forward(const Tensor& x, int h, int w, int shift, Recorder* rec) const {
    const int n = x.dim(0), c = x.dim(2);
    if (c != dim) throw DimensionError(name + ": channel mismatch");
    const int t = window * window;
    const int dh = dim / heads;

    Tensor xn = tokens_to_nchw(x, h, w);
    if (shift > 0) xn = ops::roll2d(xn, -shift, -shift);
    Tensor wp = ops::window_partition(xn, window);  // [B, T, C]
    const int b = wp.dim(0);

    Tensor qkv3 = qkv.forward(wp);  // [B, T, 3C]
    auto head_split = [&](const Tensor& v) {
        return ops::permute(ops::reshape(v, {b, t, heads, dh}), {0, 2, 1, 3});  // [B,h,T,dh]
    };
    Tensor q = head_split(ops::slice_last(qkv3, 0, dim));
    Tensor k = head_split(ops::slice_last(qkv3, dim, dim));
    Tensor v = head_split(ops::slice_last(qkv3, 2 * dim, dim));

    Tensor scores = ops::scale(ops::matmul(q, ops::transpose_last2(k)), 1.0 / std::sqrt(dh));
    Tensor bias = ops::permute(ops::reshape(ops::index_select0(rel_bias.tensor, rel_index),
                                            {t, t, heads}),
                               {2, 0, 1});
    scores = ops::add_bcast(scores, bias);
    if (shift > 0) {
        const int nwin = b / n;
        Tensor mask = shift_mask(h, w, window, shift, heads, x.dtype());
        scores = ops::reshape(ops::add_bcast(ops::reshape(scores, {n, nwin, heads, t, t}), mask),
                              {b, heads, t, t});
    }
    Tensor alpha = ops::softmax(scores, 3);
    if (rec) rec->attention(name, alpha, window, stride);

    Tensor out = ops::reshape(ops::permute(ops::matmul(alpha, v), {0, 2, 1, 3}), {b, t, c});
    out = proj.forward(out);
    Tensor merged = ops::window_reverse(out, window, n, c, h, w);
    if (shift > 0) merged = ops::roll2d(merged, shift, shift);
    return nchw_to_tokens(merged);
}

void WindowAttention::collect(ParamList& out) {
    qkv.collect(out);
    proj.collect(out);
    out.push_back(&rel_bias);
}

// ---------------------------------------------------------------------------
// SwinBlock

SwinBlock::SwinBlock(ParamFactory& f, const std::string& prefix, int dim, int heads, int window,
                     int stride, int shift_)
    : norm1(f, prefix + ".norm1", dim),
      norm2(f, prefix + ".norm2", dim),
      attn(f, prefix + ".attn", dim, heads, window, stride),
      fc1(f, prefix + ".mlp.fc1", dim, 4 * dim),
      fc2(f, prefix + ".mlp.fc2", 4 * dim, dim),
      shift(shift_) {}

Tensor SwinBlock::forward(const Tensor& x, int h, int w, Recorder* rec) const {
    Tensor y = ops::add(x, attn.forward(norm1.forward(x), h, w, shift, rec));
    Tensor m = fc2.forward(ops::gelu(fc1.forward(norm2.forward(y))));
    return ops::add(y, m);
}

void SwinBlock::collect(ParamList& out) {
    norm1.collect(out);
    attn.collect(out);
    norm2.collect(out);
    fc1.collect(out);
    fc2.collect(out);
}

// ---------------------------------------------------------------------------
// PatchMergeLayer

PatchMergeLayer::PatchMergeLayer(ParamFactory& f, const std::string& prefix, int dim)
    : norm(f, prefix + ".norm", 4 * dim), reduce(f, prefix + ".reduce", 4 * dim, 2 * dim, false) {}

Tensor PatchMergeLayer::forward(const Tensor& tokens, int h, int w) const {
    if (h % 2 != 0 || w % 2 != 0)
        throw DimensionError("patch_merge: spatial dims " + std::to_string(h) + "x" +
                             std::to_string(w) + " must be even");
    Tensor grouped = nchw_to_tokens(ops::space_to_depth(tokens_to_nchw(tokens, h, w), 2));
    return reduce.forward(norm.forward(grouped));
}

void PatchMergeLayer::collect(ParamList& out) {
    norm.collect(out);
    reduce.collect(out);
}

// ---------------------------------------------------------------------------
// PatchEmbed

PatchEmbed::PatchEmbed(ParamFactory& f, const std::string& prefix, int in_channels, int dim)
    : proj(f, prefix + ".proj", in_channels * 16, dim), norm(f, prefix + ".norm", dim) {}

Tensor PatchEmbed::forward(const Tensor& image) const {
    if (image.ndim() != 4) throw DimensionError("patch_embed: expected NCHW image");
    if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0)
        throw DimensionError("patch_embed: image size " + std::to_string(image.dim(2)) + "x" +
                             std::to_string(image.dim(3)) + " not divisible by 4");
    Tensor patches = nchw_to_tokens(ops::space_to_depth(image, 4));
    return norm.forward(proj.forward(patches));
}

void PatchEmbed::collect(ParamList& out) {
    proj.collect(out);
    norm.collect(out);
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(ParamFactory& f, const EncoderConfig& cfg_) : cfg(cfg_) {
    cfg.validate();
    embed = PatchEmbed(f, "encoder.embed", cfg.in_channels, cfg.embed_dim);
    for (int s = 0; s < 4; ++s) {
        const int dim = cfg.stage_channels(s);
        const int w = cfg.effective_window(s);
        const std::string sp = "encoder.stage" + std::to_string(s + 1);
        for (int d = 0; d < cfg.depths[static_cast<size_t>(s)]; ++d) {
            const int shift = (cfg.shift_windows && d % 2 == 1 && w > 1 &&
                               cfg.stage_h(s) > w && cfg.stage_w(s) > w)
                                  ? w / 2
                                  : 0;
            stages[static_cast<size_t>(s)].emplace_back(
                f, sp + ".block" + std::to_string(d), dim, cfg.heads[static_cast<size_t>(s)], w,
                cfg.stage_stride(s), shift);
        }
        out_norms[static_cast<size_t>(s)] = LayerNormLayer(f, sp + ".out_norm", dim);
        if (s < 3)
            merges[static_cast<size_t>(s)] =
                PatchMergeLayer(f, "encoder.merge" + std::to_string(s + 1), dim);
    }
}

StagePyramid Encoder::forward(const Tensor& image, Recorder* rec) const {
    if (image.ndim() != 4 || image.dim(1) != cfg.in_channels || image.dim(2) != cfg.image_h ||
        image.dim(3) != cfg.image_w)
        throw DimensionError("encoder: input " + shape_str(image.shape()) +
                             " does not match configured [N," + std::to_string(cfg.in_channels) +
                             "," + std::to_string(cfg.image_h) + "," + std::to_string(cfg.image_w) +
                             "]");
    StagePyramid pyr;
    Tensor x = embed.forward(image);
    if (rec) rec->layer("encoder.embed", tokens_to_nchw(x, cfg.stage_h(0), cfg.stage_w(0)));
    for (int s = 0; s < 4; ++s) {
        const int h = cfg.stage_h(s), w = cfg.stage_w(s);
        int bi = 0;
        for (const SwinBlock& blk : stages[static_cast<size_t>(s)]) {
            x = blk.forward(x, h, w, rec);
            if (rec)
                rec->layer("encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(bi),
                           tokens_to_nchw(x, h, w));
            ++bi;
        }
        Tensor tap = out_norms[static_cast<size_t>(s)].forward(x);
        pyr.maps[static_cast<size_t>(s)] = tokens_to_nchw(tap, h, w);
        if (rec)
            rec->layer("encoder.map" + std::to_string(s + 1), pyr.maps[static_cast<size_t>(s)]);
        if (s < 3) x = merges[static_cast<size_t>(s)].forward(x, h, w);
    }
    return pyr;
}

void Encoder::collect(ParamList& out) {
    embed.collect(out);
    for (int s = 0; s < 4; ++s) {
        for (SwinBlock& blk : stages[static_cast<size_t>(s)]) blk.collect(out);
        out_norms[static_cast<size_t>(s)].collect(out);
        if (s < 3) merges[static_cast<size_t>(s)].collect(out);
    }
}

}  // namespace dbat
