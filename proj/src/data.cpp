#include "dbat/data.hpp"

#include <algorithm>
#include <cmath>

#include "dbat/rng.hpp"

namespace dbat {

namespace {

constexpr int kPaletteSize = 6;
const double kPalette[kPaletteSize][3] = {
    {0.95, 0.55, 0.40}, {0.45, 0.85, 0.50}, {0.40, 0.60, 0.95},
    {0.90, 0.85, 0.35}, {0.80, 0.45, 0.85}, {0.55, 0.90, 0.90},
};

// distinct solid color per class for the flat preset
void class_color(int k, int num_classes, double rgb[3]) {
    const double hue = static_cast<double>(k) / num_classes * 6.0;
    const int sector = static_cast<int>(hue) % 6;
    const double f = hue - std::floor(hue);
    const double v = 0.9, s = 0.85;
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

struct Region {
    int kind = 0;  // 0 background, 1 rect, 2 ellipse
    int material = 0;
    int color = 0;
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;      // rect bounds
    double cx = 0, cy = 0, ax = 1, ay = 1;      // ellipse
    // texture parameters
    double theta = 0, freq = 6, phase = 0;
    int checker_period = 4;
    int noise_cell = 6;
    std::vector<double> noise_grid;
    int noise_w = 0;

    bool contains(double x, double y) const {
        if (kind == 0) return true;
        if (kind == 1) return x >= x0 && x < x1 && y >= y0 && y < y1;
        const double dx = (x - cx) / ax, dy = (y - cy) / ay;
        return dx * dx + dy * dy <= 1.0;
    }

    double gray_at(int x, int y, int crop, TexturePreset preset, int num_classes) const {
        (void)num_classes;
        if (preset == TexturePreset::flat) return 1.0;
        const int family = material % 4;
        const int rank = material / 4;  // shifts parameter ranges for K > 4
        switch (family) {
            case 0: {  // oriented stripes, 4-8 px period at the base rank
                const double f = freq * (1.0 + 0.5 * rank);
                const double u = (std::cos(theta) * x + std::sin(theta) * y) / crop;
                return 0.5 + 0.48 * std::sin(6.283185307179586 * (f * u + phase));
            }
            case 1: {  // checkerboard
                const int p = std::max(2, checker_period >> std::min(rank, 2));
                return ((x / p + y / p) % 2 == 0) ? 0.95 : 0.08;
            }
            case 2: {  // value noise
                const int cell = std::max(2, noise_cell >> std::min(rank, 2));
                const double gx = static_cast<double>(x) / cell;
                const double gy = static_cast<double>(y) / cell;
                const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
                const double fx = gx - ix, fy = gy - iy;
                auto g = [&](int xx, int yy) {
                    return noise_grid[static_cast<size_t>(yy) * noise_w + xx];
                };
                return (1 - fy) * ((1 - fx) * g(ix, iy) + fx * g(ix + 1, iy)) +
                       fy * ((1 - fx) * g(ix, iy + 1) + fx * g(ix + 1, iy + 1));
            }
            default:  // flat fill, brightness staggered by rank
                return (material / 4) % 2 == 0 ? 0.85 : 0.35;
        }
    }
};

}  // namespace

uint64_t scene_seed(uint64_t data_seed, int64_t scene_index) {
    return mix_seed(data_seed, static_cast<uint64_t>(scene_index) + 0x5ce9e5);
}

SyntheticScene generate_scene(uint64_t seed, int num_classes, int crop, double ignore_fraction,
                              TexturePreset preset) {
    if (num_classes < 2) throw ArgumentError("generate_scene: need at least 2 classes");
    if (crop <= 0) throw ArgumentError("generate_scene: crop must be positive");
    if (ignore_fraction < 0.0 || ignore_fraction > 0.9)
        throw ArgumentError("generate_scene: ignore_fraction must lie in [0, 0.9]");

    Rng rng(mix_seed(seed, 0xD6A7));
    const int n_regions = static_cast<int>(rng.uniform_int(2, 6));
    std::vector<Region> regions(static_cast<size_t>(n_regions));
    for (int i = 0; i < n_regions; ++i) {
        Region& r = regions[static_cast<size_t>(i)];
        r.kind = i == 0 ? 0 : static_cast<int>(rng.uniform_int(1, 2));
        r.material = static_cast<int>(rng.uniform_int(0, num_classes - 1));
        r.color = static_cast<int>(rng.uniform_int(0, kPaletteSize - 1));
        if (r.kind == 1) {
            const double w = rng.uniform(crop / 6.0, crop / 1.5);
            const double h = rng.uniform(crop / 6.0, crop / 1.5);
            r.x0 = rng.uniform(-w / 2, crop - w / 2);
            r.y0 = rng.uniform(-h / 2, crop - h / 2);
            r.x1 = r.x0 + w;
            r.y1 = r.y0 + h;
        } else if (r.kind == 2) {
            r.cx = rng.uniform(0, crop);
            r.cy = rng.uniform(0, crop);
            r.ax = rng.uniform(crop / 8.0, crop / 2.5);
            r.ay = rng.uniform(crop / 8.0, crop / 2.5);
        }
        r.theta = rng.uniform(0.0, 3.141592653589793);
        r.freq = rng.uniform(8.0, 16.0);
        r.phase = rng.uniform(0.0, 1.0);
        r.checker_period = static_cast<int>(rng.uniform_int(2, 4));
        r.noise_cell = static_cast<int>(rng.uniform_int(2, 4));
        r.noise_w = crop / 2 + 3;
        r.noise_grid.resize(static_cast<size_t>(r.noise_w) * r.noise_w);
        for (double& v : r.noise_grid) v = rng.uniform(0.1, 0.9);
    }

    SyntheticScene scene;
    scene.crop = crop;
    const size_t hw = static_cast<size_t>(crop) * crop;
    scene.image.assign(3 * hw, 0.0);
    scene.labels.resize(hw);
    scene.texture_id.resize(hw);
    scene.color_id.resize(hw);
    scene.shape_id.resize(hw);

    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            const Region* top = &regions[0];
            for (int i = n_regions - 1; i >= 1; --i)
                if (regions[static_cast<size_t>(i)].contains(x + 0.5, y + 0.5)) {
                    top = &regions[static_cast<size_t>(i)];
                    break;
                }
            const size_t p = static_cast<size_t>(y) * crop + x;
            scene.texture_id[p] = top->material;
            scene.color_id[p] = top->color;
            scene.shape_id[p] = top->kind;
            scene.labels[p] = top->material;

            double rgb[3];
            if (preset == TexturePreset::flat) {
                class_color(top->material, num_classes, rgb);
            } else {
                const double gray = top->gray_at(x, y, crop, preset, num_classes);
                // narrow tint range keeps luminance informative across colors
                for (int c = 0; c < 3; ++c) rgb[c] = gray * (0.55 + 0.45 * kPalette[top->color][c]);
            }
            for (int c = 0; c < 3; ++c)
                scene.image[static_cast<size_t>(c) * hw + p] = round_f32(rgb[c]);
        }

    if (ignore_fraction > 0.0)
        for (size_t p = 0; p < hw; ++p)
            if (rng.uniform() < ignore_fraction) scene.labels[p] = kIgnoreLabel;
    return scene;
}

Tensor scenes_to_tensor(const std::vector<SyntheticScene>& scenes, DType dtype) {
    if (scenes.empty()) throw ArgumentError("scenes_to_tensor: empty batch");
    const int crop = scenes[0].crop;
    const size_t per = static_cast<size_t>(3) * crop * crop;
    std::vector<double> data;
    data.reserve(per * scenes.size());
    for (const SyntheticScene& s : scenes) {
        if (s.crop != crop) throw DimensionError("scenes_to_tensor: mixed crop sizes");
        data.insert(data.end(), s.image.begin(), s.image.end());
    }
    return Tensor::from_data({static_cast<int>(scenes.size()), 3, crop, crop}, std::move(data),
                             dtype);
}

Tensor resize_min_border_and_crop(const Tensor& image, int target) {
    if (image.ndim() != 4) throw DimensionError("resize_min_border_and_crop: expected NCHW");
    if (target <= 0) throw ArgumentError("resize_min_border_and_crop: target must be positive");
    const int h = image.dim(2), w = image.dim(3);
    const double scale = static_cast<double>(target) / std::min(h, w);
    int nh = std::max(target, static_cast<int>(std::lround(h * scale)));
    int nw = std::max(target, static_cast<int>(std::lround(w * scale)));
    Tensor resized = ops::resize_bilinear(image, nh, nw);
    const int y0 = (nh - target) / 2, x0 = (nw - target) / 2;
    if (y0 == 0 && x0 == 0 && nh == target && nw == target) return resized;
    // center crop via explicit copy
    const int n = image.dim(0), c = image.dim(1);
    std::vector<double> out(static_cast<size_t>(n) * c * target * target);
    const double* src = resized.data().data();
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < target; ++y)
                for (int x = 0; x < target; ++x)
                    out[static_cast<size_t>(((ni * c + ci) * target + y)) * target + x] =
                        src[((static_cast<int64_t>(ni) * c + ci) * nh + y0 + y) * nw + x0 + x];
    return Tensor::from_data({n, c, target, target}, std::move(out), image.dtype());
}

LabelMap scenes_to_labels(const std::vector<SyntheticScene>& scenes) {
    if (scenes.empty()) throw ArgumentError("scenes_to_labels: empty batch");
    LabelMap m;
    m.n = static_cast<int>(scenes.size());
    m.h = m.w = scenes[0].crop;
    m.v.reserve(static_cast<size_t>(m.n) * m.h * m.w);
    for (const SyntheticScene& s : scenes) m.v.insert(m.v.end(), s.labels.begin(), s.labels.end());
    return m;
}

}  // namespace dbat
