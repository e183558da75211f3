#pragma once

#include <vector>

#include "dbat/ops.hpp"

namespace dbat {

// flat: every material is a distinct solid color (trivially separable);
// textured: materials are procedural texture families
enum class TexturePreset { flat, textured };

inline const char* preset_name(TexturePreset p) {
    return p == TexturePreset::flat ? "flat" : "textured";
}

// One synthetic sample: overlapping procedural regions whose texture id IS
// the material label, with region (shape) boundaries deliberately crossing
// texture assignment so objects and materials stay dissociated. Concept maps
// feed the dissection tooling.
struct SyntheticScene {
    int crop = 0;
    std::vector<double> image;      // [3, crop, crop], values in [0,1]
    std::vector<int32_t> labels;    // [crop, crop], class id or kIgnoreLabel
    std::vector<int32_t> texture_id;  // [crop, crop], == material class per pixel
    std::vector<int32_t> color_id;    // [crop, crop], palette index
    std::vector<int32_t> shape_id;    // [crop, crop], 0 background / 1 rect / 2 ellipse
};

SyntheticScene generate_scene(uint64_t seed, int num_classes, int crop, double ignore_fraction,
                              TexturePreset preset);

// scene index -> the per-scene seed used by the training stream (stateless,
// so resumed runs see the identical stream)
uint64_t scene_seed(uint64_t data_seed, int64_t scene_index);

// batch assembly: images as one tensor, labels as one map
Tensor scenes_to_tensor(const std::vector<SyntheticScene>& scenes, DType dtype);
LabelMap scenes_to_labels(const std::vector<SyntheticScene>& scenes);

// real-image preprocessing: bilinearly rescale so the shorter border equals
// `target`, then center-crop to target x target
Tensor resize_min_border_and_crop(const Tensor& image_nchw, int target);

}  // namespace dbat
