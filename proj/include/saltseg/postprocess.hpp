#pragma once

#include <vector>

#include "saltseg/data.hpp"
#include "saltseg/image.hpp"
#include "saltseg/model.hpp"

namespace saltseg {

struct PredictionConfig {
    double threshold = 0.45;      // binarization, strict >
    int min_component_area = 20;  // pixels at 101x101 scale
    int connectivity = 8;         // 4 or 8
    bool tta_hflip = true;
    bool tta_average_logits = false;  // default averages probabilities

    void validate() const;
};

// Sigmoid probabilities cropped back to the sample's native size. With TTA
// the horizontally flipped image is rebuilt through build_input (CoordConv
// and depth planes are regenerated, not flipped) and the unflipped
// predictions are averaged.
ImageGrid tta_predict(const SegModel& model, const ImageSample& sample, double d_min, double d_max,
                      const PredictionConfig& pconfig);

MaskGrid binarize(const ImageGrid& prob, double threshold);

// Connected-component labeling in scan order; labels start at 1.
struct ComponentMap {
    std::vector<int> labels;  // row-major, 0 where the pixel is not `value`
    std::vector<std::int64_t> areas;  // areas[label-1]
    Index height = 0, width = 0;
};
ComponentMap label_components(const MaskGrid& mask, std::uint8_t value, int connectivity);

// Drops white components below min_area, then fills black ones; a component
// covering the whole mask is never touched, so all-zero and all-one masks are
// fixed points. Idempotent.
MaskGrid remove_small_components(const MaskGrid& mask, int min_area, int connectivity);

// min_component_area is defined at 101x101 scale and scales with pixel count.
int scaled_min_area(int area_at_101, Index height, Index width);

// binarize then remove components at the size-scaled threshold
MaskGrid postprocess_probability(const ImageGrid& prob, const PredictionConfig& pconfig);

}  // namespace saltseg
