#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "saltseg/image.hpp"

namespace saltseg {

inline constexpr int kNumThresholds = 10;

// T = {0.50, 0.55, ..., 0.95}
std::array<double, kNumThresholds> metric_thresholds();

// Jaccard index; both masks empty counts as a perfect 1.0.
double iou(const MaskGrid& pred, const MaskGrid& gt);

struct ThresholdCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

struct MetricReport {
    std::vector<std::string> ids;
    std::vector<std::array<int, kNumThresholds>> hits;  // per image, per threshold
    std::vector<double> per_image;                      // mean over thresholds
    std::array<ThresholdCounts, kNumThresholds> counts;
    double m = 0.0;  // mean over images
};

// Competition mAP@IoU with the whole mask scored as one object per image:
// empty/empty is a hit at every threshold, a one-sided empty scores zero,
// otherwise the region is TP at threshold t iff iou > t.
MetricReport competition_metric(const std::vector<MaskGrid>& preds, const std::vector<MaskGrid>& gts,
                                const std::vector<std::string>* ids = nullptr);

// One row per image (id, per-threshold hits, per-image score) and a footer
// row with M. An optional leading comment line carries the run manifest hash.
void write_metric_report(const std::filesystem::path& path, const MetricReport& report,
                         const std::string& manifest_comment = "");

}  // namespace saltseg
