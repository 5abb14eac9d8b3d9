#include "saltseg/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "saltseg/common.hpp"

namespace saltseg {

std::array<double, kNumThresholds> metric_thresholds() {
    std::array<double, kNumThresholds> t{};
    for (int i = 0; i < kNumThresholds; ++i) t[static_cast<std::size_t>(i)] = 0.50 + 0.05 * i;
    return t;
}

double iou(const MaskGrid& pred, const MaskGrid& gt) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
        throw DimensionError("iou: mask shapes differ: " + std::to_string(pred.rows()) + "x" +
                             std::to_string(pred.cols()) + " vs " + std::to_string(gt.rows()) + "x" +
                             std::to_string(gt.cols()));
    }
    std::int64_t inter = 0, uni = 0;
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
        for (Eigen::Index c = 0; c < pred.cols(); ++c) {
            const bool p = pred(r, c) != 0;
            const bool g = gt(r, c) != 0;
            inter += p && g;
            uni += p || g;
        }
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

MetricReport competition_metric(const std::vector<MaskGrid>& preds, const std::vector<MaskGrid>& gts,
                                const std::vector<std::string>* ids) {
    if (preds.size() != gts.size()) {
        throw ArgumentError("competition_metric: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(gts.size()) + " ground truths");
    }
    if (ids && ids->size() != preds.size()) {
        throw ArgumentError("competition_metric: id list length mismatch");
    }
    const auto thresholds = metric_thresholds();

    MetricReport report;
    const std::size_t n = preds.size();
    report.hits.resize(n);
    report.per_image.resize(n);
    report.ids.resize(n);

    // per-image results in indexed slots; reduction below stays in index order
    parallel_for_index(static_cast<std::int64_t>(n), [&](std::int64_t i) {
        const auto idx = static_cast<std::size_t>(i);
        const bool gt_empty = (gts[idx] != 0).count() == 0;
        const bool pred_empty = (preds[idx] != 0).count() == 0;
        std::array<int, kNumThresholds> hits{};
        if (gt_empty && pred_empty) {
            hits.fill(1);
        } else if (gt_empty != pred_empty) {
            hits.fill(0);
        } else {
            const double j = iou(preds[idx], gts[idx]);
            for (int t = 0; t < kNumThresholds; ++t) {
                hits[static_cast<std::size_t>(t)] = j > thresholds[static_cast<std::size_t>(t)] ? 1 : 0;
            }
        }
        report.hits[idx] = hits;
        double score = 0.0;
        for (int h : hits) score += h;
        report.per_image[idx] = score / kNumThresholds;
    });

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        report.ids[i] = ids ? (*ids)[i] : "image_" + std::to_string(i);
        total += report.per_image[i];
        const bool gt_empty = (gts[i] != 0).count() == 0;
        const bool pred_empty = (preds[i] != 0).count() == 0;
        for (int t = 0; t < kNumThresholds; ++t) {
            auto& c = report.counts[static_cast<std::size_t>(t)];
            if (gt_empty && pred_empty) {
                c.tp += 1;
            } else if (gt_empty && !pred_empty) {
                c.fp += 1;
            } else if (!gt_empty && pred_empty) {
                c.fn += 1;
            } else if (report.hits[i][static_cast<std::size_t>(t)]) {
                c.tp += 1;
            } else {
                c.fp += 1;
                c.fn += 1;
            }
        }
    }
    report.m = n == 0 ? 0.0 : total / static_cast<double>(n);
    return report;
}

void write_metric_report(const std::filesystem::path& path, const MetricReport& report,
                         const std::string& manifest_comment) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    auto fmt = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    if (!manifest_comment.empty()) os << "# " << manifest_comment << "\n";
    os << "id";
    for (double t : metric_thresholds()) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), ",t%.2f", t);
        os << buf;
    }
    os << ",score\n";
    for (std::size_t i = 0; i < report.per_image.size(); ++i) {
        os << report.ids[i];
        for (int h : report.hits[i]) os << "," << h;
        os << "," << fmt(report.per_image[i]) << "\n";
    }
    os << "M," << fmt(report.m) << "\n";
    if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace saltseg
