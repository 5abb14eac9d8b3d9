#include "saltseg/postprocess.hpp"

#include <cmath>
#include <deque>

namespace saltseg {

void PredictionConfig::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("predict.threshold must lie in (0,1), got " + std::to_string(threshold));
    }
    if (min_component_area < 0) {
        throw ConfigError("predict.min_component_area must be >= 0, got " +
                          std::to_string(min_component_area));
    }
    if (connectivity != 4 && connectivity != 8) {
        throw ConfigError("predict.connectivity must be 4 or 8, got " + std::to_string(connectivity));
    }
}

namespace {

ImageGrid probabilities_for(const SegModel& model, const ImageSample& sample, double d_min, double d_max,
                            bool logits_out) {
    Tensor x = build_input(sample, d_min, d_max, model.config.input_spec());
    Tensor logits = forward(model, x, /*train=*/false);
    const Index s = model.config.input_size;
    ImageGrid out(s, s);
    for (Index r = 0; r < s; ++r)
        for (Index c = 0; c < s; ++c) {
            const double z = logits.data()[r * s + c];
            out(r, c) = logits_out ? z : (z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                                   : std::exp(z) / (1.0 + std::exp(z)));
        }
    return out;
}

ImageGrid crop_native(const ImageGrid& padded, Index h, Index w) {
    const Index top = pad_before(h, padded.rows());
    const Index left = pad_before(w, padded.cols());
    return padded.block(top, left, h, w);
}

}  // namespace

ImageGrid tta_predict(const SegModel& model, const ImageSample& sample, double d_min, double d_max,
                      const PredictionConfig& pconfig) {
    pconfig.validate();
    NoGradGuard guard;
    const bool want_logits = pconfig.tta_hflip && pconfig.tta_average_logits;
    ImageGrid plain = probabilities_for(model, sample, d_min, d_max, want_logits);
    if (!pconfig.tta_hflip) {
        return crop_native(plain, sample.image.rows(), sample.image.cols());
    }
    ImageSample flipped = sample;
    flipped.image = hflip(sample.image);
    ImageGrid mirrored = probabilities_for(model, flipped, d_min, d_max, want_logits);
    ImageGrid merged = (plain + hflip(mirrored)) * 0.5;
    if (want_logits) {
        merged = merged.unaryExpr([](double z) {
            return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        });
    }
    return crop_native(merged, sample.image.rows(), sample.image.cols());
}

MaskGrid binarize(const ImageGrid& prob, double threshold) {
    MaskGrid mask(prob.rows(), prob.cols());
    for (Index r = 0; r < prob.rows(); ++r)
        for (Index c = 0; c < prob.cols(); ++c) mask(r, c) = prob(r, c) > threshold ? 1 : 0;
    return mask;
}

ComponentMap label_components(const MaskGrid& mask, std::uint8_t value, int connectivity) {
    if (connectivity != 4 && connectivity != 8) {
        throw ArgumentError("label_components: connectivity must be 4 or 8");
    }
    const Index h = mask.rows(), w = mask.cols();
    ComponentMap cm;
    cm.height = h;
    cm.width = w;
    cm.labels.assign(static_cast<std::size_t>(h * w), 0);
    std::deque<Index> queue;
    for (Index start = 0; start < h * w; ++start) {
        const Index r0 = start / w, c0 = start % w;
        if (mask(r0, c0) != value || cm.labels[static_cast<std::size_t>(start)] != 0) continue;
        const int label = static_cast<int>(cm.areas.size()) + 1;
        std::int64_t area = 0;
        cm.labels[static_cast<std::size_t>(start)] = label;
        queue.push_back(start);
        while (!queue.empty()) {
            const Index cur = queue.front();
            queue.pop_front();
            ++area;
            const Index r = cur / w, c = cur % w;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    if (connectivity == 4 && dr != 0 && dc != 0) continue;
                    const Index nr = r + dr, nc = c + dc;
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    if (mask(nr, nc) != value) continue;
                    const Index ni = nr * w + nc;
                    if (cm.labels[static_cast<std::size_t>(ni)] != 0) continue;
                    cm.labels[static_cast<std::size_t>(ni)] = label;
                    queue.push_back(ni);
                }
        }
        cm.areas.push_back(area);
    }
    return cm;
}

namespace {

// One polarity pass: repaint components of `value` smaller than min_area,
// except a component spanning the entire mask.
MaskGrid drop_small(const MaskGrid& mask, std::uint8_t value, std::uint8_t replacement, int min_area,
                    int connectivity) {
    const ComponentMap cm = label_components(mask, value, connectivity);
    const std::int64_t total = static_cast<std::int64_t>(mask.rows()) * mask.cols();
    MaskGrid out = mask;
    for (Index r = 0; r < mask.rows(); ++r)
        for (Index c = 0; c < mask.cols(); ++c) {
            const int label = cm.labels[static_cast<std::size_t>(r * mask.cols() + c)];
            if (label == 0) continue;
            const std::int64_t area = cm.areas[static_cast<std::size_t>(label - 1)];
            if (area < min_area && area < total) out(r, c) = replacement;
        }
    return out;
}

}  // namespace

MaskGrid remove_small_components(const MaskGrid& mask, int min_area, int connectivity) {
    if (connectivity != 4 && connectivity != 8) {
        throw ArgumentError("remove_small_components: connectivity must be 4 or 8");
    }
    if (min_area <= 0) return mask;
    MaskGrid pass1 = drop_small(mask, 1, 0, min_area, connectivity);   // white specks
    return drop_small(pass1, 0, 1, min_area, connectivity);            // black holes
}

int scaled_min_area(int area_at_101, Index height, Index width) {
    const double scale = static_cast<double>(height * width) / (101.0 * 101.0);
    return static_cast<int>(std::llround(area_at_101 * scale));
}

MaskGrid postprocess_probability(const ImageGrid& prob, const PredictionConfig& pconfig) {
    pconfig.validate();
    MaskGrid mask = binarize(prob, pconfig.threshold);
    const int area = scaled_min_area(pconfig.min_component_area, prob.rows(), prob.cols());
    return remove_small_components(mask, area, pconfig.connectivity);
}

}  // namespace saltseg
