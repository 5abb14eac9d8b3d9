#include "saltseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace saltseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double quantize255(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<double>(std::lround(v * 255.0)) / 255.0;
}

std::vector<std::string> list_png_ids(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    std::vector<std::string> ids;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            ids.push_back(entry.path().stem().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace

std::vector<std::string> DatasetSplit::validation_ids(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of) {
        if (f == fold) out.push_back(id);
    }
    return out;
}

std::vector<std::string> DatasetSplit::training_ids(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of) {
        if (f != fold) out.push_back(id);
    }
    return out;
}

void AugmentPolicy::validate() const {
    if (vflip_prob > 0.0) {
        throw ConfigError(
            "augment policy: vertical flips are disabled; depth encodes signal in the height axis");
    }
    if (max_rotate_deg > 10.0) {
        throw ConfigError("augment policy: rotations beyond +/-10 degrees are disabled (got " +
                          format_double(max_rotate_deg) + "); big rotations hurt accuracy");
    }
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob_ok(hflip_prob) || !prob_ok(brightness_prob) || !prob_ok(shift_prob) ||
        !prob_ok(rotate_prob)) {
        throw ConfigError("augment policy: probabilities must lie in [0,1]");
    }
    if (brightness_max_delta < 0.0 || max_shift_px < 0 || max_rotate_deg < 0.0) {
        throw ConfigError("augment policy: magnitudes must be non-negative");
    }
}

std::map<std::string, double> read_depths_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw FormatError(path.string() + ": empty depths csv");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,z") throw FormatError(path.string() + ": expected header 'id,z', got '" + line + "'");
    std::map<std::string, double> depths;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
        }
        const std::string id = line.substr(0, comma);
        const std::string zs = line.substr(comma + 1);
        try {
            depths[id] = std::stod(zs);
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad depth '" + zs + "'");
        }
    }
    return depths;
}

std::vector<ImageSample> load_dataset(const std::filesystem::path& images_dir,
                                      const std::optional<std::filesystem::path>& masks_dir,
                                      const std::filesystem::path& depths_csv) {
    const auto depths = read_depths_csv(depths_csv);
    std::vector<ImageSample> samples;
    for (const auto& id : list_png_ids(images_dir)) {
        ImageSample s;
        s.id = id;
        s.image = png_read_gray(images_dir / (id + ".png"));
        const auto it = depths.find(id);
        if (it == depths.end()) {
            throw DataError("no depth row for id '" + id + "' in " + depths_csv.string());
        }
        s.depth = it->second;
        if (masks_dir) {
            const auto mask_path = *masks_dir / (id + ".png");
            if (std::filesystem::exists(mask_path)) {
                const ImageGrid m = png_read_gray(mask_path);
                MaskGrid mask(m.rows(), m.cols());
                for (Eigen::Index r = 0; r < m.rows(); ++r)
                    for (Eigen::Index c = 0; c < m.cols(); ++c) mask(r, c) = m(r, c) > 0.5 ? 1 : 0;
                s.mask = std::move(mask);
            }
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_dataset(const std::filesystem::path& root, const std::vector<ImageSample>& samples) {
    std::error_code ec;
    std::filesystem::create_directories(root / "images", ec);
    if (ec) throw IoError("cannot create " + (root / "images").string() + ": " + ec.message());
    const bool any_mask =
        std::any_of(samples.begin(), samples.end(), [](const ImageSample& s) { return s.mask.has_value(); });
    if (any_mask) {
        std::filesystem::create_directories(root / "masks", ec);
        if (ec) throw IoError("cannot create " + (root / "masks").string() + ": " + ec.message());
    }

    std::vector<const ImageSample*> ordered;
    ordered.reserve(samples.size());
    for (const auto& s : samples) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(),
              [](const ImageSample* a, const ImageSample* b) { return a->id < b->id; });

    std::ofstream csv(root / "depths.csv", std::ios::binary);
    if (!csv) throw IoError("cannot open " + (root / "depths.csv").string() + " for writing");
    csv << "id,z\n";
    for (const ImageSample* s : ordered) {
        png_write_gray8(root / "images" / (s->id + ".png"), s->image);
        if (s->mask) {
            png_write_gray8(root / "masks" / (s->id + ".png"), s->mask->cast<double>());
        }
        csv << s->id << "," << format_double(s->depth) << "\n";
    }
    if (!csv) throw IoError("write failed for " + (root / "depths.csv").string());
}

std::vector<ImageSample> generate_synthetic(int n, int size, std::uint64_t seed) {
    if (n < 1) throw ArgumentError("generate_synthetic: n must be >= 1");
    if (size < 16) throw ArgumentError("generate_synthetic: size must be >= 16");

    SplitRng root(seed);
    std::vector<ImageSample> samples;
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SplitRng rng = root.fork(static_cast<std::uint64_t>(i));
        ImageSample s;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "synth_%05d", i);
            s.id = buf;
        }
        s.depth = rng.uniform(100.0, 1000.0);

        // Salt boundary: smooth curve; ~7% empty, ~7% full masks.
        const double mode = rng.uniform();
        const double base = size * rng.uniform(0.25, 0.75);
        const double a1 = size * rng.uniform(0.02, 0.10);
        const double a2 = size * rng.uniform(0.01, 0.05);
        const double f1 = rng.uniform(0.5, 2.0);
        const double f2 = rng.uniform(2.0, 4.0);
        const double p1 = rng.uniform(0.0, 2.0 * kPi);
        const double p2 = rng.uniform(0.0, 2.0 * kPi);

        MaskGrid mask(size, size);
        for (Eigen::Index c = 0; c < size; ++c) {
            double boundary;
            if (mode < 0.07) {
                boundary = size + 1.0;  // empty mask
            } else if (mode < 0.14) {
                boundary = -1.0;  // full mask
            } else {
                const double x = static_cast<double>(c) / size;
                boundary = base + a1 * std::sin(2.0 * kPi * f1 * x + p1) +
                           a2 * std::sin(2.0 * kPi * f2 * x + p2);
            }
            for (Eigen::Index r = 0; r < size; ++r) {
                mask(r, c) = static_cast<double>(r) > boundary ? 1 : 0;
            }
        }

        // Sediment: layered sinusoids along depth; salt: flatter, brighter,
        // noisier texture.
        const double fr = rng.uniform(2.0, 5.0);
        const double fc = rng.uniform(0.5, 2.0);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double warp = rng.uniform(0.5, 2.0);
        const double salt_freq = rng.uniform(6.0, 12.0);
        const double salt_phase = rng.uniform(0.0, 2.0 * kPi);

        ImageGrid img(size, size);
        for (Eigen::Index r = 0; r < size; ++r) {
            for (Eigen::Index c = 0; c < size; ++c) {
                const double y = static_cast<double>(r) / size;
                const double x = static_cast<double>(c) / size;
                double v;
                if (mask(r, c)) {
                    v = 0.62 + 0.08 * std::sin(2.0 * kPi * salt_freq * (x + y) + salt_phase) +
                        0.10 * (rng.uniform() - 0.5);
                } else {
                    v = 0.42 +
                        0.22 * std::sin(2.0 * kPi * fr * y + phase + warp * std::sin(2.0 * kPi * fc * x)) +
                        0.05 * (rng.uniform() - 0.5);
                }
                img(r, c) = quantize255(v);
            }
        }
        s.image = std::move(img);
        s.mask = std::move(mask);
        samples.push_back(std::move(s));
    }
    return samples;
}

double relative_depth(double depth, double d_min, double d_max) {
    if (!(d_max > d_min)) {
        throw ArgumentError("relative_depth: d_max (" + format_double(d_max) +
                            ") must exceed d_min (" + format_double(d_min) + ")");
    }
    double rel = (depth - d_min) / (d_max - d_min);
    if (rel < 0.0) rel = 0.0;  // depths outside the training range clamp
    if (rel > 1.0) rel = 1.0;
    return rel;
}

Index pad_before(Index core, Index target) { return (target - core) / 2; }

namespace {

Index reflect_index(Index p, Index n) {
    if (n == 1) return 0;
    const Index period = 2 * n - 2;
    p = p % period;
    if (p < 0) p += period;
    return p < n ? p : period - p;
}

}  // namespace

ImageGrid reflect_pad(const ImageGrid& core, int target) {
    const Index h = core.rows(), w = core.cols();
    if (h > target || w > target) {
        throw ArgumentError("reflect_pad: image " + std::to_string(h) + "x" + std::to_string(w) +
                            " larger than target " + std::to_string(target));
    }
    const Index bh = pad_before(h, target), bw = pad_before(w, target);
    ImageGrid out(target, target);
    for (Index r = 0; r < target; ++r) {
        const Index sr = reflect_index(r - bh, h);
        for (Index c = 0; c < target; ++c) {
            out(r, c) = core(sr, reflect_index(c - bw, w));
        }
    }
    return out;
}

Tensor build_input(const ImageSample& sample, double d_min, double d_max, const InputSpec& spec) {
    const int s = spec.input_size;
    if (sample.image.rows() > s || sample.image.cols() > s) {
        throw ArgumentError("build_input: image " + std::to_string(sample.image.rows()) + "x" +
                            std::to_string(sample.image.cols()) + " exceeds input size " +
                            std::to_string(s));
    }
    const ImageGrid padded = reflect_pad(sample.image, s);
    const int c_in = spec.channels();
    Array data(static_cast<Index>(c_in) * s * s);
    Index pos = 0;
    for (Index r = 0; r < s; ++r)
        for (Index c = 0; c < s; ++c) data[pos++] = padded(r, c);
    if (spec.depth_channel) {
        const double rel = relative_depth(sample.depth, d_min, d_max);
        for (Index i = 0; i < static_cast<Index>(s) * s; ++i) data[pos++] = rel;
    }
    if (spec.coordconv) {
        // x plane: -1 at column 0, +1 at column s-1; y plane likewise by row
        for (Index r = 0; r < s; ++r)
            for (Index c = 0; c < s; ++c) data[pos++] = -1.0 + 2.0 * static_cast<double>(c) / (s - 1);
        for (Index r = 0; r < s; ++r)
            for (Index c = 0; c < s; ++c) data[pos++] = -1.0 + 2.0 * static_cast<double>(r) / (s - 1);
    }
    return Tensor::from_data(std::move(data), {1, c_in, s, s}, false);
}

ImageSample augment(const ImageSample& sample, SplitRng rng, const AugmentPolicy& policy) {
    policy.validate();
    ImageSample out = sample;

    if (policy.hflip_prob > 0.0 && rng.uniform() < policy.hflip_prob) {
        out.image = hflip(out.image);
        if (out.mask) out.mask = hflip(*out.mask);
    }

    if (policy.shift_prob > 0.0 && rng.uniform() < policy.shift_prob && policy.max_shift_px > 0) {
        const auto shift =
            static_cast<Index>(rng.uniform_int(2 * policy.max_shift_px + 1)) - policy.max_shift_px;
        if (shift != 0) {
            const Index w = out.image.cols();
            ImageGrid img(out.image.rows(), w);
            MaskGrid msk;
            if (out.mask) msk.resize(out.mask->rows(), w);
            for (Index c = 0; c < w; ++c) {
                Index src = c - shift;
                if (src < 0) src = 0;
                if (src >= w) src = w - 1;
                img.col(c) = out.image.col(src);
                if (out.mask) msk.col(c) = out.mask->col(src);
            }
            out.image = std::move(img);
            if (out.mask) out.mask = std::move(msk);
        }
    }

    if (policy.rotate_prob > 0.0 && rng.uniform() < policy.rotate_prob && policy.max_rotate_deg > 0.0) {
        const double deg = rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg);
        const double rad = deg * kPi / 180.0;
        const double cs = std::cos(rad), sn = std::sin(rad);
        const Index h = out.image.rows(), w = out.image.cols();
        const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
        ImageGrid img(h, w);
        MaskGrid msk;
        if (out.mask) msk.resize(h, w);
        for (Index r = 0; r < h; ++r) {
            for (Index c = 0; c < w; ++c) {
                // inverse rotation about the center
                const double dy = r - cy, dx = c - cx;
                const double sy = cy + cs * dy + sn * dx;
                const double sx = cx - sn * dy + cs * dx;
                const double syc = std::clamp(sy, 0.0, static_cast<double>(h - 1));
                const double sxc = std::clamp(sx, 0.0, static_cast<double>(w - 1));
                const auto y0 = static_cast<Index>(std::floor(syc));
                const auto x0 = static_cast<Index>(std::floor(sxc));
                const Index y1 = std::min(y0 + 1, h - 1);
                const Index x1 = std::min(x0 + 1, w - 1);
                const double ty = syc - y0, tx = sxc - x0;
                img(r, c) = (1 - ty) * ((1 - tx) * out.image(y0, x0) + tx * out.image(y0, x1)) +
                            ty * ((1 - tx) * out.image(y1, x0) + tx * out.image(y1, x1));
                if (out.mask) {
                    msk(r, c) = (*out.mask)(static_cast<Index>(std::lround(syc)),
                                            static_cast<Index>(std::lround(sxc)));
                }
            }
        }
        out.image = std::move(img);
        if (out.mask) out.mask = std::move(msk);
    }

    if (policy.brightness_prob > 0.0 && rng.uniform() < policy.brightness_prob) {
        const double delta = rng.uniform(-policy.brightness_max_delta, policy.brightness_max_delta);
        out.image = (out.image + delta).cwiseMax(0.0).cwiseMin(1.0);
    }

    return out;
}

RleMask rle_encode(const MaskGrid& mask) {
    RleMask rle;
    rle.height = mask.rows();
    rle.width = mask.cols();
    std::int64_t run_start = 0, run_len = 0;
    std::int64_t p = 0;
    for (Index c = 0; c < mask.cols(); ++c) {
        for (Index r = 0; r < mask.rows(); ++r) {
            ++p;  // 1-based column-major position
            if (mask(r, c)) {
                if (run_len == 0) run_start = p;
                ++run_len;
            } else if (run_len > 0) {
                rle.runs.emplace_back(run_start, run_len);
                run_len = 0;
            }
        }
    }
    if (run_len > 0) rle.runs.emplace_back(run_start, run_len);
    return rle;
}

MaskGrid rle_decode(const RleMask& rle) {
    if (rle.height < 1 || rle.width < 1) throw ArgumentError("rle_decode: mask dimensions must be positive");
    const std::int64_t total = static_cast<std::int64_t>(rle.height) * rle.width;
    MaskGrid mask = MaskGrid::Zero(rle.height, rle.width);
    std::int64_t prev_end = 0;
    for (const auto& [start, len] : rle.runs) {
        if (start < 1 || len < 1) {
            throw FormatError("rle_decode: run (" + std::to_string(start) + "," + std::to_string(len) +
                              ") malformed");
        }
        if (start <= prev_end) {
            throw FormatError("rle_decode: overlapping or unordered runs at start " +
                              std::to_string(start));
        }
        if (start + len - 1 > total) {
            throw FormatError("rle_decode: run past end of mask (start " + std::to_string(start) +
                              ", length " + std::to_string(len) + ", pixels " + std::to_string(total) + ")");
        }
        for (std::int64_t p = start; p < start + len; ++p) {
            const std::int64_t idx = p - 1;
            mask(static_cast<Index>(idx % rle.height), static_cast<Index>(idx / rle.height)) = 1;
        }
        prev_end = start + len - 1;
    }
    return mask;
}

std::string rle_to_string(const RleMask& rle) {
    std::string out;
    for (std::size_t i = 0; i < rle.runs.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(rle.runs[i].first);
        out += ' ';
        out += std::to_string(rle.runs[i].second);
    }
    return out;
}

RleMask rle_from_string(const std::string& text, Index height, Index width) {
    RleMask rle;
    rle.height = height;
    rle.width = width;
    std::istringstream is(text);
    std::int64_t start, len;
    while (is >> start) {
        if (!(is >> len)) throw FormatError("rle_from_string: odd token count in '" + text + "'");
        rle.runs.emplace_back(start, len);
    }
    return rle;
}

DatasetSplit kfold_split(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
    if (k < 2) throw ArgumentError("kfold_split: k must be >= 2, got " + std::to_string(k));
    if (static_cast<std::size_t>(k) > ids.size()) {
        throw ArgumentError("kfold_split: k (" + std::to_string(k) + ") exceeds id count (" +
                            std::to_string(ids.size()) + ")");
    }
    std::vector<std::string> shuffled = ids;
    std::sort(shuffled.begin(), shuffled.end());
    SplitRng rng(seed);
    rng.shuffle(shuffled);
    DatasetSplit split;
    split.k = k;
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
        split.fold_of[shuffled[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
    return split;
}

void write_submission(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, RleMask>>& rows) {
    std::vector<const std::pair<std::string, RleMask>*> ordered;
    ordered.reserve(rows.size());
    for (const auto& r : rows) ordered.push_back(&r);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto* a, const auto* b) { return a->first < b->first; });
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "id,rle_mask\n";
    for (const auto* r : ordered) {
        os << r->first << "," << rle_to_string(r->second) << "\n";
    }
    if (!os) throw IoError("write failed for " + path.string());
}

std::vector<std::pair<std::string, std::string>> read_submission(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw FormatError(path.string() + ": empty submission");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,rle_mask") {
        throw FormatError(path.string() + ": expected header 'id,rle_mask', got '" + line + "'");
    }
    std::vector<std::pair<std::string, std::string>> rows;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError(path.string() + ": malformed row '" + line + "'");
        rows.emplace_back(line.substr(0, comma), line.substr(comma + 1));
    }
    return rows;
}

}  // namespace saltseg
