#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "saltseg/image.hpp"
#include "saltseg/rng.hpp"
#include "saltseg/tensor.hpp"

namespace saltseg {

// One seismic image with optional ground truth. Depth is in feet, as in
// depths.csv.
struct ImageSample {
    std::string id;
    ImageGrid image;               // intensities in [0,1]
    std::optional<MaskGrid> mask;  // values in {0,1}
    double depth = 0.0;
};

// Run-length encoded mask, competition convention: column-major pixel order
// (top to bottom, then left to right), 1-based starts.
struct RleMask {
    std::vector<std::pair<std::int64_t, std::int64_t>> runs;  // (start, length)
    Index height = 0;
    Index width = 0;
};

struct DatasetSplit {
    std::map<std::string, int> fold_of;
    int k = 0;
    std::vector<std::string> validation_ids(int fold) const;
    std::vector<std::string> training_ids(int fold) const;
};

struct AugmentPolicy {
    double hflip_prob = 0.5;
    double vflip_prob = 0.0;  // rejected if > 0
    double brightness_prob = 0.0;
    double brightness_max_delta = 0.1;
    double shift_prob = 0.0;  // horizontal only
    int max_shift_px = 5;
    double rotate_prob = 0.0;
    double max_rotate_deg = 5.0;  // rejected beyond 10

    // Height carries signal in this domain: vertical flips and big rotations
    // are rejected outright.
    void validate() const;
};

// The input-plane toggles build_input needs from the model configuration.
struct InputSpec {
    int input_size = 128;
    bool depth_channel = true;
    bool coordconv = true;
    int channels() const { return 1 + (depth_channel ? 1 : 0) + (coordconv ? 2 : 0); }
};

// --- dataset I/O ------------------------------------------------------------

// Layout: <images_dir>/<id>.png, optional <masks_dir>/<id>.png, depths_csv
// with header id,z. Masks binarize at 0.5; RGB images average their channels.
std::vector<ImageSample> load_dataset(const std::filesystem::path& images_dir,
                                      const std::optional<std::filesystem::path>& masks_dir,
                                      const std::filesystem::path& depths_csv);

// Writes the competition layout under root: images/, masks/ (when present),
// depths.csv. Deterministic bytes for fixed samples.
void write_dataset(const std::filesystem::path& root, const std::vector<ImageSample>& samples);

std::map<std::string, double> read_depths_csv(const std::filesystem::path& path);

// --- synthetic corpus ---------------------------------------------------------

// Layered sinusoidal texture with a salt region below a smooth random
// boundary; empty and full masks each occur with probability >= 0.05.
// Intensities are quantized to the 1/255 grid so PNG round trips are exact.
std::vector<ImageSample> generate_synthetic(int n, int size, std::uint64_t seed);

// --- input building ------------------------------------------------------------

double relative_depth(double depth, double d_min, double d_max);

// Mirror-extends a grid to target x target; the extra pixels split
// floor/ceil (13 before, 14 after for 101 -> 128).
ImageGrid reflect_pad(const ImageGrid& core, int target);
Index pad_before(Index core, Index target);

// 1 x C x S x S tensor: reflect-padded image, constant relative-depth plane,
// CoordConv x/y ramps over the padded grid, per the configured toggles.
Tensor build_input(const ImageSample& sample, double d_min, double d_max, const InputSpec& spec);

// --- augmentation ----------------------------------------------------------------

ImageSample augment(const ImageSample& sample, SplitRng rng, const AugmentPolicy& policy);

// --- RLE codec --------------------------------------------------------------------

RleMask rle_encode(const MaskGrid& mask);
MaskGrid rle_decode(const RleMask& rle);
std::string rle_to_string(const RleMask& rle);
RleMask rle_from_string(const std::string& text, Index height, Index width);

// --- folds ------------------------------------------------------------------------

// Seeded shuffle then round-robin; fold sizes differ by at most one.
DatasetSplit kfold_split(const std::vector<std::string>& ids, int k, std::uint64_t seed);

// --- submission file ----------------------------------------------------------------

// CSV `id,rle_mask`, UTF-8, LF endings, rows ordered by id.
void write_submission(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, RleMask>>& rows);
std::vector<std::pair<std::string, std::string>> read_submission(const std::filesystem::path& path);

}  // namespace saltseg
