#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saltseg/data.hpp"
#include "saltseg/serialize.hpp"
#include "saltseg/tensor.hpp"

namespace saltseg {

// Every architecture knob, mirroring the ablation toggles. The full-scale
// defaults are expressible; desk() is the CPU-sized preset used throughout
// the tests.
struct ModelConfig {
    int base_filters = 32;
    std::array<int, 4> encoder_blocks{3, 4, 6, 3};
    int cardinality = 32;
    bool use_scse = true;
    bool use_attention_gates = true;
    bool use_hypercolumn = true;
    bool use_coordconv = true;
    bool use_depth_channel = true;
    int se_reduction = 16;
    int input_size = 128;
    int first_stride = 1;
    int pool_stride = 2;

    static ModelConfig desk();  // base 8, blocks 1/1/1/1, cardinality 4, 64 px
    static ModelConfig tiny();  // base 4, 16 px, for gradient checks

    void validate() const;
    InputSpec input_spec() const;
    int in_channels() const { return input_spec().channels(); }

    // Stage and decoder widths; shared vocabulary for the builder and forward.
    int stage_width(int s) const { return base_filters << s; }          // s in 1..4
    int decoder_width(int d) const { return base_filters << (d - 1); }  // d in 1..4

    bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

// --- parameter holders -----------------------------------------------------

struct ConvLayer {
    Tensor w;
    Tensor b;  // undefined when the conv feeds a batchnorm
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

struct BnLayer {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
};

struct DenseLayer {
    Tensor w, b;
};

struct ScseParams {
    DenseLayer fc1, fc2;  // channel squeeze-excite
    ConvLayer spatial;    // 1x1 -> 1 spatial gate
};

struct AttentionParams {
    ConvLayer theta, phi, psi;  // additive spatial attention projections
    DenseLayer ch_fc1, ch_fc2;  // channel gate
};

struct Bottleneck {
    ConvLayer reduce;
    BnLayer bn1;
    ConvLayer grouped;
    BnLayer bn2;
    ConvLayer expand;
    BnLayer bn3;
    std::optional<ScseParams> scse;
    std::optional<ConvLayer> proj;
    std::optional<BnLayer> bnp;
};

struct DecoderBlock {
    std::optional<AttentionParams> att;
    ConvLayer conv1;
    BnLayer bn1;
    ConvLayer conv2;
    BnLayer bn2;
    std::optional<ScseParams> scse;
};

// The parameter name set is a pure function of the config: same config gives
// the same names and shapes, and init streams key off the names.
struct SegModel {
    ModelConfig config;
    ConvLayer stem;
    BnLayer stem_bn;
    std::array<std::vector<Bottleneck>, 4> stages;
    ConvLayer center1, center2;
    BnLayer center_bn1, center_bn2;
    std::array<DecoderBlock, 4> decoders;  // index 0 is the deepest (dec4)
    std::array<std::optional<ConvLayer>, 4> dsv;  // hypercolumn heads, index 0 = dsv4
    ConvLayer head;

    std::vector<NamedTensor> parameters() const;  // trainable
    std::vector<NamedTensor> buffers() const;     // batchnorm running stats
    std::vector<NamedTensor> state() const;       // parameters then buffers

    // Copies values into the existing tensors; name or shape mismatch throws.
    void load_state(const std::map<std::string, Tensor>& entries);
};

SegModel build_model(const ModelConfig& config, std::uint64_t seed);

// x * sigmoid(fc2(relu(fc1(GAP x)))) + x * sigmoid(conv1x1 x)
Tensor scse_block(const Tensor& x, const ScseParams& p, int reduction);

// skip * sigmoid(psi(relu(theta(skip) + upsample(phi(gating))))), then the
// scSE-style channel gate on the spatially gated result.
Tensor attention_gate(const Tensor& skip, const Tensor& gating, const AttentionParams& p, int reduction);

// Raw logits N x 1 x S x S. Optional taps collect named activations; the
// batchnorm momentum is overridable so running stats can be rebuilt as a
// cumulative average after weight ensembling.
Tensor forward(const SegModel& model, const Tensor& input, bool train,
               std::map<std::string, Tensor>* taps = nullptr, double bn_momentum = 0.1);

// --- checkpoints -------------------------------------------------------------

struct Checkpoint {
    ModelConfig config;
    std::map<std::string, Tensor> state;
    double d_min = 0.0;
    double d_max = 1.0;
    std::uint64_t seed = 0;
    std::string manifest_hash;
};

// Weight container plus a JSON sidecar (<path>.json) with the full config and
// the training depth range.
void save_checkpoint(const std::filesystem::path& path, const SegModel& model, double d_min, double d_max,
                     std::uint64_t seed, const std::string& manifest_hash);
Checkpoint load_checkpoint(const std::filesystem::path& path);
SegModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace saltseg
