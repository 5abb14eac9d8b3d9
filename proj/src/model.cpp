#include "saltseg/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "saltseg/rng.hpp"

namespace saltseg {

using nlohmann::json;

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.base_filters = 8;
    c.encoder_blocks = {1, 1, 1, 1};
    c.cardinality = 4;
    c.se_reduction = 8;
    c.input_size = 64;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.base_filters = 4;
    c.encoder_blocks = {1, 1, 1, 1};
    c.cardinality = 4;
    c.se_reduction = 4;
    c.input_size = 16;
    return c;
}

void ModelConfig::validate() const {
    if (base_filters < 4) {
        throw ConfigError("model.base_filters must be >= 4, got " + std::to_string(base_filters));
    }
    if (cardinality < 1 || base_filters % cardinality != 0) {
        throw ConfigError("model.base_filters (" + std::to_string(base_filters) +
                          ") must be divisible by model.cardinality (" + std::to_string(cardinality) + ")");
    }
    for (int b : encoder_blocks) {
        if (b < 1) throw ConfigError("model.encoder_blocks entries must be >= 1");
    }
    if (first_stride != 1 && first_stride != 2) {
        throw ConfigError("model.first_stride must be 1 or 2, got " + std::to_string(first_stride));
    }
    if (pool_stride != 1 && pool_stride != 2) {
        throw ConfigError("model.pool_stride must be 1 or 2, got " + std::to_string(pool_stride));
    }
    if (se_reduction < 1 || ((use_scse || use_attention_gates) && base_filters % se_reduction != 0)) {
        throw ConfigError("model.se_reduction (" + std::to_string(se_reduction) +
                          ") must divide model.base_filters (" + std::to_string(base_filters) + ")");
    }
    if (use_attention_gates && base_filters % 2 != 0) {
        throw ConfigError("model.base_filters must be even when attention gates are enabled");
    }
    if (input_size < 16 || input_size % first_stride != 0) {
        throw ConfigError("model.input_size must be >= 16 and divisible by first_stride");
    }
    const int s0 = input_size / first_stride;
    if (pool_stride == 2 && s0 % 16 != 0) {
        throw ConfigError("model.input_size / first_stride (" + std::to_string(s0) +
                          ") must be divisible by 16 for four pooling stages");
    }
}

InputSpec ModelConfig::input_spec() const {
    return InputSpec{input_size, use_depth_channel, use_coordconv};
}

std::string model_config_to_json(const ModelConfig& c) {
    json j;
    j["base_filters"] = c.base_filters;
    j["encoder_blocks"] = c.encoder_blocks;
    j["cardinality"] = c.cardinality;
    j["use_scse"] = c.use_scse;
    j["use_attention_gates"] = c.use_attention_gates;
    j["use_hypercolumn"] = c.use_hypercolumn;
    j["use_coordconv"] = c.use_coordconv;
    j["use_depth_channel"] = c.use_depth_channel;
    j["se_reduction"] = c.se_reduction;
    j["input_size"] = c.input_size;
    j["first_stride"] = c.first_stride;
    j["pool_stride"] = c.pool_stride;
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config json: ") + e.what());
    }
    ModelConfig c;
    try {
        c.base_filters = j.at("base_filters").get<int>();
        c.encoder_blocks = j.at("encoder_blocks").get<std::array<int, 4>>();
        c.cardinality = j.at("cardinality").get<int>();
        c.use_scse = j.at("use_scse").get<bool>();
        c.use_attention_gates = j.at("use_attention_gates").get<bool>();
        c.use_hypercolumn = j.at("use_hypercolumn").get<bool>();
        c.use_coordconv = j.at("use_coordconv").get<bool>();
        c.use_depth_channel = j.at("use_depth_channel").get<bool>();
        c.se_reduction = j.at("se_reduction").get<int>();
        c.input_size = j.at("input_size").get<int>();
        c.first_stride = j.at("first_stride").get<int>();
        c.pool_stride = j.at("pool_stride").get<int>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config json: ") + e.what());
    }
    return c;
}

// --- construction ---------------------------------------------------------------

namespace {

ConvLayer make_conv(int co, int ci_per_group, int k, int stride, int padding, int groups, bool bias) {
    ConvLayer l;
    l.w = Tensor::zeros({co, ci_per_group, k, k});
    if (bias) l.b = Tensor::zeros({co});
    l.stride = stride;
    l.padding = padding;
    l.groups = groups;
    return l;
}

BnLayer make_bn(int c) {
    BnLayer l;
    l.gamma = Tensor::zeros({c});
    l.beta = Tensor::zeros({c});
    l.running_mean = Tensor::zeros({c});
    l.running_var = Tensor::zeros({c});
    return l;
}

DenseLayer make_dense(int fo, int fi) {
    DenseLayer l;
    l.w = Tensor::zeros({fo, fi});
    l.b = Tensor::zeros({fo});
    return l;
}

ScseParams make_scse(int c, int r) {
    ScseParams p;
    p.fc1 = make_dense(c / r, c);
    p.fc2 = make_dense(c, c / r);
    p.spatial = make_conv(1, c, 1, 1, 0, 1, true);
    return p;
}

AttentionParams make_attention(int skip_c, int gate_c, int r) {
    AttentionParams p;
    const int att_c = skip_c / 2;
    p.theta = make_conv(att_c, skip_c, 1, 1, 0, 1, true);
    p.phi = make_conv(att_c, gate_c, 1, 1, 0, 1, true);
    p.psi = make_conv(1, att_c, 1, 1, 0, 1, true);
    p.ch_fc1 = make_dense(skip_c / r, skip_c);
    p.ch_fc2 = make_dense(skip_c, skip_c / r);
    return p;
}

using StateFn = std::function<void(const std::string&, const Tensor&, bool)>;

void visit_conv(const std::string& prefix, const ConvLayer& l, const StateFn& f) {
    f(prefix + ".w", l.w, true);
    if (l.b.defined()) f(prefix + ".b", l.b, true);
}

void visit_bn(const std::string& prefix, const BnLayer& l, const StateFn& f) {
    f(prefix + ".gamma", l.gamma, true);
    f(prefix + ".beta", l.beta, true);
    f(prefix + ".mean", l.running_mean, false);
    f(prefix + ".var", l.running_var, false);
}

void visit_dense(const std::string& prefix, const DenseLayer& l, const StateFn& f) {
    f(prefix + ".w", l.w, true);
    f(prefix + ".b", l.b, true);
}

void visit_scse(const std::string& prefix, const ScseParams& p, const StateFn& f) {
    visit_dense(prefix + ".ch.fc1", p.fc1, f);
    visit_dense(prefix + ".ch.fc2", p.fc2, f);
    visit_conv(prefix + ".sp", p.spatial, f);
}

void visit_attention(const std::string& prefix, const AttentionParams& p, const StateFn& f) {
    visit_conv(prefix + ".theta", p.theta, f);
    visit_conv(prefix + ".phi", p.phi, f);
    visit_conv(prefix + ".psi", p.psi, f);
    visit_dense(prefix + ".ch.fc1", p.ch_fc1, f);
    visit_dense(prefix + ".ch.fc2", p.ch_fc2, f);
}

void visit_state(const SegModel& m, const StateFn& f) {
    visit_conv("stem.conv", m.stem, f);
    visit_bn("stem.bn", m.stem_bn, f);
    for (int s = 1; s <= 4; ++s) {
        const auto& stage = m.stages[static_cast<std::size_t>(s - 1)];
        for (std::size_t i = 0; i < stage.size(); ++i) {
            const std::string p = "enc" + std::to_string(s) + ".b" + std::to_string(i);
            const Bottleneck& b = stage[i];
            visit_conv(p + ".reduce", b.reduce, f);
            visit_bn(p + ".bn1", b.bn1, f);
            visit_conv(p + ".grouped", b.grouped, f);
            visit_bn(p + ".bn2", b.bn2, f);
            visit_conv(p + ".expand", b.expand, f);
            visit_bn(p + ".bn3", b.bn3, f);
            if (b.scse) visit_scse(p + ".scse", *b.scse, f);
            if (b.proj) visit_conv(p + ".proj", *b.proj, f);
            if (b.bnp) visit_bn(p + ".bnp", *b.bnp, f);
        }
    }
    visit_conv("center.conv1", m.center1, f);
    visit_bn("center.bn1", m.center_bn1, f);
    visit_conv("center.conv2", m.center2, f);
    visit_bn("center.bn2", m.center_bn2, f);
    for (int d = 4; d >= 1; --d) {
        const DecoderBlock& blk = m.decoders[static_cast<std::size_t>(4 - d)];
        const std::string p = "dec" + std::to_string(d);
        if (blk.att) visit_attention(p + ".att", *blk.att, f);
        visit_conv(p + ".conv1", blk.conv1, f);
        visit_bn(p + ".bn1", blk.bn1, f);
        visit_conv(p + ".conv2", blk.conv2, f);
        visit_bn(p + ".bn2", blk.bn2, f);
        if (blk.scse) visit_scse(p + ".scse", *blk.scse, f);
    }
    for (int d = 4; d >= 1; --d) {
        const auto& head = m.dsv[static_cast<std::size_t>(4 - d)];
        if (head) visit_conv("dsv" + std::to_string(d), *head, f);
    }
    visit_conv("head", m.head, f);
}

Bottleneck make_bottleneck(int in_c, int out_c, int cardinality, bool scse, int r) {
    Bottleneck b;
    const int mid = out_c / 2;
    b.reduce = make_conv(mid, in_c, 1, 1, 0, 1, false);
    b.bn1 = make_bn(mid);
    b.grouped = make_conv(mid, mid / cardinality, 3, 1, 1, cardinality, false);
    b.bn2 = make_bn(mid);
    b.expand = make_conv(out_c, mid, 1, 1, 0, 1, false);
    b.bn3 = make_bn(out_c);
    if (scse) b.scse = make_scse(out_c, r);
    if (in_c != out_c) {
        b.proj = make_conv(out_c, in_c, 1, 1, 0, 1, false);
        b.bnp = make_bn(out_c);
    }
    return b;
}

}  // namespace

SegModel build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    SegModel m;
    m.config = config;
    const int f = config.base_filters;
    const int r = config.se_reduction;

    m.stem = make_conv(f, config.in_channels(), 3, config.first_stride, 1, 1, false);
    m.stem_bn = make_bn(f);

    int in_c = f;
    for (int s = 1; s <= 4; ++s) {
        const int out_c = config.stage_width(s);
        auto& stage = m.stages[static_cast<std::size_t>(s - 1)];
        for (int i = 0; i < config.encoder_blocks[static_cast<std::size_t>(s - 1)]; ++i) {
            stage.push_back(make_bottleneck(i == 0 ? in_c : out_c, out_c, config.cardinality,
                                            config.use_scse, r));
        }
        in_c = out_c;
    }

    const int w4 = config.stage_width(4);
    m.center1 = make_conv(w4, w4, 3, 1, 1, 1, false);
    m.center_bn1 = make_bn(w4);
    m.center2 = make_conv(w4, w4, 3, 1, 1, 1, false);
    m.center_bn2 = make_bn(w4);

    int gate_c = w4;
    for (int d = 4; d >= 1; --d) {
        DecoderBlock blk;
        const int skip_c = d == 1 ? f : config.stage_width(d - 1);
        const int out_c = config.decoder_width(d);
        if (config.use_attention_gates) blk.att = make_attention(skip_c, gate_c, r);
        blk.conv1 = make_conv(out_c, gate_c + skip_c, 3, 1, 1, 1, false);
        blk.bn1 = make_bn(out_c);
        blk.conv2 = make_conv(out_c, out_c, 3, 1, 1, 1, false);
        blk.bn2 = make_bn(out_c);
        if (config.use_scse) blk.scse = make_scse(out_c, r);
        m.decoders[static_cast<std::size_t>(4 - d)] = std::move(blk);
        gate_c = out_c;
    }

    if (config.use_hypercolumn) {
        for (int d = 4; d >= 1; --d) {
            m.dsv[static_cast<std::size_t>(4 - d)] = make_conv(f, config.decoder_width(d), 1, 1, 0, 1, true);
        }
        m.head = make_conv(1, 5 * f, 1, 1, 0, 1, true);
    } else {
        m.head = make_conv(1, config.decoder_width(1), 1, 1, 0, 1, true);
    }

    // name-keyed He-uniform init: a layer's values depend on the config seed
    // and its own name only, not on which other toggles exist
    SplitRng root(seed);
    visit_state(m, [&](const std::string& name, const Tensor& t, bool is_param) {
        Tensor tensor = t;
        tensor.set_requires_grad(is_param);
        auto ends_with = [&name](const char* suffix) {
            const std::size_t n = std::string_view(suffix).size();
            return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
        };
        if (ends_with(".gamma") || ends_with(".var")) {
            tensor.data().setConstant(1.0);
        } else if (ends_with(".w")) {
            const Shape& s = tensor.shape();
            Index fan_in = 1;
            for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
            SplitRng rng = root.fork(fnv1a64(name));
            for (Index i = 0; i < tensor.numel(); ++i) tensor.data()[i] = rng.uniform(-limit, limit);
        }
        // biases, beta and running means stay zero
    });
    return m;
}

std::vector<NamedTensor> SegModel::parameters() const {
    std::vector<NamedTensor> out;
    visit_state(*this, [&](const std::string& name, const Tensor& t, bool is_param) {
        if (is_param) out.emplace_back(name, t);
    });
    return out;
}

std::vector<NamedTensor> SegModel::buffers() const {
    std::vector<NamedTensor> out;
    visit_state(*this, [&](const std::string& name, const Tensor& t, bool is_param) {
        if (!is_param) out.emplace_back(name, t);
    });
    return out;
}

std::vector<NamedTensor> SegModel::state() const {
    std::vector<NamedTensor> out = parameters();
    std::vector<NamedTensor> buf = buffers();
    out.insert(out.end(), buf.begin(), buf.end());
    return out;
}

void SegModel::load_state(const std::map<std::string, Tensor>& entries) {
    std::size_t used = 0;
    visit_state(*this, [&](const std::string& name, const Tensor& t, bool) {
        const auto it = entries.find(name);
        if (it == entries.end()) throw FormatError("checkpoint is missing entry '" + name + "'");
        if (it->second.shape() != t.shape()) {
            throw DimensionError("checkpoint entry '" + name + "' has shape " +
                                 shape_str(it->second.shape()) + ", model expects " + shape_str(t.shape()));
        }
        Tensor dst = t;
        dst.data() = it->second.data();
        ++used;
    });
    if (used != entries.size()) {
        std::map<std::string, bool> known;
        visit_state(*this, [&](const std::string& n, const Tensor&, bool) { known[n] = true; });
        for (const auto& [name, tensor] : entries) {
            if (!known.count(name)) {
                throw FormatError("checkpoint entry '" + name + "' does not belong to this config");
            }
        }
    }
}

// --- forward ------------------------------------------------------------------------

Tensor scse_block(const Tensor& x, const ScseParams& p, int reduction) {
    const Index c = x.dim(1);
    if (c % reduction != 0) {
        throw ConfigError("scse_block: channels " + std::to_string(c) + " not divisible by reduction " +
                          std::to_string(reduction));
    }
    const Index n = x.dim(0);
    Tensor pooled = reshape(global_avg_pool(x), {n, c});
    Tensor cw = sigmoid(dense(relu(dense(pooled, p.fc1.w, &p.fc1.b)), p.fc2.w, &p.fc2.b));
    Tensor cse = mul(x, reshape(cw, {n, c, 1, 1}));
    Tensor sw = sigmoid(conv2d(x, p.spatial.w, &p.spatial.b, 1, 0, 1));
    Tensor sse = mul(x, sw);
    return add(cse, sse);
}

Tensor attention_gate(const Tensor& skip, const Tensor& gating, const AttentionParams& p, int reduction) {
    Tensor ts = conv2d(skip, p.theta.w, &p.theta.b, 1, 0, 1);
    Tensor tg = conv2d(gating, p.phi.w, &p.phi.b, 1, 0, 1);
    if (skip.dim(2) % gating.dim(2) != 0 || skip.dim(3) % gating.dim(3) != 0) {
        throw DimensionError("attention_gate: skip " + shape_str(skip.shape()) +
                             " not an integer upsample of gating " + shape_str(gating.shape()));
    }
    const auto factor = static_cast<int>(skip.dim(2) / gating.dim(2));
    if (factor > 1) tg = bilinear_upsample(tg, factor);
    if (ts.shape() != tg.shape()) {
        throw DimensionError("attention_gate: projected shapes differ: " + shape_str(ts.shape()) + " vs " +
                             shape_str(tg.shape()));
    }
    Tensor alpha = sigmoid(conv2d(relu(add(ts, tg)), p.psi.w, &p.psi.b, 1, 0, 1));
    Tensor gated = mul(skip, alpha);

    const Index n = gated.dim(0), c = gated.dim(1);
    if (c % reduction != 0) {
        throw ConfigError("attention_gate: channels " + std::to_string(c) +
                          " not divisible by reduction " + std::to_string(reduction));
    }
    Tensor pooled = reshape(global_avg_pool(gated), {n, c});
    Tensor cw = sigmoid(dense(relu(dense(pooled, p.ch_fc1.w, &p.ch_fc1.b)), p.ch_fc2.w, &p.ch_fc2.b));
    return mul(gated, reshape(cw, {n, c, 1, 1}));
}

namespace {

Tensor conv_bn_relu(const Tensor& x, const ConvLayer& conv, const BnLayer& bn, bool train,
                    double bn_momentum) {
    Tensor h = conv2d(x, conv.w, conv.b.defined() ? &conv.b : nullptr, conv.stride, conv.padding,
                      conv.groups);
    BnLayer& mbn = const_cast<BnLayer&>(bn);
    return relu(batchnorm2d(h, bn.gamma, bn.beta, mbn.running_mean, mbn.running_var, train, bn_momentum));
}

Tensor bottleneck_forward(const Tensor& x, const Bottleneck& b, int reduction, bool train,
                          double bn_momentum) {
    Tensor h = conv_bn_relu(x, b.reduce, b.bn1, train, bn_momentum);
    h = conv_bn_relu(h, b.grouped, b.bn2, train, bn_momentum);
    h = conv2d(h, b.expand.w, nullptr, 1, 0, 1);
    BnLayer& bn3 = const_cast<BnLayer&>(b.bn3);
    h = batchnorm2d(h, bn3.gamma, bn3.beta, bn3.running_mean, bn3.running_var, train, bn_momentum);
    if (b.scse) h = scse_block(h, *b.scse, reduction);
    Tensor shortcut = x;
    if (b.proj) {
        shortcut = conv2d(x, b.proj->w, nullptr, 1, 0, 1);
        BnLayer& bnp = const_cast<BnLayer&>(*b.bnp);
        shortcut = batchnorm2d(shortcut, bnp.gamma, bnp.beta, bnp.running_mean, bnp.running_var, train,
                               bn_momentum);
    }
    return relu(add(h, shortcut));
}

}  // namespace

Tensor forward(const SegModel& model, const Tensor& input, bool train,
               std::map<std::string, Tensor>* taps, double bn_momentum) {
    const ModelConfig& cfg = model.config;
    if (input.rank() != 4) throw DimensionError("forward: input must be rank 4");
    if (input.dim(1) != cfg.in_channels()) {
        throw DimensionError("forward: expected C_in = " + std::to_string(cfg.in_channels()) +
                             " input channels for the configured planes, got " +
                             std::to_string(input.dim(1)));
    }
    if (input.dim(2) != cfg.input_size || input.dim(3) != cfg.input_size) {
        throw DimensionError("forward: expected " + std::to_string(cfg.input_size) + "x" +
                             std::to_string(cfg.input_size) + " input, got " +
                             std::to_string(input.dim(2)) + "x" + std::to_string(input.dim(3)));
    }
    auto tap = [taps](const std::string& name, const Tensor& t) {
        if (taps) (*taps)[name] = t;
    };

    Tensor h = conv_bn_relu(input, model.stem, model.stem_bn, train, bn_momentum);
    tap("stem.out", h);

    std::array<Tensor, 5> skips;
    skips[0] = h;
    for (int s = 1; s <= 4; ++s) {
        h = cfg.pool_stride == 2 ? maxpool2d(h, 2, 2, 0) : maxpool2d(h, 3, 1, 1);
        for (const Bottleneck& b : model.stages[static_cast<std::size_t>(s - 1)]) {
            h = bottleneck_forward(h, b, cfg.se_reduction, train, bn_momentum);
        }
        skips[static_cast<std::size_t>(s)] = h;
        tap("enc" + std::to_string(s) + ".out", h);
    }

    h = conv_bn_relu(h, model.center1, model.center_bn1, train, bn_momentum);
    h = conv_bn_relu(h, model.center2, model.center_bn2, train, bn_momentum);
    tap("center.out", h);

    std::array<Tensor, 4> dec_out;  // index 0 = dec4
    for (int d = 4; d >= 1; --d) {
        const DecoderBlock& blk = model.decoders[static_cast<std::size_t>(4 - d)];
        Tensor skip = skips[static_cast<std::size_t>(d - 1)];
        if (blk.att) skip = attention_gate(skip, h, *blk.att, cfg.se_reduction);
        const auto factor = static_cast<int>(skip.dim(2) / h.dim(2));
        Tensor up = factor > 1 ? bilinear_upsample(h, factor) : h;
        h = concat({up, skip}, 1);
        h = conv_bn_relu(h, blk.conv1, blk.bn1, train, bn_momentum);
        h = conv_bn_relu(h, blk.conv2, blk.bn2, train, bn_momentum);
        if (blk.scse) h = scse_block(h, *blk.scse, cfg.se_reduction);
        dec_out[static_cast<std::size_t>(4 - d)] = h;
        tap("dec" + std::to_string(d) + ".out", h);
    }

    Tensor features = h;
    if (cfg.use_hypercolumn) {
        std::vector<Tensor> parts{h};
        for (int d = 4; d >= 1; --d) {
            const ConvLayer& c = *model.dsv[static_cast<std::size_t>(4 - d)];
            Tensor dsv = conv2d(dec_out[static_cast<std::size_t>(4 - d)], c.w, &c.b, 1, 0, 1);
            const auto factor = static_cast<int>(h.dim(2) / dsv.dim(2));
            if (factor > 1) dsv = bilinear_upsample(dsv, factor);
            parts.push_back(dsv);
        }
        features = concat(parts, 1);
    }
    Tensor logits = conv2d(features, model.head.w, &model.head.b, 1, 0, 1);
    if (logits.dim(2) != cfg.input_size) {
        logits = bilinear_upsample(logits, static_cast<int>(cfg.input_size / logits.dim(2)));
    }
    tap("logits", logits);
    return logits;
}

// --- checkpoints -----------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const SegModel& model, double d_min, double d_max,
                     std::uint64_t seed, const std::string& manifest_hash) {
    save_weights(path, model.state());
    json j;
    j["model"] = json::parse(model_config_to_json(model.config));
    j["d_min"] = d_min;
    j["d_max"] = d_max;
    j["seed"] = seed;
    j["manifest"] = manifest_hash;
    std::ofstream os(path.string() + ".json", std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + ".json for writing");
    os << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Checkpoint ckpt;
    ckpt.state = to_map(load_weights(path));
    std::ifstream is(path.string() + ".json");
    if (!is) throw IoError("cannot open checkpoint sidecar " + path.string() + ".json");
    std::stringstream buf;
    buf << is.rdbuf();
    json j;
    try {
        j = json::parse(buf.str());
        ckpt.config = model_config_from_json(j.at("model").dump());
        ckpt.d_min = j.at("d_min").get<double>();
        ckpt.d_max = j.at("d_max").get<double>();
        ckpt.seed = j.at("seed").get<std::uint64_t>();
        ckpt.manifest_hash = j.value("manifest", "");
    } catch (const json::exception& e) {
        throw FormatError("checkpoint sidecar " + path.string() + ".json: " + e.what());
    }
    return ckpt;
}

SegModel model_from_checkpoint(const Checkpoint& ckpt) {
    SegModel m = build_model(ckpt.config, 0);
    m.load_state(ckpt.state);
    return m;
}

}  // namespace saltseg
