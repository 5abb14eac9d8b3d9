#include "saltseg/config.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace saltseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct KeyContext {
    std::string source;
    std::string key;  // section.name
    std::size_t line;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(source + ":" + std::to_string(line) + ": " + key + " " + msg);
    }
};

int parse_int(const KeyContext& ctx, const std::string& v, int lo, int hi) {
    try {
        std::size_t used = 0;
        const long n = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        if (n < lo || n > hi) {
            ctx.fail("must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " + v);
        }
        return static_cast<int>(n);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        ctx.fail("expects an integer, got '" + v + "'");
    }
}

double parse_real(const KeyContext& ctx, const std::string& v, double lo, double hi) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        if (d < lo || d > hi) {
            ctx.fail("must be in [" + fmt(lo) + ", " + fmt(hi) + "], got " + v);
        }
        return d;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        ctx.fail("expects a number, got '" + v + "'");
    }
}

bool parse_bool(const KeyContext& ctx, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    ctx.fail("expects true or false, got '" + v + "'");
}

std::uint64_t parse_u64(const KeyContext& ctx, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return n;
    } catch (const std::exception&) {
        ctx.fail("expects a non-negative integer, got '" + v + "'");
    }
}

std::array<int, 4> parse_blocks(const KeyContext& ctx, const std::string& v) {
    std::array<int, 4> out{};
    std::stringstream ss(v);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 4) ctx.fail("expects exactly 4 comma-separated counts, got '" + v + "'");
        out[static_cast<std::size_t>(i++)] = parse_int(ctx, trim(tok), 1, 64);
    }
    if (i != 4) ctx.fail("expects exactly 4 comma-separated counts, got '" + v + "'");
    return out;
}

void apply_key(RunConfig& c, const KeyContext& ctx, const std::string& value) {
    const std::string& k = ctx.key;
    // [model]
    if (k == "model.base_filters") c.model.base_filters = parse_int(ctx, value, 4, 1024);
    else if (k == "model.encoder_blocks") c.model.encoder_blocks = parse_blocks(ctx, value);
    else if (k == "model.cardinality") c.model.cardinality = parse_int(ctx, value, 1, 256);
    else if (k == "model.use_scse") c.model.use_scse = parse_bool(ctx, value);
    else if (k == "model.use_attention_gates") c.model.use_attention_gates = parse_bool(ctx, value);
    else if (k == "model.use_hypercolumn") c.model.use_hypercolumn = parse_bool(ctx, value);
    else if (k == "model.use_coordconv") c.model.use_coordconv = parse_bool(ctx, value);
    else if (k == "model.use_depth_channel") c.model.use_depth_channel = parse_bool(ctx, value);
    else if (k == "model.se_reduction") c.model.se_reduction = parse_int(ctx, value, 1, 256);
    else if (k == "model.input_size") c.model.input_size = parse_int(ctx, value, 16, 512);
    else if (k == "model.first_stride") c.model.first_stride = parse_int(ctx, value, 1, 2);
    else if (k == "model.pool_stride") c.model.pool_stride = parse_int(ctx, value, 1, 2);
    // [train]
    else if (k == "train.batch_size") c.train.batch_size = parse_int(ctx, value, 1, 4096);
    else if (k == "train.phase1_epochs") c.train.phase1_epochs = parse_int(ctx, value, 0, 100000);
    else if (k == "train.early_stop_patience") c.train.early_stop_patience = parse_int(ctx, value, 1, 100000);
    else if (k == "train.w_bce_phase2") c.train.w_bce_phase2 = parse_real(ctx, value, 0.0, 1e6);
    else if (k == "train.w_lovasz_phase2") c.train.w_lovasz_phase2 = parse_real(ctx, value, 0.0, 1e6);
    else if (k == "train.base_lr") c.train.base_lr = parse_real(ctx, value, 1e-12, 10.0);
    else if (k == "train.max_lr") c.train.max_lr = parse_real(ctx, value, 1e-12, 10.0);
    else if (k == "train.cycle_epochs") c.train.cycle_epochs = parse_int(ctx, value, 1, 100000);
    else if (k == "train.folds") c.train.folds = parse_int(ctx, value, 2, 64);
    else if (k == "train.snapshots_kept") c.train.snapshots_kept = parse_int(ctx, value, 1, 256);
    else if (k == "train.ensemble_alpha") c.train.ensemble_alpha = parse_real(ctx, value, 1e-9, 1.0);
    else if (k == "train.adam_beta1") c.train.adam_beta1 = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "train.adam_beta2") c.train.adam_beta2 = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "train.adam_eps") c.train.adam_eps = parse_real(ctx, value, 1e-16, 1.0);
    else if (k == "train.seed") c.train.seed = parse_u64(ctx, value);
    else if (k == "train.max_epochs") c.train.max_epochs = parse_int(ctx, value, 1, 1000000);
    else if (k == "train.save_snapshots") c.train.save_snapshots = parse_bool(ctx, value);
    // [augment]
    else if (k == "augment.hflip_prob") c.train.augment.hflip_prob = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "augment.vflip_prob") c.train.augment.vflip_prob = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "augment.brightness_prob") c.train.augment.brightness_prob = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "augment.brightness_max_delta")
        c.train.augment.brightness_max_delta = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "augment.shift_prob") c.train.augment.shift_prob = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "augment.max_shift_px") c.train.augment.max_shift_px = parse_int(ctx, value, 0, 512);
    else if (k == "augment.rotate_prob") c.train.augment.rotate_prob = parse_real(ctx, value, 0.0, 1.0);
    else if (k == "augment.max_rotate_deg")
        c.train.augment.max_rotate_deg = parse_real(ctx, value, 0.0, 360.0);
    // [predict]
    else if (k == "predict.threshold") c.predict.threshold = parse_real(ctx, value, 1e-9, 1.0);
    else if (k == "predict.min_component_area")
        c.predict.min_component_area = parse_int(ctx, value, 0, 1000000);
    else if (k == "predict.connectivity") c.predict.connectivity = parse_int(ctx, value, 4, 8);
    else if (k == "predict.tta_hflip") c.predict.tta_hflip = parse_bool(ctx, value);
    else if (k == "predict.tta_average_logits") c.predict.tta_average_logits = parse_bool(ctx, value);
    else ctx.fail("is not a recognized configuration key");
}

}  // namespace

void apply_config_text(RunConfig& config, const std::string& text, const std::string& source) {
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": malformed section '" + t + "'");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (section != "model" && section != "train" && section != "augment" && section != "predict") {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown section [" + section +
                                  "]");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value, got '" + t +
                              "'");
        }
        if (section.empty()) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": key outside any section");
        }
        KeyContext ctx{source, section + "." + trim(t.substr(0, eq)), lineno};
        apply_key(config, ctx, trim(t.substr(eq + 1)));
    }
    // cross-field checks after the whole file is read
    config.model.validate();
    config.train.validate();
    config.predict.validate();
}

RunConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    RunConfig config;
    apply_config_text(config, buf.str(), path.filename().string());
    return config;
}

std::string render_config(const RunConfig& c) {
    std::ostringstream os;
    os << "[model]\n";
    os << "base_filters = " << c.model.base_filters << "\n";
    os << "encoder_blocks = " << c.model.encoder_blocks[0] << "," << c.model.encoder_blocks[1] << ","
       << c.model.encoder_blocks[2] << "," << c.model.encoder_blocks[3] << "\n";
    os << "cardinality = " << c.model.cardinality << "\n";
    os << "use_scse = " << (c.model.use_scse ? "true" : "false") << "\n";
    os << "use_attention_gates = " << (c.model.use_attention_gates ? "true" : "false") << "\n";
    os << "use_hypercolumn = " << (c.model.use_hypercolumn ? "true" : "false") << "\n";
    os << "use_coordconv = " << (c.model.use_coordconv ? "true" : "false") << "\n";
    os << "use_depth_channel = " << (c.model.use_depth_channel ? "true" : "false") << "\n";
    os << "se_reduction = " << c.model.se_reduction << "\n";
    os << "input_size = " << c.model.input_size << "\n";
    os << "first_stride = " << c.model.first_stride << "\n";
    os << "pool_stride = " << c.model.pool_stride << "\n";
    os << "[train]\n";
    os << "batch_size = " << c.train.batch_size << "\n";
    os << "phase1_epochs = " << c.train.phase1_epochs << "\n";
    os << "early_stop_patience = " << c.train.early_stop_patience << "\n";
    os << "w_bce_phase2 = " << fmt(c.train.w_bce_phase2) << "\n";
    os << "w_lovasz_phase2 = " << fmt(c.train.w_lovasz_phase2) << "\n";
    os << "base_lr = " << fmt(c.train.base_lr) << "\n";
    os << "max_lr = " << fmt(c.train.max_lr) << "\n";
    os << "cycle_epochs = " << c.train.cycle_epochs << "\n";
    os << "folds = " << c.train.folds << "\n";
    os << "snapshots_kept = " << c.train.snapshots_kept << "\n";
    os << "ensemble_alpha = " << fmt(c.train.ensemble_alpha) << "\n";
    os << "adam_beta1 = " << fmt(c.train.adam_beta1) << "\n";
    os << "adam_beta2 = " << fmt(c.train.adam_beta2) << "\n";
    os << "adam_eps = " << fmt(c.train.adam_eps) << "\n";
    os << "seed = " << c.train.seed << "\n";
    os << "max_epochs = " << c.train.max_epochs << "\n";
    os << "save_snapshots = " << (c.train.save_snapshots ? "true" : "false") << "\n";
    os << "[augment]\n";
    os << "hflip_prob = " << fmt(c.train.augment.hflip_prob) << "\n";
    os << "vflip_prob = " << fmt(c.train.augment.vflip_prob) << "\n";
    os << "brightness_prob = " << fmt(c.train.augment.brightness_prob) << "\n";
    os << "brightness_max_delta = " << fmt(c.train.augment.brightness_max_delta) << "\n";
    os << "shift_prob = " << fmt(c.train.augment.shift_prob) << "\n";
    os << "max_shift_px = " << c.train.augment.max_shift_px << "\n";
    os << "rotate_prob = " << fmt(c.train.augment.rotate_prob) << "\n";
    os << "max_rotate_deg = " << fmt(c.train.augment.max_rotate_deg) << "\n";
    os << "[predict]\n";
    os << "threshold = " << fmt(c.predict.threshold) << "\n";
    os << "min_component_area = " << c.predict.min_component_area << "\n";
    os << "connectivity = " << c.predict.connectivity << "\n";
    os << "tta_hflip = " << (c.predict.tta_hflip ? "true" : "false") << "\n";
    os << "tta_average_logits = " << (c.predict.tta_average_logits ? "true" : "false") << "\n";
    return os.str();
}

std::string RunManifest::hash() const {
    std::string canonical = "command=" + command + "\nseed=" + std::to_string(seed) + "\n";
    for (const auto& in : inputs) canonical += "input=" + in + "\n";
    canonical += resolved_config;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    return buf;
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["config"] = resolved_config;
    j["hash"] = hash();
    return j.dump(2);
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << manifest.to_json() << "\n";
    if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace saltseg
