#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "saltseg/model.hpp"
#include "saltseg/postprocess.hpp"
#include "saltseg/trainer.hpp"

namespace saltseg {

// Everything a run needs, resolved from one declarative key=value file with
// [model], [train], [augment] and [predict] sections. Unknown keys fail fast
// with the offending name; values are range-checked before any work starts.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    PredictionConfig predict;
};

RunConfig parse_config_file(const std::filesystem::path& path);
void apply_config_text(RunConfig& config, const std::string& text, const std::string& source);

// Canonical resolved text (every field explicit); input to the manifest hash.
std::string render_config(const RunConfig& config);

// Reproducibility record: command, seed, inputs and the fully resolved
// config. The hash is stamped into output headers and sidecars.
struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::string resolved_config;

    std::string hash() const;
    std::string to_json() const;
};

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace saltseg
