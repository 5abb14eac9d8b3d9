#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace saltseg {

// Error taxonomy. The CLI maps these onto exit codes, everything else
// propagates as a generic failure.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(std::string_view s);

// Thread cap for the per-image parallel loops (prediction, metric
// evaluation). Reads SALTSEG_THREADS once; values < 1 mean 1.
int thread_cap();

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges so
// results land in caller-owned slots; fn must not touch shared mutable state.
void parallel_for_index(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace saltseg
