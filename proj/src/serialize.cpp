#include "saltseg/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace saltseg {

namespace {

constexpr char kMagic[5] = {'S', 'S', 'E', 'G', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& is, const char* what) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw FormatError(std::string("weight container: truncated ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
}

double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is, "payload");
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 5);
    put_u64(os, entries.size());
    for (const auto& [name, t] : entries) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, t.shape().size());
        for (Index d : t.shape()) put_u64(os, static_cast<std::uint64_t>(d));
        for (Index i = 0; i < t.numel(); ++i) put_f64(os, t.data()[i]);
    }
    if (!os) throw IoError("write failed for " + path.string());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0) {
        throw FormatError(path.string() + ": not a SSEG1 weight container");
    }
    const std::uint64_t count = get_u64(is, "entry count");
    std::vector<NamedTensor> entries;
    entries.reserve(count);
    for (std::uint64_t e = 0; e < count; ++e) {
        const std::uint64_t name_len = get_u64(is, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw FormatError(path.string() + ": truncated entry name");
        const std::uint64_t rank = get_u64(is, "rank");
        if (rank > 4) throw FormatError(path.string() + ": entry " + name + " has rank > 4");
        Shape shape(rank);
        Index numel = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            shape[i] = static_cast<Index>(get_u64(is, "dim"));
            if (shape[i] <= 0) throw FormatError(path.string() + ": entry " + name + " has bad dim");
            numel *= shape[i];
        }
        Array data(numel);
        for (Index i = 0; i < numel; ++i) data[i] = get_f64(is);
        entries.emplace_back(std::move(name), Tensor::from_data(std::move(data), std::move(shape), false));
    }
    return entries;
}

std::map<std::string, Tensor> to_map(const std::vector<NamedTensor>& entries) {
    std::map<std::string, Tensor> m;
    for (const auto& [name, t] : entries) m.emplace(name, t);
    return m;
}

}  // namespace saltseg
