#include "saltseg/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace saltseg {

namespace {

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>(v & 0xff));
}

std::uint32_t read_be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void png_write_gray8(const std::filesystem::path& path, const ImageGrid& img) {
    const Eigen::Index h = img.rows(), w = img.cols();
    if (h < 1 || w < 1) throw ArgumentError("png_write_gray8: empty image");

    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (1 + static_cast<std::size_t>(w)));
    std::size_t pos = 0;
    for (Eigen::Index r = 0; r < h; ++r) {
        raw[pos++] = 0;  // filter: none
        for (Eigen::Index c = 0; c < w; ++c) {
            double v = img(r, c);
            if (v < 0.0) v = 0.0;
            if (v > 1.0) v = 1.0;
            raw[pos++] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw IoError("png_write_gray8: deflate failed");
    }
    comp.resize(comp_len);

    std::vector<unsigned char> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(w));
    put_be32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // no interlace

    std::vector<unsigned char> file(kPngSig, kPngSig + 8);
    append_chunk(file, "IHDR", ihdr);
    append_chunk(file, "IDAT", comp);
    append_chunk(file, "IEND", {});

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!os) throw IoError("write failed for " + path.string());
}

ImageGrid png_read_gray(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kPngSig, 8) != 0) {
        throw FormatError(path.string() + ": not a PNG file");
    }

    std::uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<unsigned char> idat;
    std::size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= file.size()) {
        const std::uint32_t len = read_be32(file.data() + pos);
        if (pos + 12 + len > file.size()) throw FormatError(path.string() + ": truncated chunk");
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const unsigned char* data = file.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw FormatError(path.string() + ": bad IHDR");
            width = read_be32(data);
            height = read_be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || width == 0 || height == 0) {
        throw FormatError(path.string() + ": malformed PNG structure");
    }
    if (bit_depth != 8) {
        throw FormatError(path.string() + ": unsupported bit depth " + std::to_string(bit_depth));
    }
    if (interlace != 0) throw FormatError(path.string() + ": interlaced PNG not supported");
    int channels = 0;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default:
            throw FormatError(path.string() + ": unsupported color type " + std::to_string(color_type));
    }

    const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
    const std::size_t raw_len = static_cast<std::size_t>(height) * (stride + 1);
    std::vector<unsigned char> raw(raw_len);
    uLongf raw_out = static_cast<uLongf>(raw_len);
    const int zrc = uncompress(raw.data(), &raw_out, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_out != raw_len) {
        throw FormatError(path.string() + ": IDAT inflate failed");
    }

    // undo scanline filters in place
    const int bpp = channels;
    std::vector<unsigned char> prev(stride, 0);
    for (std::uint32_t r = 0; r < height; ++r) {
        unsigned char* row = raw.data() + static_cast<std::size_t>(r) * (stride + 1);
        const int filter = row[0];
        unsigned char* cur = row + 1;
        switch (filter) {
            case 0:
                break;
            case 1:
                for (std::size_t i = 0; i < stride; ++i) {
                    const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                    cur[i] = static_cast<unsigned char>((cur[i] + left) & 0xff);
                }
                break;
            case 2:
                for (std::size_t i = 0; i < stride; ++i) {
                    cur[i] = static_cast<unsigned char>((cur[i] + prev[i]) & 0xff);
                }
                break;
            case 3:
                for (std::size_t i = 0; i < stride; ++i) {
                    const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                    cur[i] = static_cast<unsigned char>((cur[i] + (left + prev[i]) / 2) & 0xff);
                }
                break;
            case 4:
                for (std::size_t i = 0; i < stride; ++i) {
                    const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
                    const int ul = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
                    cur[i] = static_cast<unsigned char>((cur[i] + paeth(left, prev[i], ul)) & 0xff);
                }
                break;
            default:
                throw FormatError(path.string() + ": unknown scanline filter " + std::to_string(filter));
        }
        std::memcpy(prev.data(), cur, stride);
    }

    ImageGrid img(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
    for (std::uint32_t r = 0; r < height; ++r) {
        const unsigned char* cur = raw.data() + static_cast<std::size_t>(r) * (stride + 1) + 1;
        for (std::uint32_t c = 0; c < width; ++c) {
            const unsigned char* px = cur + static_cast<std::size_t>(c) * channels;
            double v = 0.0;
            if (channels == 1 || channels == 2) {
                v = px[0] / 255.0;  // alpha ignored
            } else {
                v = (static_cast<double>(px[0]) + px[1] + px[2]) / (3.0 * 255.0);
            }
            img(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return img;
}

void pgm_write_16(const std::filesystem::path& path, const ImageGrid& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "P5\n" << img.cols() << " " << img.rows() << "\n65535\n";
    for (Eigen::Index r = 0; r < img.rows(); ++r) {
        for (Eigen::Index c = 0; c < img.cols(); ++c) {
            double v = img(r, c);
            if (v < 0.0) v = 0.0;
            if (v > 1.0) v = 1.0;
            const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
            const unsigned char b[2] = {static_cast<unsigned char>(q >> 8),
                                        static_cast<unsigned char>(q & 0xff)};
            os.write(reinterpret_cast<const char*>(b), 2);
        }
    }
    if (!os) throw IoError("write failed for " + path.string());
}

ImageGrid hflip(const ImageGrid& img) { return img.rowwise().reverse(); }
MaskGrid hflip(const MaskGrid& mask) { return mask.rowwise().reverse(); }

}  // namespace saltseg
