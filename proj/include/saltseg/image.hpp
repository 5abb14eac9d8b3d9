#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>

#include "saltseg/common.hpp"

namespace saltseg {

// Row-major grids; images carry intensities in [0,1], masks only {0,1}.
using ImageGrid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 8-bit grayscale PNG, no interlace, filter 0 scanlines. Values are clamped
// to [0,1] and quantized to round(v*255); output bytes are deterministic.
void png_write_gray8(const std::filesystem::path& path, const ImageGrid& img);

// Reads 8-bit PNGs of color type 0, 2, 4 or 6; RGB collapses to the channel
// mean. 16-bit, palette and interlaced files are rejected.
ImageGrid png_read_gray(const std::filesystem::path& path);

// 16-bit binary PGM (maxval 65535, big-endian samples) of a [0,1] grid.
void pgm_write_16(const std::filesystem::path& path, const ImageGrid& img);

ImageGrid hflip(const ImageGrid& img);
MaskGrid hflip(const MaskGrid& mask);

}  // namespace saltseg
