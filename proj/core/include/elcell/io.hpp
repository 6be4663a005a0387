#pragma once

#include <string>

#include "elcell/image.hpp"

namespace elcell::io {

/// Reads an 8- or 16-bit grayscale PNG or TIFF (by magic bytes, not
/// extension). Intensities are scaled to [0, 1]. TIFF support covers
/// uncompressed single-channel strip layouts, which is what EL tooling
/// typically exports.
GrayImage read_image(const std::string& path);

/// Writes a grayscale PNG. bit_depth is 8 or 16; values are clamped to [0, 1].
void write_png(const std::string& path, const GrayImage& img, int bit_depth = 8);

void write_png(const std::string& path, const BinaryMask& mask);

}  // namespace elcell::io
