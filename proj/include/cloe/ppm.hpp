#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "cloe/core.hpp"

namespace cloe::ppm {

/// Binary P6 with maxval 255; each channel value is stored as round(255 * v).
/// Only 3-channel images are accepted.
std::string encode(const ImageTensor& img);

/// Parses a P6 stream (maxval 1..255, comments allowed in the header).
/// Throws ParseError carrying the byte offset of the problem.
ImageTensor decode(std::string_view bytes);

void write_file(const std::filesystem::path& path, const ImageTensor& img);
ImageTensor read_file(const std::filesystem::path& path);

/// 8-bit quantization used by the on-disk format.
inline unsigned char quantize(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

}  // namespace cloe::ppm
