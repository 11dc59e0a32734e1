#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "gzeb/saliency.hpp"

namespace gzeb {

/// A decoded single-channel float plane, top row first.
struct FloatPlane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;
};

/// Grayscale PFM ("Pf"). Writes little-endian (scale -1.0) with the format's
/// bottom-to-top row order; reads either endianness.
void write_pfm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const float> values);
FloatPlane read_pfm(const std::filesystem::path& path);
FloatPlane decode_pfm(std::span<const std::uint8_t> bytes);

/// Binary 8-bit PPM (P6). Values are clamped to [0,1] and rounded to k/255.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
Image decode_ppm(std::span<const std::uint8_t> bytes);

/// Binary 8-bit PGM (P5) preview of a plane in [0,1].
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const float> values);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace gzeb
