#include "gzeb/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>

#include "gzeb/error.hpp"

namespace gzeb {
namespace {

// Netpbm-style header tokenizer: whitespace separated, '#' comments.
class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, const char* kind) : bytes_(bytes), kind_(kind) {}

  std::string token() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) ++pos_;
    if (start == pos_) throw FormatError(std::string(kind_) + ": unexpected end of header", pos_);
    return std::string(reinterpret_cast<const char*>(bytes_.data() + start), pos_ - start);
  }

  std::size_t positive_int(const char* what) {
    const std::size_t at = offset_after_space();
    const std::string t = token();
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0' || v <= 0) throw FormatError(std::string(kind_) + ": invalid " + what + " '" + t + "'", at);
    return static_cast<std::size_t>(v);
  }

  double real(const char* what) {
    const std::size_t at = offset_after_space();
    const std::string t = token();
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (*end != '\0' || !std::isfinite(v) || v == 0.0)
      throw FormatError(std::string(kind_) + ": invalid " + what + " '" + t + "'", at);
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw FormatError(std::string(kind_) + ": missing whitespace after header", pos_);
    return pos_ + 1;
  }

  std::size_t offset_after_space() {
    skip_space_and_comments();
    return pos_;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  const char* kind_;
  std::size_t pos_ = 0;
};

void write_bytes(const std::filesystem::path& path, const std::string& header,
                 const std::vector<std::uint8_t>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw ConfigError("failed writing " + path.string());
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_pfm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const float> values) {
  if (values.size() != width * height) throw UsageError("write_pfm: plane size does not match dims");
  const std::string header = "Pf\n" + std::to_string(width) + " " + std::to_string(height) + "\n-1.0\n";
  std::vector<std::uint8_t> body;
  body.reserve(values.size() * 4);
  for (std::size_t row = height; row-- > 0;) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(values[row * width + x]);
      for (int i = 0; i < 4; ++i) body.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  write_bytes(path, header, body);
}

FloatPlane decode_pfm(std::span<const std::uint8_t> bytes) {
  HeaderReader header(bytes, "pfm");
  const std::string magic = header.token();
  if (magic != "Pf") throw FormatError("pfm: expected grayscale magic 'Pf', found '" + magic + "'", 0);
  FloatPlane plane;
  plane.width = header.positive_int("width");
  plane.height = header.positive_int("height");
  const double scale = header.real("scale");
  const bool little = scale < 0.0;
  const std::size_t start = header.end_of_header();
  const std::size_t need = plane.width * plane.height * 4;
  if (bytes.size() - start < need)
    throw FormatError("pfm: raster truncated, need " + std::to_string(need) + " bytes", bytes.size());
  if (bytes.size() - start > need) throw FormatError("pfm: trailing bytes after raster", start + need);
  plane.values.resize(plane.width * plane.height);
  std::size_t pos = start;
  for (std::size_t row = plane.height; row-- > 0;) {
    for (std::size_t x = 0; x < plane.width; ++x) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) {
        const int shift = little ? 8 * i : 8 * (3 - i);
        bits |= static_cast<std::uint32_t>(bytes[pos + static_cast<std::size_t>(i)]) << shift;
      }
      plane.values[row * plane.width + x] = std::bit_cast<float>(bits);
      pos += 4;
    }
  }
  return plane;
}

FloatPlane read_pfm(const std::filesystem::path& path) {
  try {
    return decode_pfm(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> body;
  body.reserve(3 * image.width * image.height);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) body.push_back(to_byte(image.at(c, x, y)));
  write_bytes(path, header, body);
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  HeaderReader header(bytes, "ppm");
  const std::string magic = header.token();
  if (magic != "P6") throw FormatError("ppm: expected magic 'P6', found '" + magic + "'", 0);
  const auto w = header.positive_int("width");
  const auto h = header.positive_int("height");
  const std::size_t maxval_at = header.offset_after_space();
  const auto maxval = header.positive_int("maxval");
  if (maxval > 255) throw FormatError("ppm: only 8-bit rasters are supported", maxval_at);
  const std::size_t start = header.end_of_header();
  const std::size_t need = 3 * w * h;
  if (bytes.size() - start < need) throw FormatError("ppm: raster truncated", bytes.size());
  Image image(w, h);
  std::size_t pos = start;
  const auto denom = static_cast<float>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) image.at(c, x, y) = static_cast<float>(bytes[pos++]) / denom;
  return image;
}

Image read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const float> values) {
  if (values.size() != width * height) throw UsageError("write_pgm: plane size does not match dims");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> body(values.size());
  std::transform(values.begin(), values.end(), body.begin(), to_byte);
  write_bytes(path, header, body);
}

}  // namespace gzeb
