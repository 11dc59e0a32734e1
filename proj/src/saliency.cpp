#include "gzeb/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gzeb/error.hpp"

namespace gzeb {
namespace {

constexpr double kGrid = 16777216.0;  // 2^24

// Separable Gaussian blur with zero boundary, truncated at 3 sigma.
std::vector<double> gaussian_blur(const std::vector<double>& src, std::size_t w, std::size_t h,
                                  double sigma) {
  if (sigma <= 0.0) return src;
  const auto radius = static_cast<std::ptrdiff_t>(std::floor(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t d = -radius; d <= radius; ++d)
    kernel[static_cast<std::size_t>(d + radius)] = std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));

  const auto W = static_cast<std::ptrdiff_t>(w), H = static_cast<std::ptrdiff_t>(h);
  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        const auto xx = x + d;
        if (xx < 0 || xx >= W) continue;
        acc += kernel[static_cast<std::size_t>(d + radius)] * src[static_cast<std::size_t>(y * W + xx)];
      }
      tmp[static_cast<std::size_t>(y * W + x)] = acc;
    }
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        const auto yy = y + d;
        if (yy < 0 || yy >= H) continue;
        acc += kernel[static_cast<std::size_t>(d + radius)] * tmp[static_cast<std::size_t>(yy * W + x)];
      }
      out[static_cast<std::size_t>(y * W + x)] = acc;
    }
  return out;
}

SaliencyMap normalized_from(const std::vector<double>& values, std::size_t w, std::size_t h) {
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, v);
  SaliencyMap map(w, h);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = peak > 0.0 ? values[i] / peak : values[i];
    map.values[i] = static_cast<float>(std::round(v * kGrid) / kGrid);
  }
  return map;
}

// Resample one axis. `stride` steps between consecutive samples along the
// axis, `count` independent lines each starting `line_step` apart.
void resample_axis(const float* src, float* dst, std::size_t in_n, std::size_t out_n,
                   std::size_t count, std::size_t in_line_step, std::size_t out_line_step,
                   std::size_t stride, ResizeMode mode) {
  if (mode == ResizeMode::automatic) mode = out_n < in_n ? ResizeMode::area : ResizeMode::bilinear;
  const double in_d = static_cast<double>(in_n), out_d = static_cast<double>(out_n);
  for (std::size_t line = 0; line < count; ++line) {
    const float* s = src + line * in_line_step;
    float* d = dst + line * out_line_step;
    for (std::size_t i = 0; i < out_n; ++i) {
      double value = 0.0;
      if (in_n == out_n) {
        value = s[i * stride];
      } else if (mode == ResizeMode::area) {
        const double lo = static_cast<double>(i) * in_d / out_d;
        const double hi = static_cast<double>(i + 1) * in_d / out_d;
        double acc = 0.0;
        for (auto j = static_cast<std::size_t>(std::floor(lo)); j < in_n && static_cast<double>(j) < hi; ++j) {
          const double overlap = std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
          if (overlap > 0.0) acc += overlap * s[j * stride];
        }
        value = acc / (hi - lo);
      } else {
        double pos = (static_cast<double>(i) + 0.5) * in_d / out_d - 0.5;
        pos = std::clamp(pos, 0.0, in_d - 1.0);
        const auto j0 = static_cast<std::size_t>(std::floor(pos));
        const std::size_t j1 = std::min(j0 + 1, in_n - 1);
        const double t = pos - static_cast<double>(j0);
        value = (1.0 - t) * s[j0 * stride] + t * s[j1 * stride];
      }
      d[i * stride] = static_cast<float>(value);
    }
  }
}

}  // namespace

void max_normalize(SaliencyMap& map) {
  std::vector<double> v(map.values.begin(), map.values.end());
  map = normalized_from(v, map.width, map.height);
}

SaliencyMap render_psm(const FixationSet& fixations, std::size_t width, std::size_t height, double sigma) {
  if (fixations.points.empty())
    throw DataError("render_psm: no fixations for user '" + fixations.user_id + "' on '" +
                    fixations.stimulus_id + "'");
  if (width == 0 || height == 0) throw DataError("render_psm: empty map size");
  std::vector<double> hist(width * height, 0.0);
  for (const auto& f : fixations.points) {
    if (!(f.x >= 0.0 && f.y >= 0.0 && f.x < static_cast<double>(width) && f.y < static_cast<double>(height)))
      throw DataError("render_psm: fixation (" + std::to_string(f.x) + ", " + std::to_string(f.y) +
                      ") outside " + std::to_string(width) + "x" + std::to_string(height));
    if (!(f.duration_ms > 0.0)) throw DataError("render_psm: fixation duration must be positive");
    const auto x = static_cast<std::size_t>(f.x), y = static_cast<std::size_t>(f.y);
    hist[y * width + x] += f.duration_ms;
  }
  return normalized_from(gaussian_blur(hist, width, height, sigma), width, height);
}

SaliencyMap aggregate_usm(std::span<const SaliencyMap> psms) {
  if (psms.empty()) throw DataError("aggregate_usm: no maps");
  const auto w = psms.front().width, h = psms.front().height;
  std::vector<double> acc(w * h, 0.0);
  for (const auto& m : psms) {
    if (!m.same_dims(w, h)) throw DataError("aggregate_usm: map dimensions differ");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values[i];
  }
  for (auto& v : acc) v /= static_cast<double>(psms.size());
  return normalized_from(acc, w, h);
}

DiscrepancyMap discrepancy_map(const SaliencyMap& psm, const SaliencyMap& usm) {
  if (!psm.same_dims(usm)) throw DataError("discrepancy_map: map dimensions differ");
  DiscrepancyMap out(psm.width, psm.height);
  for (std::size_t i = 0; i < psm.size(); ++i) out.values[i] = psm.values[i] - usm.values[i];
  return out;
}

std::vector<float> resize_plane(std::span<const float> values, std::size_t in_w, std::size_t in_h,
                                std::size_t out_w, std::size_t out_h, ResizeMode mode) {
  if (out_w == 0 || out_h == 0) throw UsageError("resize: output size must be at least 1x1");
  if (values.size() != in_w * in_h) throw UsageError("resize: plane size does not match dims");
  std::vector<float> rows(out_w * in_h);
  resample_axis(values.data(), rows.data(), in_w, out_w, in_h, in_w, out_w, 1, mode);
  std::vector<float> out(out_w * out_h);
  resample_axis(rows.data(), out.data(), in_h, out_h, out_w, 1, 1, out_w, mode);
  return out;
}

SaliencyMap resize_map(const SaliencyMap& map, std::size_t out_w, std::size_t out_h, ResizeMode mode) {
  SaliencyMap out(out_w, out_h, resize_plane(map.values, map.width, map.height, out_w, out_h, mode));
  max_normalize(out);
  return out;
}

Image resize_image(const Image& image, std::size_t out_w, std::size_t out_h, ResizeMode mode) {
  Image out(out_w, out_h);
  const std::size_t in_plane = image.width * image.height, out_plane = out_w * out_h;
  for (std::size_t c = 0; c < 3; ++c) {
    auto plane = resize_plane(std::span<const float>(image.pixels).subspan(c * in_plane, in_plane),
                              image.width, image.height, out_w, out_h, mode);
    std::copy(plane.begin(), plane.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(c * out_plane));
  }
  return out;
}

FixationSet rescale_fixations(const FixationSet& fixations, std::size_t from_w, std::size_t from_h,
                              std::size_t to_w, std::size_t to_h) {
  FixationSet out = fixations;
  const double sx = static_cast<double>(to_w) / static_cast<double>(from_w);
  const double sy = static_cast<double>(to_h) / static_cast<double>(from_h);
  for (auto& f : out.points) {
    f.x *= sx;
    f.y *= sy;
  }
  return out;
}

std::vector<std::size_t> fixated_pixels(const FixationSet& fixations, std::size_t width, std::size_t height) {
  std::vector<std::size_t> out;
  for (const auto& f : fixations.points) {
    if (!(f.x >= 0.0 && f.y >= 0.0)) continue;
    const auto x = static_cast<std::size_t>(f.x), y = static_cast<std::size_t>(f.y);
    if (x >= width || y >= height) continue;
    out.push_back(y * width + x);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

FixationSet local_maxima_fixations(const SaliencyMap& map) {
  FixationSet out;
  const auto W = static_cast<std::ptrdiff_t>(map.width), H = static_cast<std::ptrdiff_t>(map.height);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const float v = map.values[static_cast<std::size_t>(y * W + x)];
      if (v <= 0.0f) continue;
      bool peak = true;
      for (std::ptrdiff_t dy = -1; dy <= 1 && peak; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const auto xx = x + dx, yy = y + dy;
          if ((dx == 0 && dy == 0) || xx < 0 || yy < 0 || xx >= W || yy >= H) continue;
          if (map.values[static_cast<std::size_t>(yy * W + xx)] > v) {
            peak = false;
            break;
          }
        }
      if (peak) out.points.push_back({static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, 1.0});
    }
  return out;
}

}  // namespace gzeb
