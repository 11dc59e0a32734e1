#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gzeb {

/// Single-channel row-major float plane. The tag keeps saliency maps in [0,1]
/// and signed discrepancy maps in [-1,1] from being mixed up.
template <class Tag>
struct GridMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  GridMap() = default;
  GridMap(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), values(w * h, fill) {}
  GridMap(std::size_t w, std::size_t h, std::vector<float> v) : width(w), height(h), values(std::move(v)) {}

  float& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  std::size_t size() const { return values.size(); }
  bool same_dims(std::size_t w, std::size_t h) const { return width == w && height == h; }
  template <class Other>
  bool same_dims(const GridMap<Other>& o) const {
    return width == o.width && height == o.height;
  }

  friend bool operator==(const GridMap&, const GridMap&) = default;
};

struct SaliencyTag {};
struct DiscrepancyTag {};

/// Max-normalized attention map with values in [0,1].
using SaliencyMap = GridMap<SaliencyTag>;
/// PSM minus USM, values in [-1,1].
using DiscrepancyMap = GridMap<DiscrepancyTag>;

/// 3-channel planar image [3][H][W] with values in [0,1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(3 * w * h, 0.0f) {}
  float& at(std::size_t c, std::size_t x, std::size_t y) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t x, std::size_t y) const { return pixels[(c * height + y) * width + x]; }
  friend bool operator==(const Image&, const Image&) = default;
};

struct Stimulus {
  std::string id;
  Image image;
  friend bool operator==(const Stimulus&, const Stimulus&) = default;
};

struct Fixation {
  double x = 0.0;  // pixels
  double y = 0.0;
  double duration_ms = 0.0;
  friend bool operator==(const Fixation&, const Fixation&) = default;
};

struct FixationSet {
  std::string user_id;
  std::string stimulus_id;
  std::vector<Fixation> points;
  friend bool operator==(const FixationSet&, const FixationSet&) = default;
};

/// Default rendering blur, width / 32 pixels.
inline double default_sigma(std::size_t width) { return static_cast<double>(width) / 32.0; }

/// Duration-weighted fixation histogram blurred by an isotropic Gaussian
/// (truncated at 3 sigma), then max-normalized.
SaliencyMap render_psm(const FixationSet& fixations, std::size_t width, std::size_t height, double sigma);

/// Pixelwise mean of the maps, re-max-normalized.
SaliencyMap aggregate_usm(std::span<const SaliencyMap> psms);

/// psm - usm. Stored maps live on the 2^-24 grid (see max_normalize), so the
/// difference is exact and usm + result == psm holds bit for bit.
DiscrepancyMap discrepancy_map(const SaliencyMap& psm, const SaliencyMap& usm);

/// Divide by the maximum and snap to multiples of 2^-24. All-zero maps are
/// returned unchanged.
void max_normalize(SaliencyMap& map);

enum class ResizeMode { automatic, area, bilinear };

/// Separable resampling of one plane. `automatic` uses area averaging on axes
/// that shrink and bilinear interpolation (half-pixel centres) on axes that grow.
std::vector<float> resize_plane(std::span<const float> values, std::size_t in_w, std::size_t in_h,
                                std::size_t out_w, std::size_t out_h,
                                ResizeMode mode = ResizeMode::automatic);

/// Resampled and re-max-normalized.
SaliencyMap resize_map(const SaliencyMap& map, std::size_t out_w, std::size_t out_h,
                       ResizeMode mode = ResizeMode::automatic);

Image resize_image(const Image& image, std::size_t out_w, std::size_t out_h,
                   ResizeMode mode = ResizeMode::automatic);

/// Scales fixation coordinates from one resolution to another.
FixationSet rescale_fixations(const FixationSet& fixations, std::size_t from_w, std::size_t from_h,
                              std::size_t to_w, std::size_t to_h);

/// Sorted unique row-major indices of in-bounds fixated pixels.
std::vector<std::size_t> fixated_pixels(const FixationSet& fixations, std::size_t width, std::size_t height);

/// Positive pixels not exceeded by any 8-neighbour, as pseudo-fixations for
/// maps that come without recorded gaze.
FixationSet local_maxima_fixations(const SaliencyMap& map);

}  // namespace gzeb
