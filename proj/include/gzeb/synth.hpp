#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gzeb/dataset.hpp"

namespace gzeb {

/// Gaze behaviour of one synthetic viewer.
struct SynthUserProfile {
  std::string user_id;
  double center_bias = 0.1;           // probability a fixation ignores the blobs
  std::vector<double> class_weights;  // one per blob class, non-negative, sum 1
  double dispersion = 2.0;            // std of fixation scatter around a blob centre, pixels
  std::size_t fixations_per_stimulus = 16;
  std::uint64_t sample_seed = 0;      // drives this viewer's fixation draws
};

struct SynthOptions {
  std::size_t n_stimuli = 40;
  std::size_t width = 48;
  std::size_t height = 32;
  std::size_t n_classes = 4;
  std::uint64_t seed = 1;  // drives stimulus layout
  double sigma = 0.0;      // render blur; 0 selects default_sigma(width)
};

/// Throws ConfigError naming the profile when it cannot be sampled from.
void validate_profile(const SynthUserProfile& profile, std::size_t n_classes);

/// Stimuli made of coloured class blobs on a noisy gray background. Every
/// class appears at least once per stimulus. Each viewer's fixations fall on
/// blobs picked by class preference, or near the centre with probability
/// `center_bias`.
Dataset synth_generate(std::span<const SynthUserProfile> profiles, const SynthOptions& options);

/// Profiles with a dominant class (rotating through the classes), random
/// secondary weights, centre bias, dispersion and fixation count.
std::vector<SynthUserProfile> random_profiles(std::size_t n_users, std::size_t n_classes, std::size_t width,
                                              std::uint64_t seed, const std::string& prefix = "u");

/// RGB colour of a blob class: evenly spaced hues at full saturation.
void class_color(std::size_t cls, std::size_t n_classes, float rgb[3]);

}  // namespace gzeb
