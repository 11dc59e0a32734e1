#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gzeb/saliency.hpp"

namespace gzeb {

enum class Split : std::uint8_t { train, val, test };

std::string_view split_name(Split split);
std::optional<Split> parse_split(std::string_view text);

/// What one user produced on one stimulus.
struct Observation {
  SaliencyMap psm;
  std::optional<FixationSet> fixations;
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Independent partitions of the stimuli and of the users.
struct SplitAssignment {
  std::vector<Split> images;
  std::vector<Split> users;
  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

/// Stimuli, users and their per-pair observations.
///
/// Users and stimuli carry a group id. Within a group every user has an
/// observation for every stimulus; groups only differ after merging datasets
/// that were recorded with different stimulus sets.
struct Dataset {
  std::vector<Stimulus> stimuli;
  std::vector<std::string> users;
  std::vector<std::size_t> stimulus_group;
  std::vector<std::size_t> user_group;
  std::map<std::pair<std::size_t, std::size_t>, Observation> observations;  // (user, stimulus)
  std::map<std::size_t, SaliencyMap> external_usm;                         // by stimulus
  std::optional<SplitAssignment> splits;

  std::size_t user_index(std::string_view id) const;
  std::size_t stimulus_index(std::string_view id) const;

  bool covers(std::size_t user, std::size_t stimulus) const {
    return user_group.at(user) == stimulus_group.at(stimulus);
  }
  const Observation& observation(std::size_t user, std::size_t stimulus) const;
  const SaliencyMap& psm(std::size_t user, std::size_t stimulus) const {
    return observation(user, stimulus).psm;
  }

  /// Stimuli observed by `user`, optionally restricted to some image splits.
  std::vector<std::size_t> stimuli_for(std::size_t user, std::span<const Split> splits_allowed = {}) const;
  std::vector<std::size_t> users_in(Split split) const;
  std::vector<std::size_t> images_in(Split split) const;
  std::size_t expected_observations() const;

  /// Throws DataError/CoverageError when an invariant is broken.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Adds a stimulus / user to group 0 (single-source convenience).
void add_stimulus(Dataset& dataset, Stimulus stimulus, std::size_t group = 0);
void add_user(Dataset& dataset, std::string user_id, std::size_t group = 0);

struct ImageFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct UserCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// Seeded shuffle-and-cut of images and users, each axis independently.
void split_dataset(Dataset& dataset, const ImageFractions& fractions, const UserCounts& counts,
                   std::uint64_t seed);

/// Concatenates users and stimuli of two datasets, keeping each side's
/// coverage group. Colliding user or stimulus ids are rejected.
Dataset merge_datasets(const Dataset& a, const Dataset& b);

/// USM of a stimulus from the PSMs of the given users (those covering it).
SaliencyMap ground_truth_usm(const Dataset& dataset, std::size_t stimulus,
                             std::span<const std::size_t> users);

/// Directory layout:
///   manifest.tsv            stimulus_id, image_file, width, height [, group]
///   users.tsv               user_id [\t group], one per line
///   images/<id>.ppm         binary P6
///   fixations/<u>/<s>.csv   header x,y,duration_ms
///   maps/<u>/<s>.pfm        grayscale little-endian PFM
///   usm/<s>.pfm             optional external USMs
///   splits.tsv              kind, id, split
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Checks an identifier is usable as a file name component.
void validate_id(std::string_view id, std::string_view what);

}  // namespace gzeb
