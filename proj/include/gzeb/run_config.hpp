#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gzeb/embed_net.hpp"
#include "gzeb/psm_net.hpp"
#include "gzeb/synth.hpp"

namespace gzeb {

/// A documented configuration key.
struct ConfigKey {
  std::string name;  // "section.key", or "key" at top level
  std::string default_value;
  std::string doc;
};

/// Every fixed key in output order.
const std::vector<ConfigKey>& config_keys();

/// Resolved `key = value` settings.
///
/// Precedence, lowest first: built-in defaults, the config file, `--set`
/// overrides, dedicated command-line flags. Besides the fixed keys, [data]
/// accepts per-viewer profile overrides `profile.<user>.<field>` with field
/// one of class_weights, center_bias, dispersion, fixations.
class RunConfig {
 public:
  RunConfig();

  /// Parses `key = value` lines with `#` comments and `[section]` headers.
  /// Unknown keys and malformed lines are ConfigErrors naming the line.
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  /// `section.key=value`; an unknown key is a ConfigError.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::string get_string(const std::string& key) const { return get(key); }
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// Defaults applied, in config-file syntax; profile keys last within [data].
  std::string resolved_text() const;

  std::uint64_t seed() const { return get_u64("seed"); }
  std::size_t threads() const;

  SynthOptions synth_options() const;
  std::vector<SynthUserProfile> synth_profiles() const;
  ImageFractions image_fractions() const;
  UserCounts user_counts() const;
  EmbedConfig embed_config() const;
  /// `embedding_dim` comes from the pool, not the config.
  PsmConfig psm_config(std::size_t embedding_dim) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gzeb
