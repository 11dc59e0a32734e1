#include "gzeb/run_config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "gzeb/checkpoint.hpp"
#include "gzeb/error.hpp"

namespace gzeb {
namespace {

const char* const kProfileFields[] = {"class_weights", "center_bias", "dispersion", "fixations"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  return out;
}

// "data.profile.<user>.<field>"; the user id may not contain dots.
bool is_profile_key(const std::string& key, std::string* user = nullptr, std::string* field = nullptr) {
  static const std::string prefix = "data.profile.";
  if (key.rfind(prefix, 0) != 0) return false;
  const auto rest = key.substr(prefix.size());
  const auto dot = rest.find('.');
  if (dot == std::string::npos || dot == 0 || rest.find('.', dot + 1) != std::string::npos) return false;
  const auto f = rest.substr(dot + 1);
  if (std::find(std::begin(kProfileFields), std::end(kProfileFields), f) == std::end(kProfileFields)) return false;
  if (user) *user = rest.substr(0, dot);
  if (field) *field = f;
  return true;
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(fmt::format("config key '{}': '{}' is not a valid number", key, text));
  return value;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", "1", "master seed of every random stream"},
      {"threads", "1", "worker cap; the engine runs single-threaded, so 1 is the only effective value"},

      {"data.n_users", "9", "synthetic viewers"},
      {"data.n_stimuli", "60", "synthetic stimuli"},
      {"data.width", "48", "stimulus width, pixels"},
      {"data.height", "32", "stimulus height, pixels"},
      {"data.n_classes", "3", "blob classes, one dominant class per viewer in rotation"},
      {"data.sigma", "0", "fixation blur sigma in pixels; 0 picks a width-proportional default"},
      {"data.user_prefix", "u", "viewer ids are <prefix><two-digit index>"},
      {"data.train_users", "6", "viewers in the training split"},
      {"data.val_users", "0", "viewers in the validation split"},
      {"data.test_users", "3", "held-out viewers"},
      {"data.image_val_fraction", "0.1", "fraction of stimuli in the validation split"},
      {"data.image_test_fraction", "0.1", "fraction of stimuli in the test split"},

      {"embed.m", "8", "image-PSM pairs per draw"},
      {"embed.dim", "32", "embedding dimension"},
      {"embed.margin", "0.05", "triplet margin"},
      {"embed.users_per_batch", "32", "P users per batch"},
      {"embed.draws_per_user", "8", "K draws per user per batch"},
      {"embed.lr", "0.001", "Adam learning rate"},
      {"embed.dropout", "0.5", "dropout before the final linear layer"},
      {"embed.width", "160", "network input width"},
      {"embed.height", "120", "network input height"},
      {"embed.channels", "16,32,64,128", "widths of the four conv blocks"},
      {"embed.epochs", "50", "training epochs"},
      {"embed.steps_per_epoch", "100", "batches per epoch"},
      {"embed.pool_size", "100", "pool embeddings per user"},

      {"psm.width", "160", "network input width, a multiple of 8"},
      {"psm.height", "120", "network input height, a multiple of 8"},
      {"psm.channels", "32,64,64", "widths of the three trunk blocks"},
      {"psm.n_filters", "16", "filters of the conditioning conv"},
      {"psm.hidden", "256", "hypernetwork hidden width"},
      {"psm.lr", "0.02", "initial SGD learning rate"},
      {"psm.decay_factor", "0.5", "learning rate factor per decay interval"},
      {"psm.decay_every", "25", "decay interval, epochs"},
      {"psm.momentum", "0.9", "SGD momentum"},
      {"psm.weight_decay", "0.0005", "L2 weight decay"},
      {"psm.batch", "32", "samples per batch"},
      {"psm.epochs", "100", "passes over the training samples"},
      {"psm.usm_source", "gt", "gt (mean of training viewers' PSMs) or external (usm/ in the dataset)"},
      {"psm.supervision", "per_map", "per_map (mean of three MSEs) or summed (MSE of the summed maps)"},

      {"eval.protocol", "open", "open (held-out viewers) or closed (training viewers)"},
      {"eval.m_list", "2,4,8", "draw sizes for the accuracy table"},
      {"eval.accuracy_draws", "20", "draws per viewer for the accuracy table"},
      {"eval.previews", "true", "write predicted PSMs as PFM and PGM"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw, section;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    auto line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("{}:{}: unterminated section header", origin, line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "embed" && section != "psm" && section != "eval")
        throw ConfigError(fmt::format("{}:{}: unknown section [{}]", origin, line_no, section));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, line_no));
    const auto key = trim(line.substr(0, eq));
    const auto full = section.empty() ? key : section + "." + key;
    try {
      cfg.set(full, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key) && !is_profile_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config key '" + key + "' is not set");
  return it->second;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
std::size_t RunConfig::get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("config key '{}': '{}' is not a boolean", key, v));
}

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& cell : split_list(get(key))) out.push_back(parse_number<std::size_t>(key, cell));
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& cell : split_list(get(key))) out.push_back(parse_number<double>(key, cell));
  return out;
}

std::size_t RunConfig::threads() const {
  const auto n = get_size("threads");
  if (n == 0) throw ConfigError("threads must be at least 1");
  return n;
}

std::string RunConfig::resolved_text() const {
  std::string out = fmt::format("# resolved configuration; checkpoint format version {}\n", kCheckpointVersion);
  std::string section;
  auto emit_profiles = [&] {
    for (const auto& [k, v] : values_)
      if (is_profile_key(k)) out += fmt::format("{} = {}\n", k.substr(5), v);
  };
  for (const auto& k : config_keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
    if (sec != section) {
      if (section == "data") emit_profiles();
      section = sec;
      out += fmt::format("\n[{}]\n", section);
    }
    out += fmt::format("{} = {}\n", dot == std::string::npos ? k.name : k.name.substr(dot + 1), values_.at(k.name));
  }
  return out;
}

SynthOptions RunConfig::synth_options() const {
  SynthOptions o;
  o.n_stimuli = get_size("data.n_stimuli");
  o.width = get_size("data.width");
  o.height = get_size("data.height");
  o.n_classes = get_size("data.n_classes");
  o.seed = seed();
  o.sigma = get_double("data.sigma");
  if (o.sigma < 0.0) throw ConfigError("data.sigma must be non-negative");
  return o;
}

std::vector<SynthUserProfile> RunConfig::synth_profiles() const {
  const auto o = synth_options();
  auto profiles = random_profiles(get_size("data.n_users"), o.n_classes, o.width, seed(), get("data.user_prefix"));
  for (const auto& [key, value] : values_) {
    std::string user, field;
    if (!is_profile_key(key, &user, &field)) continue;
    auto it = std::find_if(profiles.begin(), profiles.end(), [&](const auto& p) { return p.user_id == user; });
    if (it == profiles.end()) throw ConfigError(fmt::format("config key '{}': no synthetic viewer '{}'", key, user));
    if (field == "class_weights")
      it->class_weights = get_double_list(key);
    else if (field == "center_bias")
      it->center_bias = get_double(key);
    else if (field == "dispersion")
      it->dispersion = get_double(key);
    else
      it->fixations_per_stimulus = get_size(key);
  }
  for (const auto& p : profiles) validate_profile(p, o.n_classes);
  return profiles;
}

ImageFractions RunConfig::image_fractions() const {
  const double val = get_double("data.image_val_fraction"), test = get_double("data.image_test_fraction");
  return {1.0 - val - test, val, test};
}

UserCounts RunConfig::user_counts() const {
  return {get_size("data.train_users"), get_size("data.val_users"), get_size("data.test_users")};
}

EmbedConfig RunConfig::embed_config() const {
  EmbedConfig c;
  c.pairs_per_draw = get_size("embed.m");
  c.embedding_dim = get_size("embed.dim");
  c.margin = get_double("embed.margin");
  c.users_per_batch = get_size("embed.users_per_batch");
  c.draws_per_user = get_size("embed.draws_per_user");
  c.lr = get_double("embed.lr");
  c.dropout = get_double("embed.dropout");
  c.width = get_size("embed.width");
  c.height = get_size("embed.height");
  const auto ch = get_size_list("embed.channels");
  if (ch.size() != 4) throw ConfigError("embed.channels needs 4 comma-separated widths");
  std::copy(ch.begin(), ch.end(), c.channels.begin());
  c.epochs = get_size("embed.epochs");
  c.steps_per_epoch = get_size("embed.steps_per_epoch");
  c.validate();
  return c;
}

PsmConfig RunConfig::psm_config(std::size_t embedding_dim) const {
  PsmConfig c;
  c.width = get_size("psm.width");
  c.height = get_size("psm.height");
  const auto ch = get_size_list("psm.channels");
  if (ch.size() != 3) throw ConfigError("psm.channels needs 3 comma-separated widths");
  std::copy(ch.begin(), ch.end(), c.channels.begin());
  c.n_filters = get_size("psm.n_filters");
  c.hidden = get_size("psm.hidden");
  c.embedding_dim = embedding_dim;
  c.schedule.initial_lr = get_double("psm.lr");
  c.schedule.decay_factor = get_double("psm.decay_factor");
  c.schedule.decay_every = static_cast<unsigned>(get_size("psm.decay_every"));
  c.momentum = get_double("psm.momentum");
  c.weight_decay = get_double("psm.weight_decay");
  c.batch = get_size("psm.batch");
  c.epochs = get_size("psm.epochs");
  c.usm_source = parse_usm_source(get("psm.usm_source"));
  c.supervision = parse_supervision(get("psm.supervision"));
  c.validate();
  return c;
}

}  // namespace gzeb
