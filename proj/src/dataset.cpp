#include "gzeb/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "gzeb/error.hpp"
#include "gzeb/image_io.hpp"
#include "gzeb/rng.hpp"
#include "gzeb/text_io.hpp"

namespace gzeb {
namespace fs = std::filesystem;

namespace {

using Row = TextRow;

std::size_t parse_count(const std::string& text, const fs::path& path, const Row& row, const char* what) {
  char* end = nullptr;
  const long v = std::strtol(text.c_str(), &end, 10);
  if (text.empty() || *end != '\0' || v < 0)
    throw FormatError(fmt::format("{}: line {}: invalid {} '{}'", path.string(), row.line, what, text), row.offset);
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& text, const fs::path& path, const Row& row, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0' || !std::isfinite(v))
    throw FormatError(fmt::format("{}: line {}: invalid {} '{}'", path.string(), row.line, what, text), row.offset);
  return v;
}

void expect_header(const std::vector<Row>& rows, const fs::path& path, std::initializer_list<const char*> names,
                   std::size_t optional_tail) {
  if (rows.empty() || rows.front().offset != 0) throw FormatError(path.string() + ": missing header line", 0);
  const auto& cells = rows.front().cells;
  const std::size_t required = names.size() - optional_tail;
  bool ok = cells.size() >= required && cells.size() <= names.size();
  for (std::size_t i = 0; ok && i < cells.size(); ++i) ok = cells[i] == *(names.begin() + i);
  if (!ok) {
    std::string want;
    for (const char* n : names) want += want.empty() ? n : std::string(",") + n;
    throw FormatError(path.string() + ": unexpected header, expected columns " + want, 0);
  }
}

SaliencyMap load_map(const fs::path& path, std::size_t w, std::size_t h) {
  const FloatPlane plane = read_pfm(path);
  if (plane.width != w || plane.height != h)
    throw DataError(fmt::format("{}: map is {}x{}, stimulus is {}x{}", path.string(), plane.width, plane.height, w, h));
  float lo = 1.0f, hi = 0.0f;
  for (float v : plane.values) {
    if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite map value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo < 0.0f || std::abs(hi - 1.0f) > 1e-6f)
    throw DataError(fmt::format("{}: map violates storage convention (min {}, max {})", path.string(), lo, hi));
  SaliencyMap map(w, h, plane.values);
  max_normalize(map);
  return map;
}

std::vector<std::size_t> indices_of(const std::vector<Split>& assignment, Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == split) out.push_back(i);
  return out;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  return std::nullopt;
}

void validate_id(std::string_view id, std::string_view what) {
  const bool ok = !id.empty() && id.front() != '.' &&
                  std::all_of(id.begin(), id.end(), [](char c) {
                    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                           c == '_' || c == '-' || c == '.';
                  });
  if (!ok) throw DataError(fmt::format("invalid {} id '{}': use letters, digits, '_', '-', '.'", what, id));
}

std::size_t Dataset::user_index(std::string_view id) const {
  const auto it = std::find(users.begin(), users.end(), id);
  if (it == users.end()) throw DataError(fmt::format("unknown user '{}'", id));
  return static_cast<std::size_t>(it - users.begin());
}

std::size_t Dataset::stimulus_index(std::string_view id) const {
  const auto it = std::find_if(stimuli.begin(), stimuli.end(), [&](const Stimulus& s) { return s.id == id; });
  if (it == stimuli.end()) throw DataError(fmt::format("unknown stimulus '{}'", id));
  return static_cast<std::size_t>(it - stimuli.begin());
}

const Observation& Dataset::observation(std::size_t user, std::size_t stimulus) const {
  const auto it = observations.find({user, stimulus});
  if (it == observations.end()) throw CoverageError(users.at(user), stimuli.at(stimulus).id);
  return it->second;
}

std::vector<std::size_t> Dataset::stimuli_for(std::size_t user, std::span<const Split> splits_allowed) const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < stimuli.size(); ++s) {
    if (!covers(user, s)) continue;
    if (!splits_allowed.empty()) {
      if (!splits) throw UsageError("dataset has no split assignment");
      if (std::find(splits_allowed.begin(), splits_allowed.end(), splits->images[s]) == splits_allowed.end())
        continue;
    }
    out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> Dataset::users_in(Split split) const {
  if (!splits) throw UsageError("dataset has no split assignment");
  return indices_of(splits->users, split);
}

std::vector<std::size_t> Dataset::images_in(Split split) const {
  if (!splits) throw UsageError("dataset has no split assignment");
  return indices_of(splits->images, split);
}

std::size_t Dataset::expected_observations() const {
  std::size_t n = 0;
  for (std::size_t u = 0; u < users.size(); ++u)
    for (std::size_t s = 0; s < stimuli.size(); ++s) n += covers(u, s) ? 1 : 0;
  return n;
}

void Dataset::validate() const {
  if (stimulus_group.size() != stimuli.size() || user_group.size() != users.size())
    throw DataError("dataset group tables do not match users/stimuli");
  std::set<std::string_view> seen;
  for (const auto& s : stimuli) {
    validate_id(s.id, "stimulus");
    if (!seen.insert(s.id).second) throw DataError("duplicate stimulus id '" + s.id + "'");
    if (s.image.pixels.size() != 3 * s.image.width * s.image.height || s.image.width == 0 || s.image.height == 0)
      throw DataError("stimulus '" + s.id + "' has an inconsistent image buffer");
    for (float v : s.image.pixels)
      if (!(v >= 0.0f && v <= 1.0f)) throw DataError("stimulus '" + s.id + "' has pixel values outside [0,1]");
  }
  seen.clear();
  for (const auto& u : users) {
    validate_id(u, "user");
    if (!seen.insert(u).second) throw DataError("duplicate user id '" + u + "'");
  }
  for (std::size_t u = 0; u < users.size(); ++u)
    for (std::size_t s = 0; s < stimuli.size(); ++s) {
      if (!covers(u, s)) continue;
      const auto& obs = observation(u, s);
      const auto& img = stimuli[s].image;
      if (!obs.psm.same_dims(img.width, img.height))
        throw DataError(fmt::format("map for ({}, {}) does not match the stimulus size", users[u], stimuli[s].id));
      if (obs.fixations && (obs.fixations->user_id != users[u] || obs.fixations->stimulus_id != stimuli[s].id))
        throw DataError(fmt::format("fixations stored for ({}, {}) are labelled ({}, {})", users[u], stimuli[s].id,
                                    obs.fixations->user_id, obs.fixations->stimulus_id));
    }
  if (observations.size() != expected_observations())
    throw DataError("dataset holds observations for uncovered (user, stimulus) pairs");
  if (splits && (splits->images.size() != stimuli.size() || splits->users.size() != users.size()))
    throw DataError("split assignment does not match the dataset");
}

void add_stimulus(Dataset& dataset, Stimulus stimulus, std::size_t group) {
  dataset.stimuli.push_back(std::move(stimulus));
  dataset.stimulus_group.push_back(group);
}

void add_user(Dataset& dataset, std::string user_id, std::size_t group) {
  dataset.users.push_back(std::move(user_id));
  dataset.user_group.push_back(group);
}

void split_dataset(Dataset& dataset, const ImageFractions& fractions, const UserCounts& counts,
                   std::uint64_t seed) {
  for (double f : {fractions.train, fractions.val, fractions.test})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("image split fractions must lie in [0,1]");
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9)
    throw ConfigError("image split fractions must sum to 1");
  const std::size_t n_users = dataset.users.size();
  if (counts.train + counts.val + counts.test != n_users)
    throw ConfigError(fmt::format("user split counts {}+{}+{} do not match the {} users", counts.train, counts.val,
                                  counts.test, n_users));

  const std::size_t n = dataset.stimuli.size();
  const auto n_val = static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(fractions.test * static_cast<double>(n)));
  if (n_val + n_test > n) throw ConfigError("image split fractions exceed the number of stimuli");

  SplitAssignment out;
  out.images.resize(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng(seed, {hash_string("split"), hash_string("image")}).shuffle(order);
  for (std::size_t k = 0; k < n; ++k)
    out.images[order[k]] = k < n - n_val - n_test ? Split::train : (k < n - n_test ? Split::val : Split::test);

  out.users.resize(n_users);
  std::vector<std::size_t> uorder(n_users);
  for (std::size_t i = 0; i < n_users; ++i) uorder[i] = i;
  Rng(seed, {hash_string("split"), hash_string("user")}).shuffle(uorder);
  for (std::size_t k = 0; k < n_users; ++k)
    out.users[uorder[k]] = k < counts.train ? Split::train : (k < counts.train + counts.val ? Split::val : Split::test);
  dataset.splits = std::move(out);
}

Dataset merge_datasets(const Dataset& a, const Dataset& b) {
  for (const auto& u : b.users)
    if (std::find(a.users.begin(), a.users.end(), u) != a.users.end())
      throw DataError("cannot merge datasets: user id '" + u + "' appears in both");
  for (const auto& s : b.stimuli)
    if (std::any_of(a.stimuli.begin(), a.stimuli.end(), [&](const Stimulus& t) { return t.id == s.id; }))
      throw DataError("cannot merge datasets: stimulus id '" + s.id + "' appears in both");

  Dataset out = a;
  std::size_t shift = 0;
  for (auto g : a.stimulus_group) shift = std::max(shift, g + 1);
  for (auto g : a.user_group) shift = std::max(shift, g + 1);
  const std::size_t nu = a.users.size(), ns = a.stimuli.size();
  for (std::size_t s = 0; s < b.stimuli.size(); ++s) add_stimulus(out, b.stimuli[s], b.stimulus_group[s] + shift);
  for (std::size_t u = 0; u < b.users.size(); ++u) add_user(out, b.users[u], b.user_group[u] + shift);
  for (const auto& [key, obs] : b.observations) out.observations[{key.first + nu, key.second + ns}] = obs;
  for (const auto& [s, map] : b.external_usm) out.external_usm[s + ns] = map;
  if (a.splits && b.splits) {
    SplitAssignment merged = *a.splits;
    merged.images.insert(merged.images.end(), b.splits->images.begin(), b.splits->images.end());
    merged.users.insert(merged.users.end(), b.splits->users.begin(), b.splits->users.end());
    out.splits = std::move(merged);
  } else {
    out.splits.reset();
  }
  return out;
}

SaliencyMap ground_truth_usm(const Dataset& dataset, std::size_t stimulus, std::span<const std::size_t> users) {
  std::vector<SaliencyMap> maps;
  for (auto u : users)
    if (dataset.covers(u, stimulus)) maps.push_back(dataset.psm(u, stimulus));
  if (maps.empty())
    throw DataError("no users available to aggregate a USM for stimulus '" + dataset.stimuli.at(stimulus).id + "'");
  return aggregate_usm(maps);
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  const bool grouped = std::any_of(dataset.stimulus_group.begin(), dataset.stimulus_group.end(),
                                   [](std::size_t g) { return g != 0; }) ||
                       std::any_of(dataset.user_group.begin(), dataset.user_group.end(),
                                   [](std::size_t g) { return g != 0; });
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "maps");

  std::string manifest = grouped ? "stimulus_id\timage_file\twidth\theight\tgroup\n"
                                 : "stimulus_id\timage_file\twidth\theight\n";
  for (std::size_t s = 0; s < dataset.stimuli.size(); ++s) {
    const auto& st = dataset.stimuli[s];
    const std::string file = "images/" + st.id + ".ppm";
    write_ppm(dir / file, st.image);
    manifest += fmt::format("{}\t{}\t{}\t{}", st.id, file, st.image.width, st.image.height);
    manifest += grouped ? fmt::format("\t{}\n", dataset.stimulus_group[s]) : "\n";
  }
  write_text_file(dir / "manifest.tsv", manifest);

  std::string users;
  for (std::size_t u = 0; u < dataset.users.size(); ++u)
    users += grouped ? fmt::format("{}\t{}\n", dataset.users[u], dataset.user_group[u]) : dataset.users[u] + "\n";
  write_text_file(dir / "users.tsv", users);

  for (const auto& [key, obs] : dataset.observations) {
    const auto& uid = dataset.users[key.first];
    const auto& sid = dataset.stimuli[key.second].id;
    fs::create_directories(dir / "maps" / uid);
    write_pfm(dir / "maps" / uid / (sid + ".pfm"), obs.psm.width, obs.psm.height, obs.psm.values);
    if (obs.fixations) {
      fs::create_directories(dir / "fixations" / uid);
      std::string csv = "x,y,duration_ms\n";
      for (const auto& f : obs.fixations->points) csv += fmt::format("{:.17g},{:.17g},{:.17g}\n", f.x, f.y, f.duration_ms);
      write_text_file(dir / "fixations" / uid / (sid + ".csv"), csv);
    }
  }

  if (!dataset.external_usm.empty()) {
    fs::create_directories(dir / "usm");
    for (const auto& [s, map] : dataset.external_usm)
      write_pfm(dir / "usm" / (dataset.stimuli[s].id + ".pfm"), map.width, map.height, map.values);
  }

  if (dataset.splits) {
    std::string text = "kind\tid\tsplit\n";
    for (std::size_t s = 0; s < dataset.stimuli.size(); ++s)
      text += fmt::format("image\t{}\t{}\n", dataset.stimuli[s].id, split_name(dataset.splits->images[s]));
    for (std::size_t u = 0; u < dataset.users.size(); ++u)
      text += fmt::format("user\t{}\t{}\n", dataset.users[u], split_name(dataset.splits->users[u]));
    write_text_file(dir / "splits.tsv", text);
  }
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  Dataset ds;

  const fs::path manifest_path = dir / "manifest.tsv";
  const auto manifest = read_text_rows(manifest_path, '\t');
  expect_header(manifest, manifest_path, {"stimulus_id", "image_file", "width", "height", "group"}, 1);
  const std::size_t columns = manifest.front().cells.size();
  for (std::size_t i = 1; i < manifest.size(); ++i) {
    const auto& row = manifest[i];
    if (row.cells.size() != columns)
      throw FormatError(fmt::format("{}: line {}: expected {} columns, found {}", manifest_path.string(), row.line,
                                    columns, row.cells.size()),
                        row.offset);
    Stimulus st;
    st.id = row.cells[0];
    validate_id(st.id, "stimulus");
    const auto w = parse_count(row.cells[2], manifest_path, row, "width");
    const auto h = parse_count(row.cells[3], manifest_path, row, "height");
    st.image = read_ppm(dir / row.cells[1]);
    if (st.image.width != w || st.image.height != h)
      throw DataError(fmt::format("{}: image is {}x{}, manifest says {}x{}", row.cells[1], st.image.width,
                                  st.image.height, w, h));
    const std::size_t group = columns == 5 ? parse_count(row.cells[4], manifest_path, row, "group") : 0;
    add_stimulus(ds, std::move(st), group);
  }

  const fs::path users_path = dir / "users.tsv";
  for (const auto& row : read_text_rows(users_path, '\t')) {
    if (row.cells.empty() || row.cells.size() > 2)
      throw FormatError(fmt::format("{}: line {}: expected user_id [group]", users_path.string(), row.line), row.offset);
    validate_id(row.cells[0], "user");
    add_user(ds, row.cells[0], row.cells.size() == 2 ? parse_count(row.cells[1], users_path, row, "group") : 0);
  }

  for (std::size_t u = 0; u < ds.users.size(); ++u)
    for (std::size_t s = 0; s < ds.stimuli.size(); ++s) {
      if (!ds.covers(u, s)) continue;
      const auto& uid = ds.users[u];
      const auto& st = ds.stimuli[s];
      const fs::path map_path = dir / "maps" / uid / (st.id + ".pfm");
      if (!fs::exists(map_path)) throw CoverageError(uid, st.id);
      Observation obs{load_map(map_path, st.image.width, st.image.height), std::nullopt};
      const fs::path fix_path = dir / "fixations" / uid / (st.id + ".csv");
      if (fs::exists(fix_path)) {
        const auto rows = read_text_rows(fix_path, ',');
        expect_header(rows, fix_path, {"x", "y", "duration_ms"}, 0);
        FixationSet set{uid, st.id, {}};
        for (std::size_t i = 1; i < rows.size(); ++i) {
          const auto& row = rows[i];
          if (row.cells.size() != 3)
            throw FormatError(fmt::format("{}: line {}: expected 3 columns", fix_path.string(), row.line), row.offset);
          Fixation f{parse_real(row.cells[0], fix_path, row, "x"), parse_real(row.cells[1], fix_path, row, "y"),
                     parse_real(row.cells[2], fix_path, row, "duration_ms")};
          if (f.x < 0.0 || f.y < 0.0 || f.x >= static_cast<double>(st.image.width) ||
              f.y >= static_cast<double>(st.image.height) || !(f.duration_ms > 0.0))
            throw DataError(fmt::format("{}: line {}: fixation out of bounds or non-positive duration",
                                        fix_path.string(), row.line));
          set.points.push_back(f);
        }
        obs.fixations = std::move(set);
      }
      ds.observations.emplace(std::make_pair(u, s), std::move(obs));
    }

  if (fs::is_directory(dir / "usm"))
    for (std::size_t s = 0; s < ds.stimuli.size(); ++s) {
      const fs::path p = dir / "usm" / (ds.stimuli[s].id + ".pfm");
      if (fs::exists(p)) ds.external_usm[s] = load_map(p, ds.stimuli[s].image.width, ds.stimuli[s].image.height);
    }

  const fs::path splits_path = dir / "splits.tsv";
  if (fs::exists(splits_path)) {
    const auto rows = read_text_rows(splits_path, '\t');
    expect_header(rows, splits_path, {"kind", "id", "split"}, 0);
    SplitAssignment sa;
    std::vector<bool> img_seen(ds.stimuli.size(), false), user_seen(ds.users.size(), false);
    sa.images.assign(ds.stimuli.size(), Split::train);
    sa.users.assign(ds.users.size(), Split::train);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& row = rows[i];
      if (row.cells.size() != 3)
        throw FormatError(fmt::format("{}: line {}: expected 3 columns", splits_path.string(), row.line), row.offset);
      const auto split = parse_split(row.cells[2]);
      if (!split)
        throw FormatError(fmt::format("{}: line {}: unknown split '{}'", splits_path.string(), row.line, row.cells[2]),
                          row.offset);
      if (row.cells[0] == "image") {
        const auto s = ds.stimulus_index(row.cells[1]);
        sa.images[s] = *split;
        img_seen[s] = true;
      } else if (row.cells[0] == "user") {
        const auto u = ds.user_index(row.cells[1]);
        sa.users[u] = *split;
        user_seen[u] = true;
      } else {
        throw FormatError(fmt::format("{}: line {}: unknown kind '{}'", splits_path.string(), row.line, row.cells[0]),
                          row.offset);
      }
    }
    if (std::find(img_seen.begin(), img_seen.end(), false) != img_seen.end() ||
        std::find(user_seen.begin(), user_seen.end(), false) != user_seen.end())
      throw DataError(splits_path.string() + ": split assignment is incomplete");
    ds.splits = std::move(sa);
  }

  ds.validate();
  return ds;
}

}  // namespace gzeb
