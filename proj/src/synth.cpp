#include "gzeb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "gzeb/error.hpp"
#include "gzeb/rng.hpp"

namespace gzeb {
namespace {

struct Blob {
  std::size_t cls;
  double cx, cy, radius;
};

float quantize8(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

std::vector<Blob> layout_blobs(Rng& rng, const SynthOptions& o) {
  const double W = static_cast<double>(o.width), H = static_cast<double>(o.height);
  const double short_side = std::min(W, H);
  std::vector<std::size_t> classes(o.n_classes);
  std::iota(classes.begin(), classes.end(), 0);
  if (rng.bernoulli(0.5)) classes.push_back(rng.below(o.n_classes));
  rng.shuffle(classes);

  std::vector<Blob> blobs;
  for (auto cls : classes) {
    Blob best{cls, W / 2, H / 2, 0.0};
    double best_gap = -1e9;
    // Rejection sampling for a non-overlapping spot; keep the least crowded try.
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double r = short_side * rng.uniform(0.08, 0.14);
      const Blob cand{cls, rng.uniform(r, W - r), rng.uniform(r, H - r), r};
      double gap = 1e9;
      for (const auto& b : blobs) gap = std::min(gap, std::hypot(b.cx - cand.cx, b.cy - cand.cy) - b.radius - cand.radius);
      if (gap > best_gap) {
        best = cand;
        best_gap = gap;
      }
      if (gap >= 1.0) break;
    }
    blobs.push_back(best);
  }
  return blobs;
}

Image paint(Rng& rng, const std::vector<Blob>& blobs, const SynthOptions& o) {
  Image img(o.width, o.height);
  const double base = rng.uniform(0.35, 0.65);
  for (std::size_t y = 0; y < o.height; ++y)
    for (std::size_t x = 0; x < o.width; ++x) {
      double rgb[3] = {base, base, base};
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (const auto& b : blobs) {
        const double d = std::hypot(px - b.cx, py - b.cy);
        const double alpha = std::clamp(b.radius + 0.5 - d, 0.0, 1.0);  // one-pixel soft edge
        if (alpha <= 0.0) continue;
        float col[3];
        class_color(b.cls, o.n_classes, col);
        for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - alpha) * rgb[c] + alpha * col[c];
      }
      for (std::size_t c = 0; c < 3; ++c) img.at(c, x, y) = quantize8(rgb[c] + rng.normal(0.0, 0.03));
    }
  return img;
}

Fixation sample_fixation(Rng& rng, const SynthUserProfile& p, const std::vector<Blob>& blobs,
                         const std::vector<double>& present_weight, double present_total, const SynthOptions& o) {
  const double W = static_cast<double>(o.width), H = static_cast<double>(o.height);
  double mx = W / 2, my = H / 2, sx = 0.15 * W, sy = 0.15 * H;
  if (!(rng.uniform() < p.center_bias) && present_total > 0.0) {
    double pick = rng.uniform() * present_total;
    std::size_t cls = 0;
    while (cls + 1 < present_weight.size() && pick >= present_weight[cls]) pick -= present_weight[cls++];
    while (present_weight[cls] <= 0.0) --cls;  // guards the float remainder at the top end
    std::vector<const Blob*> of_class;
    for (const auto& b : blobs)
      if (b.cls == cls) of_class.push_back(&b);
    const Blob& b = *of_class[rng.below(of_class.size())];
    mx = b.cx;
    my = b.cy;
    sx = sy = p.dispersion;
  }
  Fixation f{};
  for (int attempt = 0; attempt < 16; ++attempt) {
    f.x = rng.normal(mx, sx);
    f.y = rng.normal(my, sy);
    if (f.x >= 0.0 && f.y >= 0.0 && f.x < W && f.y < H) break;
  }
  f.x = std::clamp(f.x, 0.0, std::nextafter(W, 0.0));
  f.y = std::clamp(f.y, 0.0, std::nextafter(H, 0.0));
  f.duration_ms = std::round(rng.uniform(100.0, 500.0));
  return f;
}

}  // namespace

void class_color(std::size_t cls, std::size_t n_classes, float rgb[3]) {
  const double h = 6.0 * static_cast<double>(cls) / static_cast<double>(n_classes);
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double table[6][3] = {{1, f, 0}, {1 - f, 1, 0}, {0, 1, f}, {0, 1 - f, 1}, {f, 0, 1}, {1, 0, 1 - f}};
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(table[sector][c]);
}

void validate_profile(const SynthUserProfile& p, std::size_t n_classes) {
  const auto fail = [&](const std::string& why) {
    throw ConfigError(fmt::format("synthetic profile '{}': {}", p.user_id, why));
  };
  try {
    validate_id(p.user_id, "user");
  } catch (const DataError& e) {
    fail(e.what());
  }
  if (p.class_weights.size() != n_classes)
    fail(fmt::format("{} class weights given, {} classes configured", p.class_weights.size(), n_classes));
  double total = 0.0;
  for (double w : p.class_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("class weights must be finite and non-negative");
    total += w;
  }
  if (total == 0.0) fail("all class preference weights are zero");
  if (std::abs(total - 1.0) > 1e-6) fail(fmt::format("class weights sum to {}, expected 1", total));
  if (!(p.center_bias >= 0.0 && p.center_bias <= 1.0)) fail("center bias must lie in [0,1]");
  if (!(p.dispersion > 0.0) || !std::isfinite(p.dispersion)) fail("dispersion must be positive");
  if (p.fixations_per_stimulus == 0) fail("fixation count must be positive");
}

Dataset synth_generate(std::span<const SynthUserProfile> profiles, const SynthOptions& o) {
  if (profiles.size() < 2) throw ConfigError("synthetic generation needs at least 2 user profiles");
  if (o.n_classes < 2) throw ConfigError("synthetic generation needs at least 2 blob classes");
  if (o.n_stimuli == 0) throw ConfigError("synthetic generation needs at least 1 stimulus");
  if (o.width < 8 || o.height < 8) throw ConfigError("synthetic stimuli must be at least 8x8 pixels");
  std::set<std::string> ids;
  for (const auto& p : profiles) {
    validate_profile(p, o.n_classes);
    if (!ids.insert(p.user_id).second) throw ConfigError("duplicate synthetic user id '" + p.user_id + "'");
  }
  const double sigma = o.sigma > 0.0 ? o.sigma : default_sigma(o.width);

  Dataset ds;
  for (const auto& p : profiles) add_user(ds, p.user_id);
  for (std::size_t s = 0; s < o.n_stimuli; ++s) {
    Rng layout_rng(o.seed, {hash_string("stimulus"), s});
    const auto blobs = layout_blobs(layout_rng, o);
    add_stimulus(ds, Stimulus{fmt::format("s{:04d}", s), paint(layout_rng, blobs, o)});

    for (std::size_t u = 0; u < profiles.size(); ++u) {
      const auto& p = profiles[u];
      std::vector<double> present(o.n_classes, 0.0);
      for (const auto& b : blobs) present[b.cls] = p.class_weights[b.cls];
      const double present_total = std::accumulate(present.begin(), present.end(), 0.0);
      Rng rng(p.sample_seed, {hash_string("fixations"), o.seed, s});
      FixationSet fix{p.user_id, ds.stimuli.back().id, {}};
      for (std::size_t k = 0; k < p.fixations_per_stimulus; ++k)
        fix.points.push_back(sample_fixation(rng, p, blobs, present, present_total, o));
      SaliencyMap psm = render_psm(fix, o.width, o.height, sigma);
      ds.observations.emplace(std::make_pair(u, s), Observation{std::move(psm), std::move(fix)});
    }
  }
  return ds;
}

std::vector<SynthUserProfile> random_profiles(std::size_t n_users, std::size_t n_classes, std::size_t width,
                                              std::uint64_t seed, const std::string& prefix) {
  if (n_classes < 2) throw ConfigError("random profiles need at least 2 classes");
  std::vector<SynthUserProfile> out;
  for (std::size_t u = 0; u < n_users; ++u) {
    Rng rng(seed, {hash_string("profile"), u});
    SynthUserProfile p;
    p.user_id = fmt::format("{}{:02d}", prefix, u);
    const std::size_t dominant = u % n_classes;
    const double main = rng.uniform(0.6, 0.8);
    std::vector<double> rest(n_classes - 1);
    double rest_total = 0.0;
    for (auto& r : rest) rest_total += (r = rng.uniform(0.05, 1.0));
    p.class_weights.assign(n_classes, 0.0);
    for (std::size_t c = 0, k = 0; c < n_classes; ++c)
      p.class_weights[c] = c == dominant ? main : (1.0 - main) * rest[k++] / rest_total;
    p.center_bias = rng.uniform(0.05, 0.25);
    p.dispersion = static_cast<double>(width) * rng.uniform(0.02, 0.05);
    p.fixations_per_stimulus = 12 + rng.below(9);
    p.sample_seed = derive_seed(seed, {hash_string("sample"), u});
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace gzeb
