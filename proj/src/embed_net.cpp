#include "gzeb/embed_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gzeb/error.hpp"
#include "gzeb/metrics.hpp"
#include "gzeb/optim.hpp"
#include "gzeb/text_io.hpp"

namespace gzeb {

void EmbedConfig::validate() const {
  if (pairs_per_draw < 1 || pairs_per_draw > 64) throw ConfigError("embed: pairs_per_draw must be in [1,64]");
  if (embedding_dim < 1) throw ConfigError("embed: embedding_dim must be positive");
  if (!(margin > 0.0)) throw ConfigError("embed: margin must be positive");
  if (users_per_batch < 2) throw ConfigError("embed: users_per_batch must be at least 2");
  if (draws_per_user < 2) throw ConfigError("embed: draws_per_user must be at least 2 so every anchor has a positive");
  if (!(lr > 0.0)) throw ConfigError("embed: lr must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("embed: dropout must be in [0,1)");
  if (width < 16 || height < 16) throw ConfigError("embed: input must be at least 16x16");
  for (auto c : channels)
    if (c == 0) throw ConfigError("embed: channel widths must be positive");
  if (epochs == 0 || steps_per_epoch == 0) throw ConfigError("embed: epochs and steps_per_epoch must be positive");
}

template <typename T>
EmbedModel<T>::EmbedModel(const EmbedConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed, {hash_string("embed-init")});
  std::size_t in = 4;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t out = config_.channels[i];
    conv_.push_back(params_.create_glorot(fmt::format("embed.conv{}.weight", i), {out, in, 3, 3}, in * 9, out * 9, rng));
    gamma_.push_back(params_.create(fmt::format("embed.bn{}.gamma", i), {out}, T(1)));
    beta_.push_back(params_.create(fmt::format("embed.bn{}.beta", i), {out}, T(0)));
    bn_.emplace_back(out);
    in = out;
  }
  fc_w_ = params_.create_glorot("embed.fc.weight", {config_.embedding_dim, in}, in, config_.embedding_dim, rng);
  fc_b_ = params_.create("embed.fc.bias", {config_.embedding_dim}, T(0));
}

template <typename T>
Tensor<T> EmbedModel<T>::pair_features(const Tensor<T>& x, Mode mode, Rng* rng) {
  if (x.rank() != 4 || x.dim(1) != 4) throw UsageError("embed: pairs must be [N,4,H,W], got " + shape_string(x.dims()));
  Tensor<T> h = x;
  for (std::size_t i = 0; i < 4; ++i)
    h = relu(batchnorm2d(conv2d(h, conv_[i], Tensor<T>(), 2, 1), gamma_[i], beta_[i], bn_[i], mode));
  h = global_avg_pool(h);
  if (mode == Mode::train && config_.dropout > 0.0) {
    if (!rng) throw UsageError("embed: training-mode dropout needs a generator");
    h = dropout(h, config_.dropout, mode, *rng);
  }
  return linear(h, fc_w_, fc_b_);
}

template <typename T>
Tensor<T> EmbedModel<T>::embed(const Tensor<T>& x, std::size_t m, Mode mode, Rng* rng) {
  if (m == 0 || x.rank() == 0 || x.dim(0) % m != 0)
    throw UsageError(fmt::format("embed: {} pairs do not split into draws of {}", x.rank() ? x.dim(0) : 0, m));
  return l2_normalize(group_mean(pair_features(x, mode, rng), m));
}

template <typename T>
std::vector<NamedBuffer<T>> EmbedModel<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    out.push_back({fmt::format("embed.bn{}.running_mean", i), &bn_[i].mean});
    out.push_back({fmt::format("embed.bn{}.running_var", i), &bn_[i].var});
  }
  return out;
}

template class EmbedModel<float>;
template class EmbedModel<double>;

PairInputs prepare_pair_inputs(const Dataset& dataset, std::size_t width, std::size_t height) {
  PairInputs out;
  out.width = width;
  out.height = height;
  for (const auto& s : dataset.stimuli) out.images.push_back(resize_image(s.image, width, height).pixels);
  for (const auto& [key, obs] : dataset.observations) out.psms.emplace(key, resize_map(obs.psm, width, height).values);
  return out;
}

Draw sample_draw(Rng& rng, std::size_t user, std::span<const std::size_t> eligible, std::size_t m) {
  if (eligible.size() < m)
    throw ConfigError(fmt::format("draw of {} pairs requested but only {} images are eligible", m, eligible.size()));
  Draw d{user, {}};
  for (auto i : rng.sample_indices(eligible.size(), m)) d.stimuli.push_back(eligible[i]);
  return d;
}

template <typename T>
Tensor<T> assemble_draws(const PairInputs& inputs, std::span<const Draw> draws) {
  std::size_t pairs = 0;
  for (const auto& d : draws) pairs += d.stimuli.size();
  auto x = Tensor<T>::zeros({pairs, 4, inputs.height, inputs.width});
  T* out = x.data().data();
  for (const auto& d : draws)
    for (auto s : d.stimuli) {
      const auto& img = inputs.images.at(s);
      const auto it = inputs.psms.find({d.user, s});
      if (it == inputs.psms.end()) throw UsageError(fmt::format("no PSM prepared for user {} on stimulus {}", d.user, s));
      out = std::copy(img.begin(), img.end(), out);
      out = std::copy(it->second.begin(), it->second.end(), out);
    }
  return x;
}

template Tensor<float> assemble_draws(const PairInputs&, std::span<const Draw>);
template Tensor<double> assemble_draws(const PairInputs&, std::span<const Draw>);

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

bool draws_share_image(const Draw& x, const Draw& y) {
  for (auto s : x.stimuli)
    if (std::find(y.stimuli.begin(), y.stimuli.end(), s) != y.stimuli.end()) return true;
  return false;
}

}  // namespace

double triplet_loss(std::span<const float> a, std::span<const float> p, std::span<const float> n, double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw UsageError("triplet_loss: embedding sizes differ");
  return std::max(dot(a, n) - dot(a, p) + margin, 0.0);
}

std::vector<Triplet> mine_triplets(std::span<const float> embeddings, std::size_t dim,
                                   std::span<const std::size_t> labels, double margin) {
  const std::size_t n = labels.size();
  if (dim == 0 || embeddings.size() != n * dim) throw UsageError("mine_triplets: embeddings do not match labels");
  std::vector<std::size_t> distinct(labels.begin(), labels.end());
  std::sort(distinct.begin(), distinct.end());
  if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2)
    throw UsageError("mine_triplets: batch needs draws from at least 2 users");

  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sim[i * n + j] = dot(embeddings.subspan(i * dim, dim), embeddings.subspan(j * dim, dim));

  std::vector<Triplet> out;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double sap = sim[a * n + p];
      std::size_t semi = n, hardest = n;
      for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == labels[a]) continue;
        const double san = sim[a * n + k];
        if (hardest == n || san > sim[a * n + hardest]) hardest = k;
        if (san < sap && san > sap - margin && (semi == n || san > sim[a * n + semi])) semi = k;
      }
      const std::size_t neg = semi != n ? semi : hardest;
      if (sim[a * n + neg] - sap + margin > 0.0) out.push_back({a, p, neg});
    }
  return out;
}

std::vector<std::size_t> eligible_stimuli(const Dataset& dataset, std::size_t user, std::span<const std::size_t> images) {
  std::vector<std::size_t> out;
  for (auto s : images)
    if (dataset.covers(user, s)) out.push_back(s);
  return out;
}

std::vector<LossRecord> train_embedding(EmbedModel<float>& model, const Dataset& dataset, const PairInputs& inputs,
                                        std::span<const std::size_t> users, std::span<const std::size_t> images,
                                        const EmbedTrainOptions& options) {
  const auto& cfg = model.config();
  const std::size_t m = cfg.pairs_per_draw;
  if (users.size() < 2) throw ConfigError("train_embedding: need at least 2 training users");
  if (cfg.users_per_batch > users.size())
    throw ConfigError(fmt::format("train_embedding: users_per_batch {} exceeds the {} training users",
                                  cfg.users_per_batch, users.size()));
  std::vector<std::vector<std::size_t>> eligible;
  for (auto u : users) {
    eligible.push_back(eligible_stimuli(dataset, u, images));
    if (eligible.back().size() < 3 * m)
      throw ConfigError(fmt::format("train_embedding: user '{}' has {} training images, draws of {} need at least {}",
                                    dataset.users.at(u), eligible.back().size(), m, 3 * m));
  }

  const std::size_t total = options.max_steps ? options.max_steps : cfg.epochs * cfg.steps_per_epoch;
  const std::size_t first = options.start_epoch * cfg.steps_per_epoch;
  std::vector<LossRecord> curve;
  std::size_t epoch_triplets = 0, epoch_overlaps = 0;
  for (std::size_t step = first; step < total; ++step) {
    const std::size_t epoch = step / cfg.steps_per_epoch;
    Rng batch_rng(options.seed, {hash_string("embed-batch"), options.fixed_batch ? 0 : step});
    std::vector<Draw> draws;
    std::vector<std::size_t> labels;
    for (auto ui : batch_rng.sample_indices(users.size(), cfg.users_per_batch))
      for (std::size_t k = 0; k < cfg.draws_per_user; ++k) {
        draws.push_back(sample_draw(batch_rng, users[ui], eligible[ui], m));
        labels.push_back(users[ui]);
      }

    Rng drop_rng(options.seed, {hash_string("embed-dropout"), step});
    const auto x = assemble_draws<float>(inputs, draws);
    auto e = model.embed(x, m, Mode::train, &drop_rng);
    if (!e.all_finite()) throw NumericalError(fmt::format("embedding training diverged at step {}", step));
    const auto triplets = mine_triplets(e.data(), cfg.embedding_dim, labels, cfg.margin);
    LossRecord rec{step, epoch, cfg.lr, 0.0, triplets.size()};
    if (!triplets.empty()) {
      auto loss = triplet_margin_loss(e, triplets, cfg.margin);
      rec.loss = loss.item();
      if (!std::isfinite(rec.loss)) throw NumericalError(fmt::format("embedding loss is not finite at step {}", step));
      model.params().zero_grad();
      loss.backward();
      adam_step(model.params().all(), AdamOptions{cfg.lr, 0.9, 0.999, 1e-8}, step + 1);
    }
    epoch_triplets += triplets.size();
    // Draws are duplicate-free; across draws of one triplet images may repeat on small corpora.
    for (const auto& t : triplets)
      if (draws_share_image(draws[t.anchor], draws[t.positive]) || draws_share_image(draws[t.anchor], draws[t.negative]) ||
          draws_share_image(draws[t.positive], draws[t.negative]))
        ++epoch_overlaps;
    curve.push_back(rec);
    if (options.on_step) options.on_step(rec);

    if ((step + 1) % cfg.steps_per_epoch == 0 || step + 1 == total) {
      if (epoch_triplets == 0) spdlog::warn("embedding epoch {}: no triplet with positive loss was mined", epoch);
      if (epoch_overlaps > 0)
        spdlog::debug("embedding epoch {}: {} triplets reused an image across draws", epoch, epoch_overlaps);
      epoch_triplets = 0;
      epoch_overlaps = 0;
      if (options.on_epoch_end) options.on_epoch_end(epoch);
    }
  }
  return curve;
}

std::vector<std::vector<float>> embed_draws(EmbedModel<float>& model, const PairInputs& inputs,
                                            std::span<const Draw> draws, std::size_t chunk) {
  NoGradGuard no_grad;
  std::vector<std::vector<float>> out;
  const std::size_t dim = model.config().embedding_dim;
  std::size_t i = 0;
  while (i < draws.size()) {
    const std::size_t m = draws[i].stimuli.size();
    std::size_t j = i;
    while (j < draws.size() && j - i < chunk && draws[j].stimuli.size() == m) ++j;
    const auto e = model.embed(assemble_draws<float>(inputs, draws.subspan(i, j - i)), m, Mode::eval, nullptr);
    for (std::size_t r = 0; r < j - i; ++r) out.emplace_back(e.data().begin() + r * dim, e.data().begin() + (r + 1) * dim);
    i = j;
  }
  return out;
}

EmbeddingPool build_embedding_pool(EmbedModel<float>& model, const Dataset& dataset, const PairInputs& inputs,
                                   std::span<const std::size_t> users, std::span<const std::size_t> images,
                                   std::size_t pool_size, std::size_t m, std::uint64_t seed) {
  if (pool_size == 0) throw ConfigError("pool size must be positive");
  EmbeddingPool pool;
  for (auto u : users) {
    const auto eligible = eligible_stimuli(dataset, u, images);
    if (eligible.size() < m)
      throw ConfigError(fmt::format("user '{}' has {} calibration images, draws need {}", dataset.users.at(u),
                                    eligible.size(), m));
    std::vector<Draw> draws;
    for (std::size_t k = 0; k < pool_size; ++k) {
      Rng rng(seed, {hash_string("pool"), hash_string(dataset.users[u]), k});
      draws.push_back(sample_draw(rng, u, eligible, m));
    }
    const auto vectors = embed_draws(model, inputs, draws);
    auto& entries = pool[dataset.users[u]];
    for (std::size_t k = 0; k < pool_size; ++k) {
      UserEmbedding e{dataset.users[u], vectors[k], {}};
      for (auto s : draws[k].stimuli) e.source_draw.push_back(dataset.stimuli[s].id);
      entries.push_back(std::move(e));
    }
  }
  return pool;
}

std::vector<AccuracyPoint> eval_embedding_accuracy(EmbedModel<float>& model, const Dataset& dataset,
                                                   const PairInputs& inputs, std::span<const std::size_t> users,
                                                   std::span<const std::size_t> images,
                                                   std::span<const std::size_t> m_values,
                                                   std::size_t draws_per_user, std::uint64_t seed) {
  if (draws_per_user < 2) throw ConfigError("accuracy evaluation needs at least 2 draws per user");
  std::vector<AccuracyPoint> out;
  for (auto m : m_values) {
    if (m == 0) throw ConfigError("m must be positive");
    std::vector<Draw> draws;
    std::vector<std::string> labels;
    for (auto u : users) {
      const auto eligible = eligible_stimuli(dataset, u, images);
      if (eligible.size() < m)
        throw ConfigError(fmt::format("m = {} exceeds the {} images available for user '{}'", m, eligible.size(),
                                      dataset.users.at(u)));
      for (std::size_t k = 0; k < draws_per_user; ++k) {
        Rng rng(seed, {hash_string("accuracy"), m, hash_string(dataset.users[u]), k});
        draws.push_back(sample_draw(rng, u, eligible, m));
        labels.push_back(dataset.users[u]);
      }
    }
    out.push_back({m, precision_at_one(embed_draws(model, inputs, draws), labels)});
  }
  return out;
}

std::vector<float> pool_centroid(std::span<const UserEmbedding> entries) {
  if (entries.empty()) throw ConfigError("pool has no embeddings for this user");
  std::vector<double> acc(entries.front().vector.size(), 0.0);
  for (const auto& e : entries) {
    if (e.vector.size() != acc.size()) throw DataError("pool embeddings differ in size");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.vector[i];
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::max(std::sqrt(norm), 1e-12);
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingPool& pool) {
  std::size_t dim = 0;
  for (const auto& [user, entries] : pool)
    if (!entries.empty()) dim = entries.front().vector.size();
  std::string text = "user_id,draw_index";
  for (std::size_t d = 0; d < dim; ++d) text += fmt::format(",dim_{}", d);
  text += "\n";
  for (const auto& [user, entries] : pool)
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (entries[k].vector.size() != dim) throw UsageError("embedding sizes differ within the pool");
      text += fmt::format("{},{}", user, k);
      for (float v : entries[k].vector) text += fmt::format(",{:.9g}", v);
      text += "\n";
    }
  write_text_file(path, text);
}

EmbeddingPool read_embeddings_csv(const std::filesystem::path& path) {
  const auto rows = read_text_rows(path, ',');
  if (rows.empty() || rows.front().cells.size() < 3 || rows.front().cells[0] != "user_id" ||
      rows.front().cells[1] != "draw_index")
    throw FormatError(path.string() + ": expected header user_id,draw_index,dim_0,...", 0);
  const std::size_t dim = rows.front().cells.size() - 2;
  for (std::size_t d = 0; d < dim; ++d)
    if (rows.front().cells[d + 2] != fmt::format("dim_{}", d))
      throw FormatError(path.string() + ": unexpected column '" + rows.front().cells[d + 2] + "'", 0);
  EmbeddingPool pool;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.cells.size() != dim + 2)
      throw FormatError(fmt::format("{}: line {}: expected {} columns", path.string(), row.line, dim + 2), row.offset);
    UserEmbedding e{row.cells[0], std::vector<float>(dim), {}};
    auto& entries = pool[e.user_id];
    char* end = nullptr;
    const long index = std::strtol(row.cells[1].c_str(), &end, 10);
    if (*end != '\0' || index != static_cast<long>(entries.size()))
      throw FormatError(fmt::format("{}: line {}: draw_index out of sequence", path.string(), row.line), row.offset);
    for (std::size_t d = 0; d < dim; ++d) {
      const char* text = row.cells[d + 2].c_str();
      e.vector[d] = std::strtof(text, &end);
      if (end == text || *end != '\0' || !std::isfinite(e.vector[d]))
        throw FormatError(fmt::format("{}: line {}: invalid value '{}'", path.string(), row.line, row.cells[d + 2]),
                          row.offset);
    }
    entries.push_back(std::move(e));
  }
  return pool;
}

}  // namespace gzeb
