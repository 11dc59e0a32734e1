#include "gzeb/psm_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gzeb/error.hpp"

namespace gzeb {

std::string conditioning_name(Conditioning c) {
  return c == Conditioning::with_embedding ? "with_embedding" : "without_embedding";
}
Conditioning parse_conditioning(const std::string& s) {
  if (s == "with_embedding") return Conditioning::with_embedding;
  if (s == "without_embedding") return Conditioning::without_embedding;
  throw ConfigError("unknown conditioning '" + s + "' (expected with_embedding or without_embedding)");
}
std::string usm_source_name(UsmSource s) { return s == UsmSource::gt ? "gt" : "external"; }
UsmSource parse_usm_source(const std::string& s) {
  if (s == "gt") return UsmSource::gt;
  if (s == "external") return UsmSource::external;
  throw ConfigError("unknown usm_source '" + s + "' (expected gt or external)");
}
std::string supervision_name(Supervision s) { return s == Supervision::per_map ? "per_map" : "summed"; }
Supervision parse_supervision(const std::string& s) {
  if (s == "per_map") return Supervision::per_map;
  if (s == "summed") return Supervision::summed;
  throw ConfigError("unknown supervision '" + s + "' (expected per_map or summed)");
}
std::string protocol_name(Protocol p) { return p == Protocol::closed ? "closed" : "open"; }
Protocol parse_protocol(const std::string& s) {
  if (s == "closed") return Protocol::closed;
  if (s == "open") return Protocol::open;
  throw UsageError("unknown protocol '" + s + "' (expected closed or open)");
}

void PsmConfig::validate() const {
  if (width == 0 || height == 0 || width % 8 || height % 8)
    throw ConfigError(fmt::format("psm: input {}x{} must be a positive multiple of 8 on both axes", width, height));
  for (auto c : channels)
    if (c == 0) throw ConfigError("psm: channel widths must be positive");
  if (n_filters == 0 || hidden == 0 || embedding_dim == 0) throw ConfigError("psm: layer widths must be positive");
  schedule.validate();
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("psm: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("psm: weight_decay must be non-negative");
  if (batch == 0 || epochs == 0) throw ConfigError("psm: batch and epochs must be positive");
}

template <typename T>
PsmModel<T>::PsmModel(const PsmConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed, {hash_string("psm-init")});
  std::size_t in = 4;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = config_.channels[i];
    trunk_w_.push_back(params_.create_glorot(fmt::format("psm.trunk{}.weight", i), {out, in, 3, 3}, in * 9, out * 9, rng));
    gamma_.push_back(params_.create(fmt::format("psm.bn{}.gamma", i), {out}, T(1)));
    beta_.push_back(params_.create(fmt::format("psm.bn{}.beta", i), {out}, T(0)));
    bn_.emplace_back(out);
    in = out;
  }
  const std::size_t nf = config_.n_filters, bank = nf * in * 9;
  if (config_.conditioning == Conditioning::with_embedding) {
    const std::size_t d = config_.embedding_dim, hid = config_.hidden;
    hyper1_w_ = params_.create_glorot("hyper.fc1.weight", {hid, d}, d, hid, rng);
    hyper1_b_ = params_.create("hyper.fc1.bias", {hid}, T(0));
    hyper2_w_ = params_.create_glorot("hyper.fc2.weight", {bank, hid}, hid, bank, rng);
    // Bias starts as an ordinary conv initialization, so the embedding
    // modulates a working filter bank from the first step.
    hyper2_b_ = params_.create_glorot("hyper.fc2.bias", {bank}, in * 9, nf * 9, rng);
  } else {
    cond_w_ = params_.create_glorot("cond.weight", {nf, in, 3, 3}, in * 9, nf * 9, rng);
  }
  cond_b_ = params_.create("cond.bias", {nf}, T(0));
  proj1_w_ = params_.create_glorot("head.proj1.weight", {1, nf, 1, 1}, nf, 1, rng);
  proj1_b_ = params_.create("head.proj1.bias", {1}, T(0));
  conv_a_w_ = params_.create_glorot("head.conv_a.weight", {nf, nf, 3, 3}, nf * 9, nf * 9, rng);
  conv_a_b_ = params_.create("head.conv_a.bias", {nf}, T(0));
  proj2_w_ = params_.create_glorot("head.proj2.weight", {1, nf, 1, 1}, nf, 1, rng);
  proj2_b_ = params_.create("head.proj2.bias", {1}, T(0));
  conv_b_w_ = params_.create_glorot("head.conv_b.weight", {1, nf, 3, 3}, nf * 9, 9, rng);
  conv_b_b_ = params_.create("head.conv_b.bias", {1}, T(0));
}

template <typename T>
Tensor<T> PsmModel<T>::hyper_filters(const Tensor<T>& embeddings) {
  if (config_.conditioning != Conditioning::with_embedding)
    throw UsageError("psm: the model without embedding has no hypernetwork");
  if (embeddings.rank() != 2 || embeddings.dim(1) != config_.embedding_dim)
    throw UsageError(fmt::format("psm: embeddings must be [B,{}], got {}", config_.embedding_dim,
                                 shape_string(embeddings.dims())));
  const auto h = relu(linear(embeddings, hyper1_w_, hyper1_b_));
  return reshape(linear(h, hyper2_w_, hyper2_b_),
                 {embeddings.dim(0), config_.n_filters, config_.channels[2], 3, 3});
}

template <typename T>
PsmOutputs<T> PsmModel<T>::forward(const Tensor<T>& x, const Tensor<T>& embeddings, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != 4 || x.dim(2) != config_.height || x.dim(3) != config_.width)
    throw UsageError(fmt::format("psm: input must be [B,4,{},{}], got {}", config_.height, config_.width,
                                 shape_string(x.dims())));
  Tensor<T> h = x;
  for (std::size_t i = 0; i < 3; ++i)
    h = relu(batchnorm2d(conv2d(h, trunk_w_[i], Tensor<T>(), 2, 1), gamma_[i], beta_[i], bn_[i], mode));

  Tensor<T> f;
  if (config_.conditioning == Conditioning::with_embedding) {
    if (!embeddings.defined() || embeddings.rank() != 2 || embeddings.dim(0) != x.dim(0))
      throw UsageError("psm: one embedding per input row is required");
    const std::size_t d = embeddings.dim(1);
    for (std::size_t r = 0; r < embeddings.dim(0); ++r) {
      double n = 0.0;
      for (std::size_t i = 0; i < d; ++i) n += static_cast<double>(embeddings[r * d + i]) * embeddings[r * d + i];
      if (std::abs(std::sqrt(n) - 1.0) > 1e-3) {
        spdlog::warn("psm: embedding row {} has norm {:.6g}; normalizing", r, std::sqrt(n));
        break;
      }
    }
    // Normalizing unit rows is a no-op up to rounding and keeps the map smooth.
    f = dynamic_conv2d(h, hyper_filters(l2_normalize(embeddings)), 1, 1);
  } else {
    f = conv2d(h, cond_w_, Tensor<T>(), 1, 1);
  }
  f = relu(channel_bias(f, cond_b_));

  PsmOutputs<T> out;
  out.aux1 = tanh(conv2d(f, proj1_w_, proj1_b_, 1, 0));
  const auto a = relu(conv2d(f, conv_a_w_, conv_a_b_, 1, 1));
  out.aux2 = tanh(conv2d(a, proj2_w_, proj2_b_, 1, 0));
  out.main = tanh(conv2d(a, conv_b_w_, conv_b_b_, 1, 1));
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> PsmModel<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    out.push_back({fmt::format("psm.bn{}.running_mean", i), &bn_[i].mean});
    out.push_back({fmt::format("psm.bn{}.running_var", i), &bn_[i].var});
  }
  return out;
}

template class PsmModel<float>;
template class PsmModel<double>;

template <typename T>
Tensor<T> psm_loss(const PsmOutputs<T>& outputs, const Tensor<T>& target, Supervision mode) {
  if (mode == Supervision::summed) return mse_loss(add(add(outputs.aux1, outputs.aux2), outputs.main), target);
  return scale(add(add(mse_loss(outputs.aux1, target), mse_loss(outputs.aux2, target)), mse_loss(outputs.main, target)),
               1.0 / 3.0);
}

template Tensor<float> psm_loss(const PsmOutputs<float>&, const Tensor<float>&, Supervision);
template Tensor<double> psm_loss(const PsmOutputs<double>&, const Tensor<double>&, Supervision);

SaliencyMap reconstruct_psm(const SaliencyMap& usm, const DiscrepancyMap& delta, std::size_t* clamped) {
  if (!usm.same_dims(delta))
    throw UsageError(fmt::format("reconstruct_psm: USM is {}x{} but discrepancy is {}x{}", usm.width, usm.height,
                                 delta.width, delta.height));
  SaliencyMap out(usm.width, usm.height);
  std::size_t n = 0;
  for (std::size_t i = 0; i < usm.size(); ++i) {
    const float v = usm.values[i] + delta.values[i];
    out.values[i] = std::clamp(v, 0.0f, 1.0f);
    n += out.values[i] != v;
  }
  if (n) spdlog::debug("reconstruct_psm: clamped {} of {} pixels", n, usm.size());
  if (clamped) *clamped = n;
  return out;
}

std::vector<PsmSample> psm_samples(const Dataset& dataset, std::span<const std::size_t> users,
                                   std::span<const std::size_t> images) {
  std::vector<PsmSample> out;
  for (auto u : users)
    for (auto s : images)
      if (dataset.covers(u, s)) out.push_back({u, s});
  return out;
}

PsmInputs prepare_psm_inputs(const Dataset& dataset, const PsmConfig& config, std::span<const std::size_t> usm_users,
                             std::span<const std::size_t> stimuli) {
  config.validate();
  PsmInputs in;
  in.width = config.width;
  in.height = config.height;
  in.out_width = config.out_width();
  in.out_height = config.out_height();
  for (auto s : stimuli) {
    const auto& st = dataset.stimuli.at(s);
    SaliencyMap usm;
    if (config.usm_source == UsmSource::gt) {
      usm = ground_truth_usm(dataset, s, usm_users);
    } else {
      const auto it = dataset.external_usm.find(s);
      if (it == dataset.external_usm.end())
        throw DataError("usm_source is external but no USM file exists for stimulus '" + st.id + "'");
      usm = it->second;
    }
    auto planes = resize_image(st.image, in.width, in.height).pixels;
    const auto usm_in = resize_map(usm, in.width, in.height).values;
    planes.insert(planes.end(), usm_in.begin(), usm_in.end());
    in.input.emplace(s, std::move(planes));
    in.usm.emplace(s, resize_map(usm, in.out_width, in.out_height));

    for (std::size_t u = 0; u < dataset.users.size(); ++u) {
      if (!dataset.covers(u, s)) continue;
      const auto& obs = dataset.observation(u, s);
      auto psm = resize_map(obs.psm, in.out_width, in.out_height);
      FixationSet fix = obs.fixations ? rescale_fixations(*obs.fixations, obs.psm.width, obs.psm.height, in.out_width,
                                                          in.out_height)
                                      : local_maxima_fixations(psm);
      in.fixations.emplace(std::make_pair(u, s), std::move(fix));
      in.psm.emplace(std::make_pair(u, s), std::move(psm));
    }
  }
  return in;
}

PoolIndex index_pool(const EmbeddingPool& pool, const Dataset& dataset, std::span<const std::size_t> users) {
  PoolIndex out;
  std::size_t dim = 0;
  for (auto u : users) {
    const auto it = pool.find(dataset.users.at(u));
    if (it == pool.end() || it->second.empty())
      throw ConfigError("embedding pool has no entry for user '" + dataset.users[u] + "'");
    auto& vectors = out[u];
    for (const auto& e : it->second) {
      if (dim == 0) dim = e.vector.size();
      if (e.vector.size() != dim) throw DataError("embedding pool vectors differ in length");
      vectors.push_back(e.vector);
    }
  }
  return out;
}

PoolIndex centroid_index(const PoolIndex& pool) {
  PoolIndex out;
  for (const auto& [u, vectors] : pool) {
    std::vector<UserEmbedding> entries;
    for (const auto& v : vectors) entries.push_back({"", v, {}});
    out[u] = {pool_centroid(entries)};
  }
  return out;
}

namespace {

Tensor<float> assemble_inputs(const PsmInputs& inputs, std::span<const PsmSample> batch) {
  auto x = Tensor<float>::zeros({batch.size(), 4, inputs.height, inputs.width});
  float* out = x.data().data();
  for (const auto& s : batch) {
    const auto& planes = inputs.input.at(s.stimulus);
    out = std::copy(planes.begin(), planes.end(), out);
  }
  return x;
}

Tensor<float> embedding_rows(const std::vector<const std::vector<float>*>& rows) {
  const std::size_t d = rows.front()->size();
  auto e = Tensor<float>::zeros({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r]->size() != d) throw DataError("embedding vectors differ in length");
    std::copy(rows[r]->begin(), rows[r]->end(), e.data().begin() + r * d);
  }
  return e;
}

const std::vector<std::vector<float>>& pool_of(const PoolIndex& pool, std::size_t user) {
  const auto it = pool.find(user);
  if (it == pool.end() || it->second.empty())
    throw ConfigError(fmt::format("no pool embedding available for user index {}", user));
  return it->second;
}

}  // namespace

std::vector<LossRecord> train_psm(PsmModel<float>& model, const PsmInputs& inputs, std::span<const PsmSample> samples,
                                  const PoolIndex& pool, const PsmTrainOptions& options) {
  const auto& cfg = model.config();
  if (samples.empty()) throw ConfigError("train_psm: no training samples");
  if (inputs.width != cfg.width || inputs.height != cfg.height)
    throw UsageError("train_psm: inputs were prepared for a different resolution");
  const bool conditioned = cfg.conditioning == Conditioning::with_embedding;
  if (conditioned)
    for (const auto& s : samples) {
      const auto& vectors = pool_of(pool, s.user);
      if (vectors.front().size() != cfg.embedding_dim)
        throw ConfigError(fmt::format("pool embeddings have {} dimensions, the model expects {}",
                                      vectors.front().size(), cfg.embedding_dim));
    }

  const std::size_t n = samples.size();
  const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const std::size_t total = options.max_steps ? options.max_steps : cfg.epochs * per_epoch;
  const std::size_t plane = inputs.out_width * inputs.out_height;
  std::vector<LossRecord> curve;
  std::vector<std::size_t> order;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  for (std::size_t step = options.start_epoch * per_epoch; step < total; ++step) {
    const std::size_t epoch = step / per_epoch;
    const std::size_t key = options.fixed_batch ? 0 : epoch;
    if (key != order_epoch) {
      Rng rng(options.seed, {hash_string("psm-epoch"), key});
      order = rng.sample_indices(n, n);
      order_epoch = key;
    }
    const std::size_t begin = options.fixed_batch ? 0 : (step % per_epoch) * cfg.batch;
    const std::size_t end = std::min(begin + cfg.batch, n);
    std::vector<PsmSample> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(samples[order[i]]);

    auto target = Tensor<float>::zeros({batch.size(), 1, inputs.out_height, inputs.out_width});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto delta = discrepancy_map(inputs.psm.at({batch[b].user, batch[b].stimulus}), inputs.usm.at(batch[b].stimulus));
      std::copy(delta.values.begin(), delta.values.end(), target.data().begin() + b * plane);
    }
    Tensor<float> e;
    if (conditioned) {
      Rng rng(options.seed, {hash_string("psm-pool"), step});
      std::vector<const std::vector<float>*> rows;
      for (const auto& s : batch) {
        const auto& vectors = pool_of(pool, s.user);
        rows.push_back(&vectors[rng.below(vectors.size())]);
      }
      e = embedding_rows(rows);
    }

    const double lr = cfg.schedule.lr(static_cast<unsigned>(epoch));
    const auto outputs = model.forward(assemble_inputs(inputs, batch), e, Mode::train);
    auto loss = psm_loss(outputs, target, cfg.supervision);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericalError(fmt::format("PSM loss is not finite at step {}", step));
    model.params().zero_grad();
    loss.backward();
    sgd_step(model.params().all(), SgdOptions{lr, cfg.momentum, cfg.weight_decay});
    curve.push_back({step, epoch, lr, value, 0});
    if (options.on_step) options.on_step(curve.back());
    if ((step + 1) % per_epoch == 0 || step + 1 == total)
      if (options.on_epoch_end) options.on_epoch_end(epoch);
  }
  return curve;
}

std::vector<DiscrepancyMap> predict_deltas(PsmModel<float>& model, const PsmInputs& inputs,
                                           std::span<const PsmSample> samples, const PoolIndex& embeddings,
                                           std::size_t chunk) {
  NoGradGuard no_grad;
  const bool conditioned = model.config().conditioning == Conditioning::with_embedding;
  const std::size_t plane = inputs.out_width * inputs.out_height;
  std::vector<DiscrepancyMap> out;
  for (std::size_t i = 0; i < samples.size(); i += chunk) {
    const auto batch = samples.subspan(i, std::min(chunk, samples.size() - i));
    Tensor<float> e;
    if (conditioned) {
      std::vector<const std::vector<float>*> rows;
      for (const auto& s : batch) rows.push_back(&pool_of(embeddings, s.user).front());
      e = embedding_rows(rows);
    }
    const auto outputs = model.forward(assemble_inputs(inputs, batch), e, Mode::eval);
    for (std::size_t b = 0; b < batch.size(); ++b)
      out.emplace_back(inputs.out_width, inputs.out_height,
                       std::vector<float>(outputs.main.data().begin() + b * plane,
                                          outputs.main.data().begin() + (b + 1) * plane));
  }
  return out;
}

std::vector<EvalRow> evaluate_condition(const std::string& model, Protocol protocol, const Dataset& dataset,
                                        const PsmInputs& inputs, std::span<const PsmSample> samples,
                                        const DeltaPredictor& predict) {
  if (samples.empty()) throw UsageError("evaluation has no samples");
  std::vector<DiscrepancyMap> deltas;
  if (predict) {
    deltas = predict(samples);
    if (deltas.size() != samples.size()) throw UsageError("predictor returned the wrong number of maps");
  }
  std::map<std::size_t, MetricAccumulator> per_user;
  std::vector<std::size_t> user_order;
  MetricAccumulator all;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& usm = inputs.usm.at(s.stimulus);
    const auto pred = predict ? reconstruct_psm(usm, deltas[i]) : usm;
    const auto r = evaluate_map(pred, inputs.psm.at({s.user, s.stimulus}), inputs.fixations.at({s.user, s.stimulus}));
    if (!per_user.count(s.user)) user_order.push_back(s.user);
    per_user[s.user].add(r);
    all.add(r);
  }
  std::vector<EvalRow> rows;
  const std::string set = protocol_name(protocol);
  for (auto u : user_order) rows.push_back({model, set, dataset.users.at(u), per_user[u].mean(), false});
  rows.push_back({model, set, "mean", all.mean(), true});
  return rows;
}

void check_protocol_users(const Dataset& dataset, Protocol protocol, std::span<const std::size_t> users) {
  if (!dataset.splits) throw UsageError("evaluation needs a dataset with split assignments");
  if (users.empty()) throw UsageError("no users to evaluate");
  for (auto u : users) {
    const bool train = dataset.splits->users.at(u) == Split::train;
    if (protocol == Protocol::closed && !train)
      throw UsageError("closed-set evaluation covers training users only; '" + dataset.users[u] + "' is held out");
    if (protocol == Protocol::open && train)
      throw UsageError("open-set evaluation covers held-out users only; '" + dataset.users[u] + "' is a training user");
  }
}

std::vector<EvalRow> evaluate_psm(const Dataset& dataset, const PsmInputs& inputs, Protocol protocol,
                                  std::span<const std::size_t> users, std::span<const std::size_t> images,
                                  PsmModel<float>* ablation, PsmModel<float>* full, const PoolIndex& centroids) {
  check_protocol_users(dataset, protocol, users);
  const auto samples = psm_samples(dataset, users, images);
  auto rows = evaluate_condition("gt_usm", protocol, dataset, inputs, samples, nullptr);
  const auto append = [&](const std::string& name, PsmModel<float>& model, const PoolIndex& pool) {
    const auto more = evaluate_condition(name, protocol, dataset, inputs, samples, [&](std::span<const PsmSample> s) {
      return predict_deltas(model, inputs, s, pool);
    });
    rows.insert(rows.end(), more.begin(), more.end());
  };
  if (ablation) append(conditioning_name(Conditioning::without_embedding), *ablation, {});
  if (full) append(conditioning_name(Conditioning::with_embedding), *full, centroids);
  return rows;
}

namespace {

std::string metric_cells(const MetricReport& m) {
  return fmt::format("{:.6f}\t{:.6f}\t{:.6f}\t{:.6f}\t{:.6f}", m.cc, m.sim, m.auc_judd, m.nss, m.kld);
}

}  // namespace

std::string eval_table(std::span<const EvalRow> rows) {
  std::string out = "model\tset\tcc\tsim\tauc\tnss\tkld\n";
  for (const auto& r : rows)
    if (r.aggregate) out += fmt::format("{}\t{}\t{}\n", r.model, r.set, metric_cells(r.metrics));
  return out;
}

std::string eval_table_per_user(std::span<const EvalRow> rows) {
  std::string out = "model\tset\tuser\tcc\tsim\tauc\tnss\tkld\n";
  for (const auto& r : rows) out += fmt::format("{}\t{}\t{}\t{}\n", r.model, r.set, r.user, metric_cells(r.metrics));
  return out;
}

}  // namespace gzeb
