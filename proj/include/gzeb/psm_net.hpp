#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gzeb/dataset.hpp"
#include "gzeb/embed_net.hpp"
#include "gzeb/metrics.hpp"
#include "gzeb/ops.hpp"
#include "gzeb/optim.hpp"
#include "gzeb/param.hpp"

namespace gzeb {

enum class Conditioning { with_embedding, without_embedding };
enum class UsmSource { gt, external };
enum class Supervision { per_map, summed };

std::string conditioning_name(Conditioning c);
Conditioning parse_conditioning(const std::string& s);
std::string usm_source_name(UsmSource s);
UsmSource parse_usm_source(const std::string& s);
std::string supervision_name(Supervision s);
Supervision parse_supervision(const std::string& s);

struct PsmConfig {
  std::size_t width = 160;
  std::size_t height = 120;
  std::array<std::size_t, 3> channels{32, 64, 64};
  std::size_t n_filters = 16;  // N_f
  std::size_t hidden = 256;
  std::size_t embedding_dim = 32;
  TrainSchedule schedule{};
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t batch = 32;
  std::size_t epochs = 100;
  UsmSource usm_source = UsmSource::gt;
  Conditioning conditioning = Conditioning::with_embedding;
  Supervision supervision = Supervision::per_map;

  std::size_t out_width() const { return width / 8; }
  std::size_t out_height() const { return height / 8; }
  void validate() const;
};

template <typename T>
struct PsmOutputs {
  Tensor<T> aux1;  // projection before conv A
  Tensor<T> aux2;  // projection before conv B
  Tensor<T> main;
};

/// Trunk of three stride-2 conv blocks over [image, USM]; a conditioning
/// conv whose filters come from the hypernetwork (or are ordinary weights in
/// the ablation); head convs A and B with tanh projections tapped before each.
template <typename T>
class PsmModel {
 public:
  PsmModel(const PsmConfig& config, std::uint64_t seed);
  PsmModel(const PsmModel&) = delete;
  PsmModel& operator=(const PsmModel&) = delete;

  /// Per-row filter banks [B, N_f, C, 3, 3] for embeddings [B, D].
  Tensor<T> hyper_filters(const Tensor<T>& embeddings);

  /// Inputs [B, 4, H, W]; embeddings [B, D], ignored without embedding.
  /// Rows that are not unit length are normalized with a warning.
  PsmOutputs<T> forward(const Tensor<T>& x, const Tensor<T>& embeddings, Mode mode);

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  std::vector<NamedBuffer<T>> buffers();
  const PsmConfig& config() const { return config_; }

 private:
  PsmConfig config_;
  ParameterSet<T> params_;
  std::vector<Tensor<T>> trunk_w_, gamma_, beta_;
  std::vector<BatchNormStats<T>> bn_;
  Tensor<T> hyper1_w_, hyper1_b_, hyper2_w_, hyper2_b_;
  Tensor<T> cond_w_, cond_b_;
  Tensor<T> proj1_w_, proj1_b_, conv_a_w_, conv_a_b_, proj2_w_, proj2_b_, conv_b_w_, conv_b_b_;
};

/// Mean of the three per-map MSEs, or with Supervision::summed the MSE of
/// the summed maps.
template <typename T>
Tensor<T> psm_loss(const PsmOutputs<T>& outputs, const Tensor<T>& target, Supervision mode = Supervision::per_map);

/// clamp(usm + delta, 0, 1). `clamped` receives the number of clamped pixels.
SaliencyMap reconstruct_psm(const SaliencyMap& usm, const DiscrepancyMap& delta, std::size_t* clamped = nullptr);

struct PsmSample {
  std::size_t user = 0;
  std::size_t stimulus = 0;
  friend bool operator==(const PsmSample&, const PsmSample&) = default;
};

/// Every covered (user, stimulus) pair, users outer.
std::vector<PsmSample> psm_samples(const Dataset& dataset, std::span<const std::size_t> users,
                                   std::span<const std::size_t> images);

/// Network inputs at config resolution and supervision maps at output
/// resolution, for the given stimuli.
struct PsmInputs {
  std::size_t width = 0, height = 0, out_width = 0, out_height = 0;
  std::map<std::size_t, std::vector<float>> input;      // by stimulus: RGB + USM planes
  std::map<std::size_t, SaliencyMap> usm;               // by stimulus, output resolution
  std::map<std::pair<std::size_t, std::size_t>, SaliencyMap> psm;  // by (user, stimulus), output resolution
  std::map<std::pair<std::size_t, std::size_t>, FixationSet> fixations;  // output coordinates
};

/// USMs are aggregated from `usm_users` (gt) or taken from the dataset's
/// external maps (external). Users without recorded fixations get local maxima
/// of their output-resolution PSM as pseudo-fixations.
PsmInputs prepare_psm_inputs(const Dataset& dataset, const PsmConfig& config, std::span<const std::size_t> usm_users,
                             std::span<const std::size_t> stimuli);

/// Pool vectors by user index.
using PoolIndex = std::map<std::size_t, std::vector<std::vector<float>>>;

/// Looks up every user's pool; a missing user is a ConfigError.
PoolIndex index_pool(const EmbeddingPool& pool, const Dataset& dataset, std::span<const std::size_t> users);

/// One normalized pool centroid per user.
PoolIndex centroid_index(const PoolIndex& pool);

struct PsmTrainOptions {
  std::uint64_t seed = 1;
  std::size_t start_epoch = 0;
  bool fixed_batch = false;  // reuse the first batch every step
  std::size_t max_steps = 0;  // 0 = config epochs
  std::function<void(const LossRecord&)> on_step;
  std::function<void(std::size_t epoch)> on_epoch_end;
};

/// SGD with momentum and weight decay. An epoch is one shuffled pass over
/// `samples` in batches; each sample is paired with a pool embedding of its
/// user drawn uniformly per step. `pool` may be empty without embedding.
std::vector<LossRecord> train_psm(PsmModel<float>& model, const PsmInputs& inputs, std::span<const PsmSample> samples,
                                  const PoolIndex& pool, const PsmTrainOptions& options);

/// Predicted discrepancy maps (main output) for the samples, in order, with
/// embedding row 0 of each user's entry in `embeddings`.
std::vector<DiscrepancyMap> predict_deltas(PsmModel<float>& model, const PsmInputs& inputs,
                                           std::span<const PsmSample> samples, const PoolIndex& embeddings,
                                           std::size_t chunk = 16);

enum class Protocol { closed, open };
std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& s);

struct EvalRow {
  std::string model;
  std::string set;
  std::string user;  // "mean" on the aggregate row
  MetricReport metrics;
  bool aggregate = false;
};

using DeltaPredictor = std::function<std::vector<DiscrepancyMap>(std::span<const PsmSample>)>;

/// Rows for one condition: per user, then the mean over all samples.
/// A null predictor scores the USM itself.
std::vector<EvalRow> evaluate_condition(const std::string& model, Protocol protocol, const Dataset& dataset,
                                        const PsmInputs& inputs, std::span<const PsmSample> samples,
                                        const DeltaPredictor& predict);

/// Checks that the users fit the protocol: training users for closed,
/// held-out users for open. Throws UsageError otherwise.
void check_protocol_users(const Dataset& dataset, Protocol protocol, std::span<const std::size_t> users);

/// GT-USM baseline, then the ablation and the full model when given.
std::vector<EvalRow> evaluate_psm(const Dataset& dataset, const PsmInputs& inputs, Protocol protocol,
                                  std::span<const std::size_t> users, std::span<const std::size_t> images,
                                  PsmModel<float>* ablation, PsmModel<float>* full, const PoolIndex& centroids);

/// TSV with columns model, set, cc, sim, auc, nss, kld; mean rows only.
std::string eval_table(std::span<const EvalRow> rows);
/// As eval_table with a user column after set, every row.
std::string eval_table_per_user(std::span<const EvalRow> rows);

extern template class PsmModel<float>;
extern template class PsmModel<double>;

}  // namespace gzeb
