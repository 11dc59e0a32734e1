#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gzeb/dataset.hpp"
#include "gzeb/ops.hpp"
#include "gzeb/param.hpp"

namespace gzeb {

struct EmbedConfig {
  std::size_t pairs_per_draw = 8;  // m
  std::size_t embedding_dim = 32;
  double margin = 0.05;
  std::size_t users_per_batch = 32;  // P
  std::size_t draws_per_user = 8;    // K
  double lr = 0.001;
  double dropout = 0.5;
  std::size_t width = 160;
  std::size_t height = 120;
  std::array<std::size_t, 4> channels{16, 32, 64, 128};
  std::size_t epochs = 50;
  std::size_t steps_per_epoch = 100;

  std::size_t batch_draws() const { return users_per_batch * draws_per_user; }
  /// Throws ConfigError on an unusable setting.
  void validate() const;
};

/// Siamese trunk: four stride-2 conv blocks (conv without bias, batch norm,
/// relu), global average pooling, dropout and a linear layer. The same
/// parameters process every image-PSM pair.
template <typename T>
class EmbedModel {
 public:
  EmbedModel(const EmbedConfig& config, std::uint64_t seed);
  EmbedModel(const EmbedModel&) = delete;
  EmbedModel& operator=(const EmbedModel&) = delete;

  /// Per-pair features [N, D] for pairs x [N, 4, H, W]. Train mode with
  /// dropout needs `rng`.
  Tensor<T> pair_features(const Tensor<T>& x, Mode mode, Rng* rng);

  /// Unit embeddings [N/m, D]: features of each run of m consecutive pairs
  /// are averaged, then normalized.
  Tensor<T> embed(const Tensor<T>& x, std::size_t m, Mode mode, Rng* rng);

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  std::vector<NamedBuffer<T>> buffers();
  const EmbedConfig& config() const { return config_; }

 private:
  EmbedConfig config_;
  ParameterSet<T> params_;
  std::vector<Tensor<T>> conv_, gamma_, beta_;
  std::vector<BatchNormStats<T>> bn_;
  Tensor<T> fc_w_, fc_b_;
};

/// Images and PSMs resampled to one network resolution, ready to be stacked
/// into [4, H, W] pair tensors (RGB then PSM).
struct PairInputs {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::vector<float>> images;                                  // by stimulus, 3 planes
  std::map<std::pair<std::size_t, std::size_t>, std::vector<float>> psms;  // by (user, stimulus)
};

PairInputs prepare_pair_inputs(const Dataset& dataset, std::size_t width, std::size_t height);

/// m image-PSM pairs of one user.
struct Draw {
  std::size_t user = 0;
  std::vector<std::size_t> stimuli;
};

/// m distinct stimuli from `eligible`.
Draw sample_draw(Rng& rng, std::size_t user, std::span<const std::size_t> eligible, std::size_t m);

/// Pairs of all draws stacked in order: [sum of m, 4, H, W].
template <typename T>
Tensor<T> assemble_draws(const PairInputs& inputs, std::span<const Draw> draws);

/// Triplets over a batch of unit embeddings [N, D] with user labels.
///
/// For every (anchor, positive) of one user the negative is the most similar
/// other-user draw among the semi-hard ones, sim(a,p) > sim(a,n) >
/// sim(a,p) - margin; without a semi-hard candidate it is the most similar
/// other-user draw overall. Triplets with zero loss are dropped. Ties go to
/// the lowest index.
std::vector<Triplet> mine_triplets(std::span<const float> embeddings, std::size_t dim,
                                   std::span<const std::size_t> labels, double margin);

/// max(a.n - a.p + margin, 0) for unit vectors.
double triplet_loss(std::span<const float> a, std::span<const float> p, std::span<const float> n, double margin);

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::size_t triplets = 0;  // embedding training only
};

struct EmbedTrainOptions {
  std::uint64_t seed = 1;
  std::size_t start_epoch = 0;  // resume point; state must already be restored
  bool fixed_batch = false;     // reuse the step-0 batch every step
  std::size_t max_steps = 0;    // 0 = epochs * steps_per_epoch
  std::function<void(const LossRecord&)> on_step;
  std::function<void(std::size_t epoch)> on_epoch_end;  // after the epoch's last step
};

/// Adam on the mean loss of mined triplets. Each step draws P users and K
/// draws per user from a stream seeded by (seed, step), so a resumed run
/// repeats an uninterrupted one exactly. Steps that mine no triplet record
/// loss 0 and leave the parameters unchanged.
std::vector<LossRecord> train_embedding(EmbedModel<float>& model, const Dataset& dataset, const PairInputs& inputs,
                                        std::span<const std::size_t> users, std::span<const std::size_t> images,
                                        const EmbedTrainOptions& options);

struct UserEmbedding {
  std::string user_id;
  std::vector<float> vector;
  std::vector<std::string> source_draw;  // stimulus ids
  friend bool operator==(const UserEmbedding&, const UserEmbedding&) = default;
};

/// Embeddings per user id.
using EmbeddingPool = std::map<std::string, std::vector<UserEmbedding>>;

/// Eval-mode embeddings of the draws, in order.
std::vector<std::vector<float>> embed_draws(EmbedModel<float>& model, const PairInputs& inputs,
                                            std::span<const Draw> draws, std::size_t chunk = 16);

/// Stimuli a user may be drawn from: covered by the user and listed in `images`.
std::vector<std::size_t> eligible_stimuli(const Dataset& dataset, std::size_t user,
                                          std::span<const std::size_t> images);

/// `pool_size` embeddings per user, each from an independent draw of m
/// eligible stimuli.
EmbeddingPool build_embedding_pool(EmbedModel<float>& model, const Dataset& dataset, const PairInputs& inputs,
                                   std::span<const std::size_t> users, std::span<const std::size_t> images,
                                   std::size_t pool_size, std::size_t m, std::uint64_t seed);

struct AccuracyPoint {
  std::size_t m = 0;
  double accuracy = 0.0;
};

/// Precision@1 over `draws_per_user` embeddings per user, for each m.
std::vector<AccuracyPoint> eval_embedding_accuracy(EmbedModel<float>& model, const Dataset& dataset,
                                                   const PairInputs& inputs, std::span<const std::size_t> users,
                                                   std::span<const std::size_t> images,
                                                   std::span<const std::size_t> m_values,
                                                   std::size_t draws_per_user, std::uint64_t seed);

/// Normalized mean of a user's pool.
std::vector<float> pool_centroid(std::span<const UserEmbedding> entries);

/// CSV with header user_id,draw_index,dim_0..dim_{D-1}.
void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingPool& pool);
EmbeddingPool read_embeddings_csv(const std::filesystem::path& path);

extern template class EmbedModel<float>;
extern template class EmbedModel<double>;

}  // namespace gzeb
