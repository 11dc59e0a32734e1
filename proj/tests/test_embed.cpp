#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "gzeb/checkpoint.hpp"
#include "gzeb/embed_net.hpp"
#include "gzeb/error.hpp"
#include "gzeb/gradcheck.hpp"
#include "gzeb/synth.hpp"
#include "gzeb/text_io.hpp"
#include "oracles.hpp"

using namespace gzeb;
using gzeb::oracle::enumerate_policy;
namespace fs = std::filesystem;

namespace {

EmbedConfig toy_config() {
  EmbedConfig c;
  c.pairs_per_draw = 2;
  c.embedding_dim = 8;
  c.users_per_batch = 4;
  c.draws_per_user = 2;
  c.dropout = 0.0;
  c.width = 24;
  c.height = 16;
  c.channels = {4, 8, 8, 8};
  c.epochs = 2;
  c.steps_per_epoch = 5;
  return c;
}

Dataset toy_data(std::size_t users = 4, std::size_t stimuli = 12) {
  SynthOptions o;
  o.n_stimuli = stimuli;
  o.width = 24;
  o.height = 16;
  o.n_classes = 3;
  o.seed = 3;
  return synth_generate(random_profiles(users, 3, o.width, 3), o);
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Tensor<float> random_pairs(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  auto x = Tensor<float>::zeros({n, 4, h, w});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  return x;
}

double row_norm(const Tensor<float>& e, std::size_t r) {
  double s = 0.0;
  const std::size_t d = e.dim(1);
  for (std::size_t i = 0; i < d; ++i) s += static_cast<double>(e[r * d + i]) * e[r * d + i];
  return std::sqrt(s);
}

}  // namespace

TEST(EmbedForward, UnitNormOutput) {
  EmbedModel<float> model(toy_config(), 1);
  const auto e = model.embed(random_pairs(6, 16, 24, 2), 3, Mode::eval, nullptr);
  ASSERT_EQ(e.dims(), (Shape{2, 8}));
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(row_norm(e, r), 1.0, 1e-6);
}

TEST(EmbedForward, PermutingPairsLeavesEmbeddingUnchanged) {
  EmbedModel<float> model(toy_config(), 1);
  const auto x = random_pairs(4, 16, 24, 3);
  const std::size_t plane = 4 * 16 * 24;
  auto shuffled = Tensor<float>::zeros(x.dims());
  const std::size_t order[4] = {2, 0, 3, 1};
  for (std::size_t i = 0; i < 4; ++i)
    std::copy_n(x.data().begin() + order[i] * plane, plane, shuffled.data().begin() + i * plane);
  const auto a = model.embed(x, 4, Mode::eval, nullptr);
  const auto b = model.embed(shuffled, 4, Mode::eval, nullptr);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(EmbedForward, SinglePairIsNormalizedFeature) {
  EmbedModel<float> model(toy_config(), 1);
  const auto x = random_pairs(3, 16, 24, 4);
  const auto f = model.pair_features(x, Mode::eval, nullptr);
  const auto e = model.embed(x, 1, Mode::eval, nullptr);
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0.0;
    for (std::size_t i = 0; i < 8; ++i) n += static_cast<double>(f[r * 8 + i]) * f[r * 8 + i];
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(e[r * 8 + i], f[r * 8 + i] / std::sqrt(n), 1e-6);
  }
}

TEST(EmbedForward, SharedWeightsAcrossPairs) {
  EmbedModel<float> model(toy_config(), 1);
  const auto x = random_pairs(2, 16, 24, 5);
  auto twin = Tensor<float>::zeros(x.dims());
  const std::size_t plane = 4 * 16 * 24;
  std::copy_n(x.data().begin(), plane, twin.data().begin());
  std::copy_n(x.data().begin(), plane, twin.data().begin() + plane);
  const auto f = model.pair_features(twin, Mode::eval, nullptr);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(f[i], f[8 + i]);
}

TEST(EmbedForward, CountMismatchAndShapeErrors) {
  EmbedModel<float> model(toy_config(), 1);
  EXPECT_THROW(model.embed(random_pairs(5, 16, 24, 1), 2, Mode::eval, nullptr), UsageError);
  EXPECT_THROW(model.pair_features(Tensor<float>::zeros({2, 3, 16, 24}), Mode::eval, nullptr), UsageError);
  auto cfg = toy_config();
  cfg.dropout = 0.5;
  EmbedModel<float> dropping(cfg, 1);
  EXPECT_THROW(dropping.embed(random_pairs(2, 16, 24, 1), 2, Mode::train, nullptr), UsageError);
}

TEST(EmbedConfig, RejectsBadSettings) {
  auto c = toy_config();
  c.draws_per_user = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.margin = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.pairs_per_draw = 65;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(EmbedConfig{}.batch_draws(), 256u);
  EXPECT_EQ(EmbedConfig{}.margin, 0.05);
}

TEST(TripletLoss, Examples) {
  const std::vector<float> x{1, 0}, y{0, 1};
  EXPECT_DOUBLE_EQ(triplet_loss(x, x, y, 0.05), 0.0);
  EXPECT_NEAR(triplet_loss(x, y, x, 0.05), 1.05, 1e-12);
  EXPECT_NEAR(triplet_loss(x, y, y, 0.05), 0.05, 1e-12);
}

TEST(Mining, SeparatedUsersGiveNoTriplets) {
  const std::vector<float> e{1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1};
  const std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2};
  EXPECT_TRUE(mine_triplets(e, 3, labels, 0.05).empty());
}

TEST(Mining, HandSetTwoByTwo) {
  // Angles (deg): user 0 at 0 and 10, user 1 at 12 and 90.
  const double deg[4] = {0, 10, 12, 90};
  std::vector<float> flat;
  std::vector<std::vector<double>> e;
  for (double d : deg) {
    const double r = d * std::acos(-1.0) / 180.0;
    e.push_back({std::cos(r), std::sin(r)});
    flat.push_back(static_cast<float>(std::cos(r)));
    flat.push_back(static_cast<float>(std::sin(r)));
  }
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const auto mined = mine_triplets(flat, 2, labels, 0.05);
  EXPECT_EQ(mined, enumerate_policy(e, labels, 0.05));
  // Anchor 0, positive 1: sample 2 is semi-hard (cos 12 in (cos 10 - 0.05, cos 10)).
  EXPECT_NE(std::find(mined.begin(), mined.end(), Triplet{0, 1, 2}), mined.end());
  for (const auto& t : mined) {
    EXPECT_EQ(labels[t.anchor], labels[t.positive]);
    EXPECT_NE(labels[t.anchor], labels[t.negative]);
  }
}

TEST(Mining, MatchesExhaustiveEnumerationOnRandomBatches) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t P = 2 + rng.below(3), K = 2 + rng.below(3), D = 2 + rng.below(3);
    std::vector<std::vector<double>> e;
    std::vector<float> flat;
    std::vector<std::size_t> labels;
    for (std::size_t u = 0; u < P; ++u)
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> v(D);
        double n = 0.0;
        for (auto& x : v) n += (x = rng.normal(0.0, 1.0)) * x;
        for (auto& x : v) {
          x = static_cast<double>(static_cast<float>(x / std::sqrt(n)));
          flat.push_back(static_cast<float>(x));
        }
        e.push_back(v);
        labels.push_back(u);
      }
    const double margin = trial % 2 ? 0.05 : 0.5;
    ASSERT_EQ(mine_triplets(flat, D, labels, margin), enumerate_policy(e, labels, margin)) << "trial " << trial;
  }
}

TEST(Mining, SingleUserIsUsageError) {
  const std::vector<float> e{1, 0, 0, 1};
  const std::vector<std::size_t> labels{3, 3};
  EXPECT_THROW(mine_triplets(e, 2, labels, 0.05), UsageError);
}

TEST(EmbedTraining, MemorizesFixedBatch) {
  auto cfg = toy_config();
  cfg.lr = 0.003;
  EmbedModel<float> model(cfg, 2);
  const auto ds = toy_data();
  const auto inputs = prepare_pair_inputs(ds, cfg.width, cfg.height);
  EmbedTrainOptions opt;
  opt.seed = 4;
  opt.fixed_batch = true;
  opt.max_steps = 500;
  const auto curve = train_embedding(model, ds, inputs, iota_n(4), iota_n(12), opt);
  ASSERT_EQ(curve.size(), 500u);
  const double first = curve.front().loss;
  ASSERT_GT(first, 0.0);
  EXPECT_LE(curve[199].loss, 0.5 * first);
  EXPECT_LT(curve.back().loss, 0.1 * first);
}

TEST(EmbedTraining, SameSeedSameCurveAndWeights) {
  const auto cfg = toy_config();
  const auto ds = toy_data();
  const auto inputs = prepare_pair_inputs(ds, cfg.width, cfg.height);
  EmbedModel<float> a(cfg, 9), b(cfg, 9);
  EmbedTrainOptions opt;
  opt.seed = 5;
  const auto ca = train_embedding(a, ds, inputs, iota_n(4), iota_n(12), opt);
  const auto cb = train_embedding(b, ds, inputs, iota_n(4), iota_n(12), opt);
  ASSERT_EQ(ca.size(), 10u);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    EXPECT_EQ(ca[i].loss, cb[i].loss);
    EXPECT_EQ(ca[i].triplets, cb[i].triplets);
  }
  EXPECT_EQ(snapshot_state(a.params(), a.buffers()), snapshot_state(b.params(), b.buffers()));
}

TEST(EmbedTraining, ResumeMatchesUninterruptedRun) {
  const auto cfg = toy_config();
  const auto ds = toy_data();
  const auto inputs = prepare_pair_inputs(ds, cfg.width, cfg.height);
  EmbedModel<float> full(cfg, 9);
  EmbedTrainOptions opt;
  opt.seed = 5;
  const auto curve = train_embedding(full, ds, inputs, iota_n(4), iota_n(12), opt);

  EmbedModel<float> first(cfg, 9);
  std::vector<CheckpointEntry> saved;
  auto o1 = opt;
  o1.on_epoch_end = [&](std::size_t epoch) {
    if (epoch == 0) saved = snapshot_state(first.params(), first.buffers());
  };
  train_embedding(first, ds, inputs, iota_n(4), iota_n(12), o1);
  EmbedModel<float> resumed(cfg, 123);
  restore_state(saved, resumed.params(), resumed.buffers());
  auto o2 = opt;
  o2.start_epoch = 1;
  const auto tail = train_embedding(resumed, ds, inputs, iota_n(4), iota_n(12), o2);
  ASSERT_EQ(tail.size(), 5u);
  for (std::size_t i = 0; i < tail.size(); ++i) EXPECT_EQ(tail[i].loss, curve[5 + i].loss);
  EXPECT_EQ(snapshot_state(full.params(), full.buffers()), snapshot_state(resumed.params(), resumed.buffers()));
}

TEST(EmbedTraining, PreconditionsAreConfigErrors) {
  auto cfg = toy_config();
  const auto ds = toy_data();
  const auto inputs = prepare_pair_inputs(ds, cfg.width, cfg.height);
  EmbedModel<float> model(cfg, 1);
  const std::vector<std::size_t> few_images{0, 1, 2, 3, 4};
  EXPECT_THROW(train_embedding(model, ds, inputs, iota_n(4), few_images, {}), ConfigError);
  const std::vector<std::size_t> two_users{0, 1};
  EXPECT_THROW(train_embedding(model, ds, inputs, two_users, iota_n(12), {}), ConfigError);
}

TEST(EmbeddingPool, SizesNormsAndSources) {
  const auto cfg = toy_config();
  const auto ds = toy_data();
  const auto inputs = prepare_pair_inputs(ds, cfg.width, cfg.height);
  EmbedModel<float> model(cfg, 1);
  const std::vector<std::size_t> images{0, 2, 4, 6, 8, 10};
  const auto pool = build_embedding_pool(model, ds, inputs, iota_n(4), images, 7, 3, 2);
  ASSERT_EQ(pool.size(), 4u);
  for (const auto& [user, entries] : pool) {
    ASSERT_EQ(entries.size(), 7u);
    for (const auto& e : entries) {
      EXPECT_EQ(e.user_id, user);
      double n = 0.0;
      for (float v : e.vector) n += static_cast<double>(v) * v;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
      ASSERT_EQ(e.source_draw.size(), 3u);
      EXPECT_EQ(std::set<std::string>(e.source_draw.begin(), e.source_draw.end()).size(), 3u);
      for (const auto& s : e.source_draw) EXPECT_EQ(ds.stimulus_index(s) % 2, 0u);
    }
  }
  EXPECT_EQ(pool, build_embedding_pool(model, ds, inputs, iota_n(4), images, 7, 3, 2));
  EXPECT_THROW(build_embedding_pool(model, ds, inputs, iota_n(4), images, 7, 7, 2), ConfigError);
}

TEST(EmbeddingPool, CentroidIsUnitMean) {
  std::vector<UserEmbedding> entries{{"a", {1, 0}, {}}, {"a", {0, 1}, {}}};
  const auto c = pool_centroid(entries);
  EXPECT_NEAR(c[0], std::sqrt(0.5), 1e-7);
  EXPECT_NEAR(c[1], std::sqrt(0.5), 1e-7);
  EXPECT_THROW(pool_centroid(std::span<const UserEmbedding>{}), ConfigError);
}

TEST(EmbeddingCsv, RoundTripAndErrors) {
  const auto dir = fs::temp_directory_path() / "gzeb_embed_csv";
  fs::create_directories(dir);
  EmbeddingPool pool;
  pool["u00"] = {{"u00", {0.6f, -0.8f, 0.0f}, {}}, {"u00", {1.0f, 0.0f, 0.0f}, {}}};
  pool["u01"] = {{"u01", {0.0f, 0.0f, 1.0f}, {}}};
  write_embeddings_csv(dir / "e.csv", pool);
  auto back = read_embeddings_csv(dir / "e.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back["u00"][0].vector, pool["u00"][0].vector);
  EXPECT_EQ(back["u00"][1].vector, pool["u00"][1].vector);
  EXPECT_EQ(back["u01"][0].vector, pool["u01"][0].vector);

  write_text_file(dir / "bad.csv", "user_id,draw_index,dim_0\nu00,0,0.5\nu00,1,abc\n");
  try {
    read_embeddings_csv(dir / "bad.csv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 35u);
  }
  write_text_file(dir / "hdr.csv", "user,draw_index,dim_0\n");
  EXPECT_THROW(read_embeddings_csv(dir / "hdr.csv"), FormatError);
  fs::remove_all(dir);
}

TEST(EmbeddingAccuracy, ReportsPerMAndRejectsLargeM) {
  const auto cfg = toy_config();
  const auto ds = toy_data();
  const auto inputs = prepare_pair_inputs(ds, cfg.width, cfg.height);
  EmbedModel<float> model(cfg, 1);
  const std::vector<std::size_t> ms{1, 2, 4};
  const auto acc = eval_embedding_accuracy(model, ds, inputs, iota_n(4), iota_n(12), ms, 5, 3);
  ASSERT_EQ(acc.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(acc[i].m, ms[i]);
    EXPECT_GE(acc[i].accuracy, 0.0);
    EXPECT_LE(acc[i].accuracy, 1.0);
  }
  const std::vector<std::size_t> too_many{13};
  EXPECT_THROW(eval_embedding_accuracy(model, ds, inputs, iota_n(4), iota_n(12), too_many, 5, 3), ConfigError);
}

TEST(EmbeddingAccuracy, DuplicateDrawsArePerfect) {
  // m equal to the whole corpus: every draw of a user is the same set.
  const auto cfg = toy_config();
  const auto ds = toy_data(4, 6);
  const auto inputs = prepare_pair_inputs(ds, cfg.width, cfg.height);
  EmbedModel<float> model(cfg, 1);
  const std::vector<std::size_t> ms{6};
  EXPECT_EQ(eval_embedding_accuracy(model, ds, inputs, iota_n(4), iota_n(6), ms, 3, 1).front().accuracy, 1.0);
}

TEST(EmbedGradient, TripletLossThroughTinyModel) {
  EmbedConfig cfg = toy_config();
  cfg.width = 16;
  cfg.height = 16;
  cfg.embedding_dim = 4;
  cfg.channels = {2, 3, 4, 6};
  cfg.dropout = 0.2;
  EmbedModel<double> model(cfg, 3);
  Rng data(8);
  // A non-zero bias keeps every pre-normalization feature away from the origin.
  for (auto& v : model.params().find("embed.fc.bias")->value.data()) v = data.uniform(-0.5, 0.5);
  auto x = Tensor<double>::zeros({8, 4, 16, 16});
  for (auto& v : x.data()) v = data.uniform();
  const std::vector<Triplet> triplets{{0, 1, 2}, {2, 3, 0}, {1, 0, 3}};
  const auto loss = [&] {
    Rng drop(21);
    // A large margin keeps every hinge active.
    return triplet_margin_loss(model.embed(x, 2, Mode::train, &drop), triplets, 2.5);
  };
  std::vector<std::pair<std::string, Tensor<double>>> inputs;
  for (auto& p : model.params().all()) inputs.emplace_back(p.name, p.value);
  const auto report = grad_check<double>("embed", loss, inputs, GradCheckOptions{});
  for (const auto& e : report.entries)
    EXPECT_LE(e.max_rel_error, 1e-3) << e.tensor << " worst analytic " << e.worst_analytic << " numeric "
                                     << e.worst_numeric << " (" << e.checked << " checked, " << e.kink_skipped
                                     << " skipped)";
  EXPECT_TRUE(report.passed());
  EXPECT_GT(report.checked(), 50u);
}
