#include "gzeb/grad_suite.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>

#include "gzeb/embed_net.hpp"
#include "gzeb/psm_net.hpp"

namespace gzeb {
namespace {

using T = double;
using Inputs = std::vector<std::pair<std::string, Tensor<T>>>;

Tensor<T> random_tensor(Shape dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(shape_size(dims));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<T>::from(std::move(dims), std::move(v));
}

// A fixed random weighting turns any tensor into a scalar with dense gradients.
Tensor<T> weighted_sum(const Tensor<T>& t, std::uint64_t seed) {
  Rng rng(seed, {hash_string("weights")});
  return sum(mul(t, random_tensor(t.dims(), rng)));
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed, {hash_string("grad-suite")}) {}

  Tensor<T> rand(Shape dims, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(dims), rng_, lo, hi); }

  void check(const std::string& label, double tol, const std::function<Tensor<T>()>& loss, Inputs inputs) {
    GradCheckOptions o;
    o.rel_tol = tol;
    o.seed = hash_string(label);
    reports_.push_back(grad_check<T>(label, loss, std::move(inputs), o));
  }

  std::vector<GradCheckReport> take() { return std::move(reports_); }

 private:
  Rng rng_;
  std::vector<GradCheckReport> reports_;
};

void linear_ops(Suite& s) {
  auto in = s.rand({2, 3, 6, 5}), k = s.rand({4, 3, 3, 3}), b = s.rand({4});
  s.check("conv2d", kLinearOpTol, [&] { return weighted_sum(conv2d(in, k, b, 2, 1), 1); },
          {{"input", in}, {"kernel", k}, {"bias", b}});

  auto in2 = s.rand({2, 3, 5, 5}), ks = s.rand({2, 4, 3, 3, 3});
  s.check("dynamic_conv2d", kLinearOpTol, [&] { return weighted_sum(dynamic_conv2d(in2, ks, 1, 1), 2); },
          {{"input", in2}, {"kernels", ks}});

  auto in3 = s.rand({2, 3, 4, 4}), cb = s.rand({3});
  s.check("channel_bias", kLinearOpTol, [&] { return weighted_sum(channel_bias(in3, cb), 3); },
          {{"input", in3}, {"bias", cb}});

  auto x = s.rand({3, 5}), w = s.rand({4, 5}), lb = s.rand({4});
  s.check("linear", kLinearOpTol, [&] { return weighted_sum(linear(x, w, lb), 4); },
          {{"input", x}, {"weight", w}, {"bias", lb}});

  auto g = s.rand({4, 3, 3, 2});
  s.check("global_avg_pool", kLinearOpTol, [&] { return weighted_sum(global_avg_pool(g), 5); }, {{"input", g}});

  auto r = s.rand({6, 4});
  s.check("group_mean", kLinearOpTol, [&] { return weighted_sum(group_mean(r, 3), 6); }, {{"input", r}});
  s.check("reshape", kLinearOpTol, [&] { return weighted_sum(reshape(r, {2, 3, 4}), 7); }, {{"input", r}});

  auto p = s.rand({2, 6}), q = s.rand({2, 6});
  s.check("add", kLinearOpTol, [&] { return weighted_sum(add(p, q), 8); }, {{"a", p}, {"b", q}});
  s.check("sub", kLinearOpTol, [&] { return weighted_sum(sub(p, q), 9); }, {{"a", p}, {"b", q}});
  s.check("mul", kLinearOpTol, [&] { return weighted_sum(mul(p, q), 10); }, {{"a", p}, {"b", q}});
  s.check("scale", kLinearOpTol, [&] { return weighted_sum(scale(p, -1.7), 11); }, {{"a", p}});
  s.check("sum", kLinearOpTol, [&] { return scale(sum(p), 0.3); }, {{"a", p}});
  s.check("mean", kLinearOpTol, [&] { return scale(mean(p), 0.3); }, {{"a", p}});
  s.check("mse_loss", kLinearOpTol, [&] { return mse_loss(p, q); }, {{"prediction", p}, {"target", q}});
}

void nonlinear_ops(Suite& s) {
  auto x = s.rand({3, 8});
  s.check("relu", kNonlinearTol, [&] { return weighted_sum(relu(x), 12); }, {{"input", x}});
  s.check("tanh", kNonlinearTol, [&] { return weighted_sum(tanh(x), 13); }, {{"input", x}});
  s.check("l2_normalize", kNonlinearTol, [&] { return weighted_sum(l2_normalize(x), 14); }, {{"input", x}});
  s.check("dropout", kNonlinearTol,
          [&] {
            Rng mask(99);
            return weighted_sum(dropout(x, 0.4, Mode::train, mask), 15);
          },
          {{"input", x}});

  auto in = s.rand({3, 2, 3, 4}), gamma = s.rand({2}, 0.5, 1.5), beta = s.rand({2}, -0.3, 0.3);
  BatchNormStats<T> stats(2);
  s.check("batchnorm2d.train", kNonlinearTol,
          [&] { return weighted_sum(batchnorm2d(in, gamma, beta, stats, Mode::train), 16); },
          {{"input", in}, {"gamma", gamma}, {"beta", beta}});
  BatchNormStats<T> fixed(2);
  fixed.mean = {0.1, -0.2};
  fixed.var = {0.5, 2.0};
  s.check("batchnorm2d.eval", kLinearOpTol,
          [&] { return weighted_sum(batchnorm2d(in, gamma, beta, fixed, Mode::eval), 17); },
          {{"input", in}, {"gamma", gamma}, {"beta", beta}});

  auto e = s.rand({6, 5});
  const std::vector<Triplet> ts{{0, 1, 2}, {3, 4, 5}, {1, 0, 4}, {2, 5, 0}};
  s.check("triplet_margin_loss", kNonlinearTol, [&] { return triplet_margin_loss(l2_normalize(e), ts, 0.5); },
          {{"embeddings", e}});

  auto ci = s.rand({2, 3, 6, 6}), ck = s.rand({4, 3, 3, 3}, -0.5, 0.5), cg = s.rand({4}, 0.5, 1.5),
       cbeta = s.rand({4}, -0.2, 0.2), fw = s.rand({3, 4}), fb = s.rand({3});
  BatchNormStats<T> cs(4);
  s.check("conv_bn_relu_pool_linear", kNonlinearTol,
          [&] {
            const auto h = relu(batchnorm2d(conv2d(ci, ck, Tensor<T>(), 2, 1), cg, cbeta, cs, Mode::train));
            return weighted_sum(linear(global_avg_pool(h), fw, fb), 18);
          },
          {{"input", ci}, {"kernel", ck}, {"gamma", cg}, {"beta", cbeta}, {"fc.weight", fw}, {"fc.bias", fb}});
}

void embed_model(Suite& s, std::uint64_t seed) {
  EmbedConfig cfg;
  cfg.pairs_per_draw = 2;
  cfg.embedding_dim = 4;
  cfg.users_per_batch = 2;
  cfg.draws_per_user = 2;
  cfg.width = 16;
  cfg.height = 16;
  cfg.channels = {2, 3, 4, 6};
  cfg.dropout = 0.2;
  auto model = std::make_shared<EmbedModel<T>>(cfg, seed);
  // A non-zero bias keeps every pre-normalization feature away from the origin.
  Rng rng(seed, {hash_string("embed-bias")});
  for (auto& v : model->params().find("embed.fc.bias")->value.data()) v = rng.uniform(-0.5, 0.5);
  auto x = s.rand({8, 4, 16, 16}, 0.0, 1.0);
  const std::vector<Triplet> ts{{0, 1, 2}, {2, 3, 0}, {1, 0, 3}};
  Inputs inputs{{"pairs", x}};
  for (auto& p : model->params().all()) inputs.emplace_back(p.name, p.value);
  // A margin above 2 keeps every hinge active for unit embeddings.
  s.check("embed_model", kNonlinearTol,
          [model, x, ts] {
            Rng drop(21);
            return triplet_margin_loss(model->embed(x, 2, Mode::train, &drop), ts, 2.5);
          },
          std::move(inputs));
}

void psm_model(Suite& s, std::uint64_t seed) {
  PsmConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.channels = {2, 3, 3};
  cfg.n_filters = 2;
  cfg.hidden = 4;
  cfg.embedding_dim = 3;
  auto model = std::make_shared<PsmModel<T>>(cfg, seed);
  // Positive biases keep the relus after the conditioning conv and conv A active.
  for (const char* name : {"cond.bias", "head.conv_a.bias", "hyper.fc1.bias"})
    for (auto& v : model->params().find(name)->value.data()) v = 0.5;
  auto x = s.rand({3, 4, 16, 16}, 0.0, 1.0);
  auto e = l2_normalize(s.rand({3, 3})).detach();
  auto target = s.rand({3, 1, 2, 2}, -0.5, 0.5);
  Inputs inputs{{"input", x}, {"embedding", e}};
  for (auto& p : model->params().all()) inputs.emplace_back(p.name, p.value);
  s.check("psm_model", kNonlinearTol,
          [model, x, e, target] { return psm_loss(model->forward(x, e, Mode::train), target); }, std::move(inputs));

  auto ablation_cfg = cfg;
  ablation_cfg.conditioning = Conditioning::without_embedding;
  auto ablation = std::make_shared<PsmModel<T>>(ablation_cfg, seed);
  for (const char* name : {"cond.bias", "head.conv_a.bias"})
    for (auto& v : ablation->params().find(name)->value.data()) v = 0.5;
  Inputs ab_inputs{{"input", x}};
  for (auto& p : ablation->params().all()) ab_inputs.emplace_back(p.name, p.value);
  s.check("psm_model.without_embedding.summed", kNonlinearTol,
          [ablation, x, target] {
            return psm_loss(ablation->forward(x, Tensor<T>(), Mode::train), target, Supervision::summed);
          },
          std::move(ab_inputs));
}

}  // namespace

std::vector<GradCheckReport> run_grad_suite(const GradSuiteOptions& options) {
  // Probes move unit embeddings off the sphere; the model's renormalization warning is expected here.
  const auto level = spdlog::get_level();
  spdlog::set_level(std::max(level, spdlog::level::err));
  struct Restore {
    spdlog::level::level_enum level;
    ~Restore() { spdlog::set_level(level); }
  } restore{level};
  Suite s(options.seed);
  linear_ops(s);
  nonlinear_ops(s);
  embed_model(s, options.seed);
  psm_model(s, options.seed);
  if (options.inject_fault) {
    auto x = s.rand({6}, 0.5, 1.5);
    s.check("faulty_square", kNonlinearTol, [&] { return sum(faulty_square(x)); }, {{"input", x}});
  }
  return s.take();
}

std::string format_grad_report(const std::vector<GradCheckReport>& reports) {
  std::string out = fmt::format("{:<36} {:>8} {:>8} {:>8} {:>12}  {}\n", "check", "tol", "checked", "skipped",
                                "max_rel_err", "result");
  for (const auto& r : reports) {
    std::size_t skipped = 0;
    for (const auto& e : r.entries) skipped += e.kink_skipped;
    out += fmt::format("{:<36} {:>8.0e} {:>8} {:>8} {:>12.3e}  {}\n", r.label, r.rel_tol, r.checked(), skipped,
                       r.max_rel_error(), r.passed() ? "PASS" : "FAIL");
  }
  return out;
}

bool all_passed(const std::vector<GradCheckReport>& reports) {
  for (const auto& r : reports)
    if (!r.passed()) return false;
  return !reports.empty();
}

}  // namespace gzeb
