#include "gzeb/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gzeb/checkpoint.hpp"
#include "gzeb/embed_net.hpp"
#include "gzeb/error.hpp"
#include "gzeb/grad_suite.hpp"
#include "gzeb/image_io.hpp"
#include "gzeb/psm_net.hpp"
#include "gzeb/run_config.hpp"
#include "gzeb/synth.hpp"
#include "gzeb/text_io.hpp"

namespace fs = std::filesystem;

namespace gzeb {
namespace {

// Relative output directories are placed under $GZEB_OUT_ROOT when it is set.
fs::path resolve_out(const std::string& out) {
  fs::path p(out);
  if (p.is_relative())
    if (const char* root = std::getenv("GZEB_OUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

void echo_config(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
  fs::create_directories(dir);
  write_text_file(dir / "config.resolved", fmt::format("# command: {}\n", command) + cfg.resolved_text());
}

Dataset load_split_dataset(const fs::path& dir) {
  auto ds = load_dataset(dir);
  if (!ds.splits) throw DataError("dataset " + dir.string() + " has no splits.tsv");
  return ds;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

std::vector<std::size_t> join(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  return a;
}

std::vector<std::size_t> held_out_users(const Dataset& ds) {
  return join(ds.users_in(Split::val), ds.users_in(Split::test));
}

// Training state per epoch: checkpoints/epoch_NNNN.gzeb after NNNN completed
// epochs, plus loss.tsv rewritten at every epoch boundary.
class RunDirectory {
 public:
  explicit RunDirectory(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_ / "checkpoints"); }

  fs::path epoch_path(std::size_t completed) const {
    return dir_ / "checkpoints" / fmt::format("epoch_{:04d}.gzeb", completed);
  }

  std::size_t latest_epoch() const {
    std::size_t best = 0;
    for (const auto& entry : fs::directory_iterator(dir_ / "checkpoints")) {
      const auto name = entry.path().filename().string();
      unsigned n = 0;
      if (name.size() == 15 && std::sscanf(name.c_str(), "epoch_%4u.gzeb", &n) == 1) best = std::max<std::size_t>(best, n);
    }
    return best;
  }

  // Keeps the logged rows of epochs before `start_epoch`.
  void begin_log(std::size_t start_epoch) {
    log_ = "step\tepoch\tlr\tloss\n";
    if (start_epoch == 0 || !fs::exists(dir_ / "loss.tsv")) return;
    for (const auto& row : read_text_rows(dir_ / "loss.tsv", '\t')) {
      if (row.line == 1) continue;
      if (row.cells.size() != 4) throw FormatError("loss.tsv: expected 4 columns", row.offset);
      if (std::stoull(row.cells[1]) < start_epoch)
        log_ += fmt::format("{}\t{}\t{}\t{}\n", row.cells[0], row.cells[1], row.cells[2], row.cells[3]);
    }
  }

  void log(const LossRecord& r) { log_ += fmt::format("{}\t{}\t{:.9g}\t{:.9g}\n", r.step, r.epoch, r.lr, r.loss); }

  void save(std::size_t completed, const std::vector<CheckpointEntry>& state) {
    write_checkpoint(epoch_path(completed), state);
    write_text_file(dir_ / "loss.tsv", log_);
  }

  void finish(const std::vector<CheckpointEntry>& state) {
    write_checkpoint(dir_ / "model.gzeb", state);
    write_text_file(dir_ / "loss.tsv", log_);
  }

 private:
  fs::path dir_;
  std::string log_;
};

template <typename Model>
std::vector<CheckpointEntry> model_state(Model& model) {
  const auto buffers = model.buffers();
  return snapshot_state(model.params(), buffers);
}

template <typename Model>
void load_model(Model& model, const fs::path& path) {
  const auto entries = read_checkpoint(path);
  const auto buffers = model.buffers();
  restore_state(entries, model.params(), buffers);
}

// Rejects a non-empty directory unless forced; forcing removes only dataset artifacts.
void prepare_dataset_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw ConfigError("refusing to write into non-empty directory " + dir.string() + " (use --force)");
    for (const char* name : {"manifest.tsv", "users.tsv", "splits.tsv", "generation.tsv", "config.resolved", "images",
                             "fixations", "maps", "usm"})
      fs::remove_all(dir / name);
  }
  fs::create_directories(dir);
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;

  RunConfig resolve() const {
    auto cfg = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    for (const auto& s : sets) cfg.set(s);
    if (cfg.threads() > 1) spdlog::warn("threads = {}: the engine runs on one thread", cfg.threads());
    return cfg;
  }
};

void cmd_gen_data(const RunConfig& cfg, const fs::path& out, bool force) {
  const auto profiles = cfg.synth_profiles();
  const auto options = cfg.synth_options();
  auto ds = synth_generate(profiles, options);
  split_dataset(ds, cfg.image_fractions(), cfg.user_counts(), cfg.seed());
  prepare_dataset_dir(out, force);
  save_dataset(ds, out);
  write_text_file(out / "generation.tsv",
                  fmt::format("key\tvalue\nseed\t{}\nusers\t{}\nstimuli\t{}\nobservations\t{}\nwidth\t{}\nheight\t{}\n",
                              cfg.seed(), ds.users.size(), ds.stimuli.size(), ds.observations.size(), options.width,
                              options.height));
  echo_config(out, cfg, "gen-data");
  spdlog::info("wrote {} users x {} stimuli to {}", ds.users.size(), ds.stimuli.size(), out.string());
}

void cmd_train_embed(const RunConfig& cfg, const fs::path& data, const fs::path& out, bool resume) {
  const auto ds = load_split_dataset(data);
  const auto ecfg = cfg.embed_config();
  const auto inputs = prepare_pair_inputs(ds, ecfg.width, ecfg.height);
  EmbedModel<float> model(ecfg, cfg.seed());
  echo_config(out, cfg, "train-embed");
  RunDirectory run(out);

  EmbedTrainOptions options;
  options.seed = cfg.seed();
  if (resume && (options.start_epoch = run.latest_epoch()) > 0) {
    load_model(model, run.epoch_path(options.start_epoch));
    spdlog::info("resuming embedding training after epoch {}", options.start_epoch);
  }
  run.begin_log(options.start_epoch);
  options.on_step = [&](const LossRecord& r) { run.log(r); };
  options.on_epoch_end = [&](std::size_t epoch) {
    run.save(epoch + 1, model_state(model));
    spdlog::info("embedding epoch {} done", epoch + 1);
  };
  if (options.start_epoch < ecfg.epochs)
    train_embedding(model, ds, inputs, ds.users_in(Split::train), ds.images_in(Split::train), options);
  run.finish(model_state(model));
}

void cmd_pool(const RunConfig& cfg, const fs::path& data, const fs::path& embed, const fs::path& out) {
  const auto ds = load_split_dataset(data);
  const auto ecfg = cfg.embed_config();
  EmbedModel<float> model(ecfg, cfg.seed());
  load_model(model, embed);
  const auto inputs = prepare_pair_inputs(ds, ecfg.width, ecfg.height);
  const auto size = cfg.get_size("embed.pool_size");
  const auto train_images = ds.images_in(Split::train);
  auto pool = build_embedding_pool(model, ds, inputs, ds.users_in(Split::train), train_images, size,
                                   ecfg.pairs_per_draw, cfg.seed());
  // Held-out viewers may be embedded from any image outside the test split.
  const auto others = held_out_users(ds);
  if (!others.empty())
    pool.merge(build_embedding_pool(model, ds, inputs, others, join(train_images, ds.images_in(Split::val)), size,
                                    ecfg.pairs_per_draw, cfg.seed()));
  echo_config(out, cfg, "pool");
  write_embeddings_csv(out / "pool.csv", pool);
  spdlog::info("wrote {} embeddings per user for {} users", size, pool.size());
}

std::size_t pool_dim(const EmbeddingPool& pool) {
  for (const auto& [user, entries] : pool)
    if (!entries.empty()) return entries.front().vector.size();
  throw DataError("embedding pool is empty");
}

void cmd_train_psm(const RunConfig& cfg, const fs::path& data, const std::string& pool_path, bool ablation,
                   const fs::path& out, bool resume) {
  const auto ds = load_split_dataset(data);
  EmbeddingPool pool;
  if (!pool_path.empty()) pool = read_embeddings_csv(pool_path);
  if (!ablation && pool.empty()) throw ConfigError("train-psm needs --pool unless --ablation without_embedding is given");
  auto pcfg = cfg.psm_config(pool.empty() ? cfg.get_size("embed.dim") : pool_dim(pool));
  if (ablation) pcfg.conditioning = Conditioning::without_embedding;

  const auto users = ds.users_in(Split::train);
  const auto inputs = prepare_psm_inputs(ds, pcfg, users, all_indices(ds.stimuli.size()));
  const auto samples = psm_samples(ds, users, ds.images_in(Split::train));
  const auto index = ablation ? PoolIndex{} : index_pool(pool, ds, users);
  PsmModel<float> model(pcfg, cfg.seed());
  echo_config(out, cfg, ablation ? "train-psm --ablation without_embedding" : "train-psm");
  RunDirectory run(out);

  PsmTrainOptions options;
  options.seed = cfg.seed();
  if (resume && (options.start_epoch = run.latest_epoch()) > 0) {
    load_model(model, run.epoch_path(options.start_epoch));
    spdlog::info("resuming PSM training after epoch {}", options.start_epoch);
  }
  run.begin_log(options.start_epoch);
  options.on_step = [&](const LossRecord& r) { run.log(r); };
  options.on_epoch_end = [&](std::size_t epoch) {
    run.save(epoch + 1, model_state(model));
    spdlog::debug("PSM epoch {} done", epoch + 1);
  };
  if (options.start_epoch < pcfg.epochs) train_psm(model, inputs, samples, index, options);
  run.finish(model_state(model));
}

struct EvalArgs {
  std::string embed, pool, full, ablation;
  std::string protocol, m_list;
};

std::vector<std::size_t> protocol_users(const Dataset& ds, Protocol protocol) {
  auto users = protocol == Protocol::closed ? ds.users_in(Split::train) : held_out_users(ds);
  if (users.empty())
    throw UsageError(fmt::format("protocol {} needs {} users, the split file has none", protocol_name(protocol),
                                 protocol == Protocol::closed ? "training" : "held-out"));
  return users;
}

void write_previews(const fs::path& dir, const Dataset& ds, const PsmInputs& inputs,
                    std::span<const PsmSample> samples, const std::vector<DiscrepancyMap>& deltas) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto psm = reconstruct_psm(inputs.usm.at(samples[i].stimulus), deltas[i]);
    const auto base = dir / ds.users[samples[i].user] / ds.stimuli[samples[i].stimulus].id;
    fs::create_directories(base.parent_path());
    write_pfm(fs::path(base).replace_extension(".pfm"), psm.width, psm.height, psm.values);
    write_pgm(fs::path(base).replace_extension(".pgm"), psm.width, psm.height, psm.values);
  }
}

void cmd_eval(RunConfig cfg, const fs::path& data, const EvalArgs& args, const fs::path& out) {
  if (!args.protocol.empty()) cfg.set("eval.protocol", args.protocol);
  if (!args.m_list.empty()) cfg.set("eval.m_list", args.m_list);
  const auto protocol = parse_protocol(cfg.get("eval.protocol"));
  const auto m_values = cfg.get_size_list("eval.m_list");
  const auto ds = load_split_dataset(data);
  const auto users = protocol_users(ds, protocol);
  const auto images = ds.images_in(Split::test);
  if (images.empty()) throw UsageError("the split file has no test images");
  if (!args.full.empty() && args.pool.empty()) throw ConfigError("eval --full needs --pool");

  EmbeddingPool pool;
  if (!args.pool.empty()) pool = read_embeddings_csv(args.pool);
  auto pcfg = cfg.psm_config(pool.empty() ? cfg.get_size("embed.dim") : pool_dim(pool));
  const auto inputs = prepare_psm_inputs(ds, pcfg, ds.users_in(Split::train), images);

  std::unique_ptr<PsmModel<float>> full, ablation;
  PoolIndex centroids;
  if (!args.full.empty()) {
    full = std::make_unique<PsmModel<float>>(pcfg, cfg.seed());
    load_model(*full, args.full);
    centroids = centroid_index(index_pool(pool, ds, users));
  }
  if (!args.ablation.empty()) {
    auto acfg = pcfg;
    acfg.conditioning = Conditioning::without_embedding;
    ablation = std::make_unique<PsmModel<float>>(acfg, cfg.seed());
    load_model(*ablation, args.ablation);
  }

  echo_config(out, cfg, "eval");
  const auto rows = evaluate_psm(ds, inputs, protocol, users, images, ablation.get(), full.get(), centroids);
  write_text_file(out / "eval.tsv", eval_table(rows));
  write_text_file(out / "eval_per_user.tsv", eval_table_per_user(rows));
  write_text_file(out / "eval_meta.tsv",
                  fmt::format("key\tvalue\nprotocol\t{}\nusers\t{}\ntest_images\t{}\nmap_width\t{}\nmap_height\t{}\n",
                              protocol_name(protocol), users.size(), images.size(), inputs.out_width,
                              inputs.out_height));

  if (!pool.empty()) {
    EmbeddingPool subset;
    for (auto u : users)
      if (auto it = pool.find(ds.users[u]); it != pool.end()) subset.insert(*it);
    write_embeddings_csv(out / "embeddings.csv", subset);
  }

  if (!args.embed.empty()) {
    const auto ecfg = cfg.embed_config();
    EmbedModel<float> embed(ecfg, cfg.seed());
    load_model(embed, args.embed);
    const auto pair_inputs = prepare_pair_inputs(ds, ecfg.width, ecfg.height);
    // Held-out viewers were never trained on, so every image is fair game for them.
    const auto acc_images = protocol == Protocol::open ? all_indices(ds.stimuli.size())
                                                       : join(ds.images_in(Split::val), images);
    const auto points = eval_embedding_accuracy(embed, ds, pair_inputs, users, acc_images, m_values,
                                                cfg.get_size("eval.accuracy_draws"), cfg.seed());
    std::string text = "m\taccuracy\n";
    for (const auto& p : points) text += fmt::format("{}\t{:.6f}\n", p.m, p.accuracy);
    write_text_file(out / "accuracy.tsv", text);
  }

  if (cfg.get_bool("eval.previews") && (full || ablation)) {
    const auto samples = psm_samples(ds, users, images);
    const auto deltas = full ? predict_deltas(*full, inputs, samples, centroids)
                             : predict_deltas(*ablation, inputs, samples, {});
    write_previews(out / "psm", ds, inputs, samples, deltas);
  }
  if (spdlog::get_level() <= spdlog::level::info) std::cout << eval_table(rows);
}

void cmd_predict(const RunConfig& cfg, const fs::path& data, const std::string& model_path,
                 const std::string& pool_path, bool ablation, const std::string& user, const std::string& stimulus,
                 const fs::path& out) {
  const auto ds = load_dataset(data);
  EmbeddingPool pool;
  if (!pool_path.empty()) pool = read_embeddings_csv(pool_path);
  if (!ablation && pool.empty()) throw ConfigError("predict needs --pool unless --ablation is given");
  auto pcfg = cfg.psm_config(pool.empty() ? cfg.get_size("embed.dim") : pool_dim(pool));
  if (ablation) pcfg.conditioning = Conditioning::without_embedding;
  PsmModel<float> model(pcfg, cfg.seed());
  load_model(model, model_path);

  if (std::find(ds.users.begin(), ds.users.end(), user) == ds.users.end())
    throw UsageError("predict: no user '" + user + "' in the dataset");
  if (std::none_of(ds.stimuli.begin(), ds.stimuli.end(), [&](const Stimulus& st) { return st.id == stimulus; }))
    throw UsageError("predict: no stimulus '" + stimulus + "' in the dataset");
  const auto u = ds.user_index(user);
  const auto s = ds.stimulus_index(stimulus);
  const auto usm_users = ds.splits ? ds.users_in(Split::train) : all_indices(ds.users.size());
  const std::vector<std::size_t> stimuli{s};
  const auto inputs = prepare_psm_inputs(ds, pcfg, usm_users, stimuli);
  const std::vector<std::size_t> one{u};
  const PoolIndex centroids = ablation ? PoolIndex{} : centroid_index(index_pool(pool, ds, one));
  const std::vector<PsmSample> samples{{u, s}};
  const auto delta = predict_deltas(model, inputs, samples, centroids).front();
  std::size_t clamped = 0;
  const auto psm = reconstruct_psm(inputs.usm.at(s), delta, &clamped);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_pfm(out, psm.width, psm.height, psm.values);
  write_pgm(fs::path(out).replace_extension(".pgm"), psm.width, psm.height, psm.values);
  spdlog::info("wrote {}x{} PSM for {} on {} ({} pixels clamped)", psm.width, psm.height, user, stimulus, clamped);
}

void cmd_grad_check(bool fault) {
  GradSuiteOptions o;
  o.inject_fault = fault;
  const auto reports = run_grad_suite(o);
  std::cout << format_grad_report(reports);
  if (!all_passed(reports)) throw NumericalError("gradient check failed");
}

void cmd_export(const fs::path& checkpoint, const fs::path& out) {
  const auto entries = read_checkpoint(checkpoint);
  fs::create_directories(out / "values");
  std::string index = "name\tshape\tcount\tmin\tmax\tmean\n";
  for (const auto& e : entries) {
    double lo = 0, hi = 0, sum = 0;
    if (!e.values.empty()) lo = hi = e.values.front();
    for (float v : e.values) {
      lo = std::min<double>(lo, v);
      hi = std::max<double>(hi, v);
      sum += v;
    }
    index += fmt::format("{}\t{}\t{}\t{:.9g}\t{:.9g}\t{:.9g}\n", e.name, shape_string(e.dims), e.values.size(), lo,
                         hi, e.values.empty() ? 0.0 : sum / e.values.size());
    // One row per leading index, remaining axes flattened.
    const std::size_t rows = e.dims.empty() ? 1 : e.dims.front();
    const std::size_t cols = rows ? e.values.size() / rows : 0;
    std::string text;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) text += fmt::format("{}{:.9g}", c ? "\t" : "", e.values[r * cols + c]);
      text += "\n";
    }
    write_text_file(out / "values" / (e.name + ".tsv"), text);
  }
  write_text_file(out / "entries.tsv", index);
}

void setup_logging(int verbosity) {
  auto logger = spdlog::get("gzeb");
  if (!logger) logger = spdlog::stderr_color_mt("gzeb");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%^%l%$: %v");
  spdlog::set_level(verbosity < 0 ? spdlog::level::warn : verbosity > 0 ? spdlog::level::debug : spdlog::level::info);
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Personalized saliency toolkit: synthetic data, user embeddings, PSM prediction"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  int verbosity = 0;
  app.add_option("-c,--config", common.config_path, "config file (key = value, [section] headers)");
  app.add_option("--set", common.sets, "override a key: section.key=value (repeatable)");
  app.add_flag_function("-v,--verbose", [&](std::int64_t) { verbosity = 1; }, "debug logging");
  app.add_flag_function("-q,--quiet", [&](std::int64_t) { verbosity = -1; }, "warnings and errors only");

  std::string out, data, embed, pool, model, user, stimulus, checkpoint, ablation_flag;
  bool force = false, resume = false, fault = false, ablation = false;
  EvalArgs eval_args;

  auto* gen = app.add_subcommand("gen-data", "generate a seeded synthetic dataset");
  gen->add_option("-o,--out", out, "dataset directory")->required();
  gen->add_flag("--force", force, "overwrite dataset files in a non-empty directory");

  auto* te = app.add_subcommand("train-embed", "train the user embedding network");
  te->add_option("-d,--data", data, "dataset directory")->required();
  te->add_option("-o,--out", out, "run directory")->required();
  te->add_flag("--resume", resume, "continue from the last epoch checkpoint");

  auto* po = app.add_subcommand("pool", "embed every user into a pool of draws");
  po->add_option("-d,--data", data, "dataset directory")->required();
  po->add_option("--embed", embed, "embedding checkpoint")->required();
  po->add_option("-o,--out", out, "output directory")->required();

  auto* tp = app.add_subcommand("train-psm", "train the PSM network");
  tp->add_option("-d,--data", data, "dataset directory")->required();
  tp->add_option("--pool", pool, "embedding pool CSV");
  tp->add_option("--ablation", ablation_flag, "without_embedding trains the unconditioned variant")
      ->check(CLI::IsMember({"without_embedding"}));
  tp->add_option("-o,--out", out, "run directory")->required();
  tp->add_flag("--resume", resume, "continue from the last epoch checkpoint");

  auto* ev = app.add_subcommand("eval", "score models and write reports");
  ev->add_option("-d,--data", data, "dataset directory")->required();
  ev->add_option("--embed", eval_args.embed, "embedding checkpoint (accuracy table)");
  ev->add_option("--pool", eval_args.pool, "embedding pool CSV");
  ev->add_option("--full", eval_args.full, "PSM checkpoint with embedding");
  ev->add_option("--ablation-model", eval_args.ablation, "PSM checkpoint without embedding");
  ev->add_option("--protocol", eval_args.protocol, "open or closed");
  ev->add_option("--m-list", eval_args.m_list, "comma-separated draw sizes");
  ev->add_option("-o,--out", out, "report directory")->required();

  auto* pr = app.add_subcommand("predict", "predict one user's PSM for one stimulus");
  pr->add_option("-d,--data", data, "dataset directory")->required();
  pr->add_option("--model", model, "PSM checkpoint")->required();
  pr->add_option("--pool", pool, "embedding pool CSV");
  pr->add_flag("--ablation", ablation, "the checkpoint is the without-embedding variant");
  pr->add_option("--user", user, "user id")->required();
  pr->add_option("--stimulus", stimulus, "stimulus id")->required();
  pr->add_option("-o,--out", out, "output PFM path")->required();

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every op and both models");
  gc->add_flag("--self-test-fault", fault, "include an op with a deliberately wrong backward");

  auto* ex = app.add_subcommand("export", "dump a checkpoint as TSV");
  ex->add_option("--checkpoint", checkpoint, "GZEB checkpoint")->required();
  ex->add_option("-o,--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  setup_logging(verbosity);
  try {
    if (gc->parsed()) {
      cmd_grad_check(fault);
      return 0;
    }
    if (ex->parsed()) {
      cmd_export(checkpoint, resolve_out(out));
      return 0;
    }
    const auto cfg = common.resolve();
    if (gen->parsed()) cmd_gen_data(cfg, resolve_out(out), force);
    if (te->parsed()) cmd_train_embed(cfg, data, resolve_out(out), resume);
    if (po->parsed()) cmd_pool(cfg, data, embed, resolve_out(out));
    if (tp->parsed()) cmd_train_psm(cfg, data, pool, !ablation_flag.empty(), resolve_out(out), resume);
    if (ev->parsed()) cmd_eval(cfg, data, eval_args, resolve_out(out));
    if (pr->parsed()) cmd_predict(cfg, data, model, pool, ablation, user, stimulus, resolve_out(out));
    return 0;
  } catch (const CoverageError& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.kind());
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 1;
  }
}

}  // namespace gzeb
