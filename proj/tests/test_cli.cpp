#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "gzeb/checkpoint.hpp"
#include "gzeb/cli.hpp"
#include "gzeb/error.hpp"
#include "gzeb/image_io.hpp"
#include "gzeb/run_config.hpp"

namespace fs = std::filesystem;
using namespace gzeb;

namespace {

const char* const kTinyConfig = R"(# tiny run for command tests
seed = 3

[data]
n_users = 6
n_stimuli = 40
width = 32
height = 24
train_users = 4
test_users = 2

[embed]
m = 2
dim = 8
users_per_batch = 4
draws_per_user = 2
width = 32
height = 24
channels = 4,8,8,8
epochs = 3
steps_per_epoch = 3
pool_size = 3

[psm]
width = 32
height = 24
channels = 4,8,8
n_filters = 4
hidden = 8
batch = 8
epochs = 3
decay_every = 1   # halve every epoch so a resume has to get the schedule right
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gzeb_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = (dir_ / "tiny.conf").string();
    std::ofstream(config_) << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), {"gzeb", "-q"});
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
  }
  int run_cfg(std::vector<std::string> args) {
    args.insert(args.begin(), {"-c", config_});
    return run(std::move(args));
  }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }

  void make_data() { ASSERT_EQ(run_cfg({"gen-data", "-o", p("data")}), 0); }
  void make_embed() {
    make_data();
    ASSERT_EQ(run_cfg({"train-embed", "-d", p("data"), "-o", p("emb")}), 0);
    ASSERT_EQ(run_cfg({"pool", "-d", p("data"), "--embed", p("emb/model.gzeb"), "-o", p("pool")}), 0);
  }

  fs::path dir_;
  std::string config_;
};

}  // namespace

TEST(RunConfigParse, SectionsCommentsAndOverrides) {
  auto cfg = RunConfig::parse("seed = 9  # trailing\n\n[embed]\nm = 4\n[psm]\nsupervision = summed\n");
  EXPECT_EQ(cfg.seed(), 9u);
  EXPECT_EQ(cfg.get_size("embed.m"), 4u);
  EXPECT_EQ(cfg.get("psm.supervision"), "summed");
  EXPECT_EQ(cfg.get_size("embed.dim"), 32u);
  cfg.set("embed.m=6");
  EXPECT_EQ(cfg.embed_config().pairs_per_draw, 6u);
}

TEST(RunConfigParse, UnknownOrMalformedInputIsRejected) {
  EXPECT_THROW(RunConfig::parse("[embed]\nmargn = 0.1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[optim]\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("seed 4\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("m = 4\n"), ConfigError);  // embed key outside its section
  EXPECT_THROW(RunConfig::parse("[embed]\nm = four\n").embed_config(), ConfigError);
  EXPECT_THROW(RunConfig().set("psm.nope=1"), ConfigError);
  try {
    RunConfig::parse("seed = 1\n[embed]\nmargn = 0.1\n", "run.conf");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.conf:3"), std::string::npos) << e.what();
  }
}

TEST(RunConfigParse, DefaultsMatchTrainingRecipe) {
  const RunConfig cfg;
  const auto e = cfg.embed_config();
  EXPECT_DOUBLE_EQ(e.margin, 0.05);
  EXPECT_DOUBLE_EQ(e.lr, 0.001);
  EXPECT_DOUBLE_EQ(e.dropout, 0.5);
  EXPECT_EQ(e.batch_draws(), 256u);
  const auto ps = cfg.psm_config(32);
  EXPECT_DOUBLE_EQ(ps.schedule.initial_lr, 0.02);
  EXPECT_DOUBLE_EQ(ps.momentum, 0.9);
  EXPECT_DOUBLE_EQ(ps.weight_decay, 0.0005);
  EXPECT_EQ(ps.batch, 32u);
  EXPECT_EQ(ps.schedule.decay_every, 25u);
  EXPECT_EQ(ps.width, 160u);
  EXPECT_EQ(ps.height, 120u);
}

TEST(RunConfigParse, ResolvedTextRoundTrips) {
  auto cfg = RunConfig::parse("[data]\nprofile.u01.center_bias = 0.3\n[eval]\nm_list = 2,8\n");
  const auto text = cfg.resolved_text();
  EXPECT_NE(text.find("margin = 0.05"), std::string::npos);
  EXPECT_NE(text.find("profile.u01.center_bias = 0.3"), std::string::npos);
  EXPECT_EQ(RunConfig::parse(text).resolved_text(), text);
}

TEST_F(Cli, GenDataWritesEveryMapDeterministically) {
  ASSERT_EQ(run_cfg({"--set", "data.n_stimuli=40", "gen-data", "-o", p("a")}), 0);
  ASSERT_EQ(run_cfg({"--set", "data.n_stimuli=40", "gen-data", "-o", p("b")}), 0);
  std::size_t maps = 0;
  for (const auto& f : fs::recursive_directory_iterator(p("a/maps"))) {
    if (f.path().extension() != ".pfm") continue;
    ++maps;
    const auto twin = fs::path(p("b")) / fs::relative(f.path(), p("a"));
    EXPECT_EQ(slurp(f.path()), slurp(twin)) << f.path();
  }
  EXPECT_EQ(maps, 6u * 40u);
  EXPECT_NE(slurp(p("a/generation.tsv")).find("seed\t3"), std::string::npos);
  EXPECT_TRUE(fs::exists(p("a/config.resolved")));
}

TEST_F(Cli, GenDataRefusesNonEmptyDirectoryWithoutForce) {
  make_data();
  EXPECT_EQ(run_cfg({"gen-data", "-o", p("data")}), 2);
  EXPECT_EQ(run_cfg({"gen-data", "-o", p("data"), "--force"}), 0);
}

TEST_F(Cli, InvalidProfileNamesTheProfile) {
  testing::internal::CaptureStderr();
  const int code = run_cfg({"--set", "data.profile.u02.class_weights=0.5,0.9,-0.4", "gen-data", "-o", p("bad")});
  const auto err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.find("u02"), std::string::npos) << err;
}

TEST_F(Cli, UnknownKeyAndBadUsageExitWithConfigCode) {
  EXPECT_EQ(run_cfg({"--set", "embed.lr_typo=1", "gen-data", "-o", p("x")}), 2);
  EXPECT_EQ(run({"train-embed"}), 2);
  EXPECT_EQ(run({"no-such-command"}), 2);
  EXPECT_EQ(run({"-c", p("missing.conf"), "gen-data", "-o", p("x")}), 2);
}

TEST_F(Cli, MissingOrIncompleteDatasetIsDataError) {
  EXPECT_EQ(run_cfg({"train-embed", "-d", p("nowhere"), "-o", p("emb")}), 3);
  make_data();
  fs::remove(p("data/maps/u01/s0007.pfm"));
  testing::internal::CaptureStderr();
  const int code = run_cfg({"train-embed", "-d", p("data"), "-o", p("emb")});
  const auto err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 3);
  EXPECT_NE(err.find("u01"), std::string::npos) << err;
  EXPECT_NE(err.find("s0007"), std::string::npos) << err;
}

TEST_F(Cli, TrainEmbedWritesCheckpointsAndLossTable) {
  make_data();
  ASSERT_EQ(run_cfg({"train-embed", "-d", p("data"), "-o", p("emb")}), 0);
  for (const char* f : {"checkpoints/epoch_0001.gzeb", "checkpoints/epoch_0003.gzeb", "model.gzeb", "config.resolved"})
    EXPECT_TRUE(fs::exists(p("emb/") + f)) << f;
  const auto loss = slurp(p("emb/loss.tsv"));
  EXPECT_EQ(loss.rfind("step\tepoch\tlr\tloss\n", 0), 0u);
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 1 + 9);
}

TEST_F(Cli, InterruptedRunsResumeIdentically) {
  make_embed();
  ASSERT_EQ(run_cfg({"train-psm", "-d", p("data"), "--pool", p("pool/pool.csv"), "-o", p("psm")}), 0);
  for (const char* run_dir : {"emb", "psm"}) {
    const auto copy = p(std::string(run_dir) + "_cut");
    fs::copy(p(run_dir), copy, fs::copy_options::recursive);
    // Simulate a crash during epoch 3: its checkpoint and the final model never appeared.
    fs::remove(fs::path(copy) / "checkpoints/epoch_0003.gzeb");
    fs::remove(fs::path(copy) / "model.gzeb");
    const int code = std::string(run_dir) == "emb"
                         ? run_cfg({"train-embed", "-d", p("data"), "-o", copy, "--resume"})
                         : run_cfg({"train-psm", "-d", p("data"), "--pool", p("pool/pool.csv"), "-o", copy, "--resume"});
    ASSERT_EQ(code, 0);
    EXPECT_EQ(slurp(fs::path(copy) / "model.gzeb"), slurp(p(run_dir) + "/model.gzeb")) << run_dir;
    EXPECT_EQ(slurp(fs::path(copy) / "loss.tsv"), slurp(p(run_dir) + "/loss.tsv")) << run_dir;
  }
  // The lr column follows the per-epoch halving across the resume point.
  const auto loss = slurp(p("psm_cut/loss.tsv"));
  EXPECT_NE(loss.find("\t2\t0.005\t"), std::string::npos) << loss;
}

TEST_F(Cli, AblationCheckpointHasNoHypernetwork) {
  make_data();
  ASSERT_EQ(run_cfg({"train-psm", "-d", p("data"), "--ablation", "without_embedding", "-o", p("abl")}), 0);
  const auto entries = read_checkpoint(p("abl/model.gzeb"));
  ASSERT_FALSE(entries.empty());
  for (const auto& e : entries) EXPECT_NE(e.name.rfind("hyper.", 0), 0u) << e.name;
  EXPECT_NE(find_entry(entries, "cond.weight"), nullptr);
  EXPECT_EQ(run_cfg({"train-psm", "-d", p("data"), "-o", p("nopool")}), 2);
}

TEST_F(Cli, EvalReportsAreCompleteAndReproducible) {
  make_embed();
  ASSERT_EQ(run_cfg({"train-psm", "-d", p("data"), "--pool", p("pool/pool.csv"), "-o", p("full")}), 0);
  ASSERT_EQ(run_cfg({"train-psm", "-d", p("data"), "--ablation", "without_embedding", "-o", p("abl")}), 0);
  const std::vector<std::string> eval{"eval",   "-d",   p("data"),         "--embed",          p("emb/model.gzeb"),
                                      "--pool", p("pool/pool.csv"),      "--full",           p("full/model.gzeb"),
                                      "--ablation-model", p("abl/model.gzeb"), "--protocol", "closed",
                                      "--m-list", "2,4,8"};
  auto first = eval, second = eval;
  first.insert(first.end(), {"-o", p("ev1")});
  second.insert(second.end(), {"-o", p("ev2")});
  ASSERT_EQ(run_cfg(first), 0);
  ASSERT_EQ(run_cfg(second), 0);

  const auto table = slurp(p("ev1/eval.tsv"));
  EXPECT_EQ(table.rfind("model\tset\tcc\tsim\tauc\tnss\tkld\n", 0), 0u);
  for (const char* row : {"\ngt_usm\tclosed\t", "\nwithout_embedding\tclosed\t", "\nwith_embedding\tclosed\t"})
    EXPECT_NE(table.find(row), std::string::npos) << row;
  const auto acc = slurp(p("ev1/accuracy.tsv"));
  EXPECT_EQ(std::count(acc.begin(), acc.end(), '\n'), 4);
  EXPECT_TRUE(fs::exists(p("ev1/embeddings.csv")));
  EXPECT_TRUE(fs::exists(p("ev1/eval_per_user.tsv")));
  EXPECT_NE(slurp(p("ev1/eval_meta.tsv")).find("map_width\t4"), std::string::npos);
  std::size_t previews = 0;
  for (const auto& f : fs::recursive_directory_iterator(p("ev1/psm"))) previews += f.path().extension() == ".pfm";
  EXPECT_GT(previews, 0u);

  for (const char* f : {"eval.tsv", "eval_per_user.tsv", "accuracy.tsv", "embeddings.csv"})
    EXPECT_EQ(slurp(p("ev1/") + f), slurp(p("ev2/") + f)) << f;
}

TEST_F(Cli, ProtocolIncompatibleWithSplitsIsUsageError) {
  ASSERT_EQ(run_cfg({"--set", "data.train_users=6", "--set", "data.test_users=0", "gen-data", "-o", p("data")}), 0);
  EXPECT_EQ(run_cfg({"eval", "-d", p("data"), "--protocol", "open", "-o", p("ev")}), 2);
  EXPECT_EQ(run_cfg({"eval", "-d", p("data"), "--protocol", "sideways", "-o", p("ev")}), 2);
  EXPECT_EQ(run_cfg({"eval", "-d", p("data"), "--protocol", "closed", "-o", p("ev")}), 0);
}

TEST_F(Cli, PredictWritesOneMap) {
  make_embed();
  ASSERT_EQ(run_cfg({"train-psm", "-d", p("data"), "--pool", p("pool/pool.csv"), "-o", p("full")}), 0);
  ASSERT_EQ(run_cfg({"predict", "-d", p("data"), "--model", p("full/model.gzeb"), "--pool", p("pool/pool.csv"),
                     "--user", "u04", "--stimulus", "s0002", "-o", p("pred/u04.pfm")}),
            0);
  const auto map = read_pfm(p("pred/u04.pfm"));
  EXPECT_EQ(map.width, 4u);
  EXPECT_EQ(map.height, 3u);
  EXPECT_TRUE(fs::exists(p("pred/u04.pgm")));
  EXPECT_EQ(run_cfg({"predict", "-d", p("data"), "--model", p("full/model.gzeb"), "--pool", p("pool/pool.csv"),
                     "--user", "nobody", "--stimulus", "s0002", "-o", p("pred/x.pfm")}),
            2);
}

TEST_F(Cli, GradCheckExitCodesAndReport) {
  testing::internal::CaptureStdout();
  EXPECT_EQ(run({"grad-check"}), 0);
  const auto report = testing::internal::GetCapturedStdout();
  EXPECT_NE(report.find("max_rel_err"), std::string::npos);
  EXPECT_NE(report.find("dynamic_conv2d"), std::string::npos);
  EXPECT_EQ(report.find("FAIL"), std::string::npos);
  testing::internal::CaptureStdout();
  EXPECT_EQ(run({"grad-check", "--self-test-fault"}), 4);
  EXPECT_NE(testing::internal::GetCapturedStdout().find("faulty_square"), std::string::npos);
}

TEST_F(Cli, ExportAndOutputRoot) {
  make_data();
  ::setenv("GZEB_OUT_ROOT", dir_.c_str(), 1);
  const int code = run_cfg({"train-psm", "-d", p("data"), "--ablation", "without_embedding", "-o", "rooted"});
  ::unsetenv("GZEB_OUT_ROOT");
  ASSERT_EQ(code, 0);
  ASSERT_TRUE(fs::exists(p("rooted/model.gzeb")));
  ASSERT_EQ(run({"export", "--checkpoint", p("rooted/model.gzeb"), "-o", p("exported")}), 0);
  const auto index = slurp(p("exported/entries.tsv"));
  EXPECT_NE(index.find("cond.weight\t[4x8x3x3]\t288\t"), std::string::npos) << index;
  EXPECT_TRUE(fs::exists(p("exported/values/head.conv_b.weight.tsv")));
  EXPECT_EQ(run({"export", "--checkpoint", p("nothing.gzeb"), "-o", p("e2")}), 2);
}
