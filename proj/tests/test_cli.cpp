#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "echoflow/cli.hpp"

using namespace echoflow;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  const auto bytes = read_file_bytes(p.string());
  return std::string(bytes.begin(), bytes.end());
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "echoflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::parse_and_dispatch(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Small enough for a few seconds of CPU end to end.
const char* kTinyConfig = R"(
[synth]
n = 24
frames = 12
height = 16
width = 16
[data]
clip_len = 8
n_clips = 2
[flow]
pyramid_levels = 2
window_size = 5
[model]
depth = r3d10
base_channels = 2
[train]
epochs = 2
batch_size = 4
lr = 1e-3
patience = 2
ensemble = 2
)";

class CliRun : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / "echoflow_cli_test";
  std::string cfg;
  void SetUp() override {
    fs::remove_all(dir);
    fs::create_directories(dir);
    cfg = (dir / "tiny.ini").string();
    stats::write_text(cfg, kTinyConfig);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  const auto c = config_parse("");
  const auto t = c.train_config();
  EXPECT_EQ(t.clip_len, 32u);
  EXPECT_EQ(t.n_eval_clips, 5u);
  EXPECT_EQ(t.epochs, 50u);
  EXPECT_EQ(t.batch_size, 8u);
  EXPECT_EQ(t.lr, 1e-5);
  EXPECT_EQ(t.patience, 5u);
  EXPECT_EQ(c.impute.pmm.m, 20u);
  EXPECT_EQ(c.impute.pmm.maxit, 50u);
  EXPECT_EQ(c.impute.pmm.donors, 5u);
  EXPECT_EQ(c.train.ensemble, 3u);
  EXPECT_EQ(c.model.config.blocks, nn::depth_blocks("r3d152"));
  EXPECT_EQ(c.eval.transform, stats::PoolTransform::log);
  EXPECT_EQ(c.eval.aggregation, stats::Aggregation::mean);
  EXPECT_EQ(c.data.preprocess.out_height, 112u);
  EXPECT_FALSE(c.seed_set);
}

TEST(Config, Precedence) {
  const std::string file = "[train]\nlr = 1e-3\nepochs = 7\n";
  EXPECT_EQ(config_parse(file).train_config().lr, 1e-3);
  const auto c = config_parse(file, {"train.lr=1e-4"});
  EXPECT_EQ(c.train_config().lr, 1e-4);
  EXPECT_EQ(c.train_config().epochs, 7u);
  EXPECT_NE(format_config(c).find("lr = " + stats::format_double(1e-4) + "\n"), std::string::npos);
  EXPECT_EQ(config_parse(file, {"train.lr=1e-4", "train.lr=2e-4"}).train_config().lr, 2e-4);  // later wins
}

TEST(Config, UnknownKeysAreNamed) {
  for (const auto& [file, over, key] : std::vector<std::tuple<std::string, std::string, std::string>>{
           {"[train]\nlearning_rate = 1\n", "", "train.learning_rate"},
           {"[trian]\nlr = 1\n", "", "trian.lr"},
           {"", "model.dept=r3d10", "model.dept"},
           {"sed = 3\n", "", "sed"}}) {
    try {
      config_parse(file, over.empty() ? std::vector<std::string>{} : std::vector<std::string>{over});
      FAIL() << key;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::config);
      EXPECT_NE(std::string(e.what()).find("'" + key + "'"), std::string::npos) << e.what();
    }
  }
}

TEST(Config, BadValuesRejected) {
  for (const std::string o : {"train.lr=abc", "train.epochs=-1", "augment.scale=1.2,0.8", "model.depth=r3d11",
                              "eval.level=scanz", "model.batch_norm=maybe", "predict.split=holdout",
                              "train.patience=60", "data.split_train=0.9", "no_equals_sign"})
    EXPECT_THROW(config_parse("", {o}), Error) << o;
}

TEST(Config, ResolvedRoundTrips) {
  const std::vector<std::string> overrides{"seed=99",
                                           "data.manifest=/x/m.csv",
                                           "train.lr=3.3e-4",
                                           "augment.rotation=-7.5,2.25",
                                           "model.streams=gray",
                                           "model.batch_norm=false",
                                           "eval.transform=logit",
                                           "saliency.project=max-over-time",
                                           "flow.poly_sigma=1.5"};
  const auto c = config_parse("", overrides);
  const auto text = format_config(c);
  const auto back = config_parse(text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_TRUE(back.seed_set);
  EXPECT_EQ(back.model.config, c.model.config);
  EXPECT_EQ(back.augment.rotation_deg.lo, -7.5);
  // every key exactly once
  for (const auto& key : config_keys()) {
    const auto leaf = key.substr(key.find('.') + 1) + " = ";
    std::size_t hits = 0;
    std::istringstream in(text);
    std::string section, line;
    while (std::getline(in, line)) {
      if (!line.empty() && line[0] == '[') section = line.substr(1, line.size() - 2);
      const std::string full = section.empty() ? line.substr(0, line.find(" = ")) : section + "." + line.substr(0, line.find(" = "));
      hits += line.rfind(leaf, 0) == 0 && full == key;
    }
    EXPECT_EQ(hits, 1u) << key;
  }
}

TEST(ParallelFor, CoversAllAndRethrowsLowestIndex) {
  std::vector<int> hit(100, 0);
  cli::parallel_for(hit.size(), [&](std::size_t i) { hit[i] += 1; }, 4);
  for (int h : hit) EXPECT_EQ(h, 1);
  try {
    cli::parallel_for(50, [](std::size_t i) {
      if (i == 17 || i == 33) throw Error(ErrorCode::io, std::to_string(i));
    }, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "17");
  }
}

TEST(Cli, UsageErrorsAreOneLine) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"bogus"}, {"eval", "--nonsense"}, {"train", "--seed"}}) {
    const auto r = run(args);
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  }
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST_F(CliRun, PipelineErrorsCarryCode) {
  auto r = run({"train", "--set", "train.lrr=1", "--out", at("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "error: config: unknown config key 'train.lrr'\n");
  r = run({"train", "--manifest", at("missing.csv"), "--seed", "1", "--out", at("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: io: ", 0), 0u);
  r = run({"synth", "--n", "20", "--out", at("x")});  // seed is mandatory
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST_F(CliRun, SynthWritesCorpus) {
  const auto r = run({"synth", "--n", "64", "--seed", "7", "--set", "synth.frames=4", "--set", "synth.height=16",
                      "--set", "synth.width=16", "--out", at("s1")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_manifest(at("s1/manifest.csv"));
  ASSERT_EQ(m.rows.size(), 64u);
  std::size_t pos = 0;
  for (const auto& row : m.rows) {
    EXPECT_NE(row.split, Split::unassigned);
    EXPECT_EQ(read_video(m.resolve(row.video_path)).frames, 4u);
    pos += std::size_t(row.label);
  }
  EXPECT_EQ(pos, 16u);
  EXPECT_TRUE(fs::exists(at("s1/config.resolved")));
}

TEST_F(CliRun, EvalReportSchema) {
  std::vector<stats::ScoredSample> s;
  for (int i = 0; i < 20; ++i)
    s.push_back({0.05 * i + (i % 3 == 0 ? 0.3 : 0.0), int(i % 3 == 0), "s" + std::to_string(i), "p" + std::to_string(i / 2)});
  // patient labels must agree across a patient's scans
  for (auto& x : s) x.label = std::stoi(x.patient_id.substr(1)) % 3 == 0;
  stats::write_predictions(at("preds.csv"), s);
  const auto r = run({"eval", "--pred", at("preds.csv"), "--level", "patient", "--out", at("e")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "e" / "metrics.json"));
  for (const char* key : {"auc", "ci_low", "ci_high", "pr_auc", "operating_point_sensitivity",
                          "operating_point_specificity"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["n"], 10);
  EXPECT_EQ(j["level"], "patient");
  EXPECT_TRUE(j["operating_point_sensitivity"].contains("threshold"));
  EXPECT_GE(j["operating_point_sensitivity"]["sensitivity"].get<double>(), 0.8);
  EXPECT_GE(j["operating_point_specificity"]["specificity"].get<double>(), 0.8);
  EXPECT_TRUE(fs::exists(dir / "e" / "roc.csv"));
  EXPECT_TRUE(fs::exists(dir / "e" / "pr.csv"));
}

TEST_F(CliRun, EndToEndAndRerunFromResolved) {
  ASSERT_EQ(run({"synth", "--config", cfg, "--seed", "7", "--out", at("s")}).code, 0);
  ASSERT_EQ(run({"flow", "--config", cfg, "--manifest", at("s/manifest.csv"), "--out", at("f")}).code, 0);
  auto r = run({"train", "--config", cfg, "--manifest", at("f/manifest.csv"), "--seed", "7", "--out", at("t")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"train", "--config", cfg, "--manifest", at("f/manifest.csv"), "--seed", "7", "--out", at("t_again")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model_0.ckpt", "model_1.ckpt", "history_0.csv"})
    EXPECT_EQ(slurp(dir / "t" / f), slurp(dir / "t_again" / f)) << f;
  EXPECT_NE(slurp(dir / "t" / "model_0.ckpt"), slurp(dir / "t" / "model_1.ckpt"));

  r = run({"predict", "--config", cfg, "--manifest", at("f/manifest.csv"), "--models",
           at("t/model_0.ckpt") + "," + at("t/model_1.ckpt"), "--split", "all", "--out", at("p")});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(stats::read_predictions(at("p/predictions.csv")).size(), 24u);
  r = run({"saliency", "--config", cfg, "--manifest", at("f/manifest.csv"), "--model", at("t/model_0.ckpt"),
           "--out", at("g")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "g" / "saliency.csv"));

  // each stage rerun from its own config.resolved into a fresh directory
  for (const std::string stage : {"s", "f", "t", "p", "g"}) {
    const std::string sub = stage == "s" ? "synth" : stage == "f" ? "flow" : stage == "t" ? "train"
                                                   : stage == "p" ? "predict" : "saliency";
    r = run({sub, "--config", at(stage + "/config.resolved"), "--out", at(stage + "2")});
    ASSERT_EQ(r.code, 0) << sub << ": " << r.err;
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / stage)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir / stage);
      EXPECT_EQ(slurp(e.path()), slurp(dir / (stage + "2") / rel)) << sub << " " << rel;
      ++files;
    }
    EXPECT_GT(files, 1u);
  }
}

TEST_F(CliRun, ImputeWritesSetsAndPooledAucs) {
  Rng rng(3);
  std::string csv = "id,score_a,score_b,outcome\n";
  for (int i = 0; i < 40; ++i) {
    const int y = i % 3 == 0;
    const double a = y + standard_normal(rng), b = 0.5 * y + standard_normal(rng);
    csv += "r" + std::to_string(i) + "," + (i % 4 == 1 ? "" : stats::format_double(a)) + "," +
           (i % 5 == 2 ? "" : stats::format_double(b)) + "," + std::to_string(y) + "\n";
  }
  stats::write_text(at("data.csv"), csv);
  const auto r = run({"impute", "--data", at("data.csv"), "--label-column", "outcome", "--set", "impute.m=4",
                      "--set", "impute.maxit=3", "--seed", "5", "--out", at("i")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "i" / "imputed" / "imputation_004.csv"));
  const auto imputed = stats::read_data_matrix(at("i/imputed/imputation_001.csv"));
  EXPECT_EQ(imputed.missing_count(), 0u);
  const auto j = nlohmann::json::parse(slurp(dir / "i" / "pooled.json"));
  ASSERT_TRUE(j.contains("score_a"));
  EXPECT_FALSE(j.contains("outcome"));
  EXPECT_EQ(j["score_a"]["m"], 4);
  EXPECT_GT(j["score_a"]["auc"].get<double>(), 0.5);
  EXPECT_LE(j["score_a"]["ci_low"].get<double>(), j["score_a"]["auc"].get<double>());
}

TEST_F(CliRun, PreprocessRgbToGray) {
  Manifest m;
  m.base_dir = dir;
  fs::create_directories(dir / "raw");
  Rng rng(1);
  for (int i = 0; i < 3; ++i) {
    VideoTensor v(5, 40, 48, 3);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t y = 8; y < 32; ++y)
        for (std::size_t x = 8; x < 40; ++x)
          for (std::size_t c = 0; c < 3; ++c) v.at(t, y, x, c) = float(uniform(rng, 0.0, 200.0));
    const std::string id = "raw" + std::to_string(i);
    write_video(at("raw/" + id + ".etns"), v);
    m.rows.push_back({id, "p" + std::to_string(i), "raw/" + id + ".etns", "", i % 2, Split::test});
  }
  write_manifest(at("raw.csv"), m);
  const auto r = run({"preprocess", "--manifest", at("raw.csv"), "--set", "data.height=16", "--set", "data.width=24",
                      "--out", at("pp")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = read_manifest(at("pp/manifest.csv"));
  ASSERT_EQ(out.rows.size(), 3u);
  for (const auto& row : out.rows) {
    const auto v = read_video(out.resolve(row.video_path));
    EXPECT_EQ(v.channels, 1u);
    EXPECT_EQ(v.height, 16u);
    EXPECT_EQ(v.width, 24u);
    float peak = 0;
    for (float x : v.data) peak = std::max(peak, x);
    EXPECT_LE(peak, 1.0f);
    EXPECT_TRUE(row.flow_path.empty());
  }
  ASSERT_EQ(run({"preprocess", "--config", at("pp/config.resolved"), "--out", at("pp2")}).code, 0);
  EXPECT_EQ(slurp(dir / "pp" / "manifest.csv"), slurp(dir / "pp2" / "manifest.csv"));
  EXPECT_EQ(slurp(dir / "pp" / "videos" / "raw1.etns"), slurp(dir / "pp2" / "videos" / "raw1.etns"));
}
