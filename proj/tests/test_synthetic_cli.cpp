#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "rtknet/numerics.hpp"
#include "rtknet/synthetic.hpp"

using namespace rtknet;
namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  if (out_text) *out_text = out.str();
  return code;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rtknet_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synthetic, SingleStuffCoversImage) {
  SyntheticSceneSpec spec;
  spec.height = 8;
  spec.width = 12;
  spec.num_things = 0;
  spec.num_stuff = 1;
  spec.channels = 4;
  const SyntheticScene s = generate_synthetic_scene(spec);
  ASSERT_EQ(s.scene.segments.size(), 1u);
  EXPECT_EQ(s.scene.segments[0].mask.area(), 96u);
  EXPECT_FALSE(s.scene.segments[0].is_thing);
}

TEST(Synthetic, EmbeddingsAndArgmaxRecoverPartition) {
  SyntheticSceneSpec spec;
  spec.height = 32;
  spec.width = 48;
  spec.channels = 16;
  spec.seed = 3;
  const SyntheticScene s = generate_synthetic_scene(spec);
  const std::size_t n = s.scene.segments.size(), c = spec.channels;
  ASSERT_EQ(n, 6u);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      double dot = 0.0, mean = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        dot += double(s.embeddings(a, k)) * s.embeddings(b, k);
        mean += s.embeddings(a, k);
      }
      EXPECT_NEAR(dot, a == b ? double(c) : 0.0, 1e-4);
      EXPECT_NEAR(mean, 0.0, 1e-4);
    }
  // Every pixel's best-matching embedding is its own segment.
  const Tensor logits = mask_logits(s.embeddings.reshaped({1, n, c}), s.features);
  const std::size_t hw = 32 * 48;
  std::size_t covered = 0;
  for (std::size_t seg = 0; seg < n; ++seg)
    for (std::size_t p = 0; p < hw; ++p) {
      if (!s.scene.segments[seg].mask.bits[p]) continue;
      ++covered;
      for (std::size_t o = 0; o < n; ++o)
        if (o != seg) {
          EXPECT_GT(logits[seg * hw + p], logits[o * hw + p]);
        }
    }
  EXPECT_EQ(covered, hw);
}

TEST(Synthetic, DeterministicAndValidated) {
  SyntheticSceneSpec spec;
  spec.noise = 0.3;
  spec.seed = 9;
  const SyntheticScene a = generate_synthetic_scene(spec), b = generate_synthetic_scene(spec);
  EXPECT_EQ(a.scene, b.scene);
  EXPECT_EQ(a.features, b.features);
  spec.channels = 4;  // 6 segments cannot be orthogonal and zero-mean in 4 dims
  EXPECT_THROW(generate_synthetic_scene(spec), GenerationError);
  EXPECT_EQ(synthetic_spec_from_json(synthetic_spec_to_json(spec)).channels, 4u);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({}), kExitUsage);
  EXPECT_EQ(run({"no-such-command"}), kExitUsage);
  EXPECT_EQ(run({"gen"}), kExitUsage);  // --out missing
  EXPECT_EQ(run({"--config", "/nonexistent/config.json", "gradcheck"}), kExitUsage);
  const fs::path dir = scratch("missing");
  EXPECT_EQ(run({"infer", "--weights", (dir / "w").string(), "--features", (dir / "f.json").string(), "--out",
                 (dir / "o.json").string()}),
            kExitFailure);
}

TEST(Cli, GenIsByteReproducibleAndEvaluatesPerfectly) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const std::vector<std::string> common{"--height", "24", "--width", "40", "--things", "2", "--channels", "8"};
  auto gen = [&](const fs::path& out) {
    std::vector<std::string> args{"--seed", "5", "gen", "--out", out.string(), "--count", "2"};
    args.insert(args.end(), common.begin(), common.end());
    return run(args);
  };
  ASSERT_EQ(gen(a), kExitOk);
  ASSERT_EQ(gen(b), kExitOk);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path twin = b / fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(twin)) << twin;
    EXPECT_EQ(slurp(e.path()), slurp(twin)) << e.path();
  }
  EXPECT_GT(files, 8u);

  const fs::path scene = a / "scene_000";
  ASSERT_EQ(run({"infer", "--weights", (scene / "oracle_weights").string(), "--features",
                 (scene / "features").string(), "--out", (scene / "pred").string()}),
            kExitOk);
  std::string text;
  ASSERT_EQ(run({"eval-pq", "--pred", (scene / "pred").string(), "--gt", (scene / "gt").string()}, &text), kExitOk);
  const nlohmann::json pq = nlohmann::json::parse(text);
  EXPECT_EQ(pq["pq"].get<double>(), 1.0);
}

TEST(Cli, GradcheckAndAugmentStats) {
  std::string text;
  ASSERT_EQ(run({"--seed", "2", "gradcheck", "--instances", "3"}, &text), kExitOk);
  EXPECT_NE(text.find("dice"), std::string::npos);
  ASSERT_EQ(run({"augment-stats", "--trials", "200"}, &text), kExitOk);
  const nlohmann::json st = nlohmann::json::parse(text);
  EXPECT_GT(st["instance_aware_rate"].get<double>(), st["random_rate"].get<double>());
}

TEST(Cli, BenchWritesCsv) {
  std::string text;
  ASSERT_EQ(run({"bench-postproc", "--n", "4", "--hw", "16x16", "--runs", "2", "--warmup", "0"}, &text), kExitOk);
  EXPECT_EQ(text.rfind("method,n_masks,height,width,threads,run_index,millis", 0), 0u);
  EXPECT_EQ(run({"bench-postproc", "--hw", "16by16"}), kExitUsage);
}
