#include <doctest.h>

#include <filesystem>
#include <regex>
#include <sstream>

#include "binsplat/binary_codec.hpp"
#include "binsplat/cli.hpp"
#include "binsplat/io.hpp"
#include "binsplat/parallel.hpp"
#include "test_util.hpp"

using namespace binsplat;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "binsplat");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  set_num_threads(0);
  return {code, out.str(), err.str()};
}

// Small two-level scene written by `synth`.
void small_synth(const testutil::TempDir& dir, const std::string& name = "scene") {
  testutil::write_text(dir.file("spec.txt"),
                       "tree = 2/1,2\nlevel_dims = 4,4\nviews = 3\nwidth = 24\nheight = 24\ngaussians_per_leaf = 15\n");
  const Run r = cli({"synth", "--spec", dir.file("spec.txt"), "--out", dir.file(name), "--seed", "4"});
  REQUIRE(r.code == 0);
}

double level_miou(const std::string& table, int level) {
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream row(line);
    int l = 0;
    double miou = 0;
    if (row >> l >> miou && l == level) return miou;
  }
  return -1;
}

}  // namespace

TEST_CASE("inspect reports the code payload") {
  testutil::TempDir dir("cli_inspect");
  write_codes(dir.file("c.bgc"), CodeTable{LevelLayout({8, 12, 12}), std::vector<uint32_t>(100, 3u)});
  const Run r = cli({"inspect", dir.file("c.bgc")});
  CHECK(r.code == 0);
  CHECK(r.out.find("codes: 100, payload: 400 bytes") != std::string::npos);

  testutil::write_text(dir.file("junk.bin"), "XXXXjunk");
  CHECK(cli({"inspect", dir.file("junk.bin")}).code == 2);
}

TEST_CASE("usage errors exit 1") {
  testutil::TempDir dir("cli_usage");
  small_synth(dir);
  const std::string s = dir.file("scene");
  write_codes(dir.file("c.bgc"), extract_codes(read_scene(s + "/scene.bgs")));
  const Run r = cli({"render-class", "--scene", s + "/scene.bgs", "--codes", dir.file("c.bgc"), "--cameras",
                     s + "/cameras.txt", "--camera", "0", "--level", "0", "--out", dir.file("x.bgm")});
  CHECK(r.code == 1);
  CHECK(r.err.find("1-based") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.file("x.bgm")));
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"train", "--masks", s + "/masks", "--cameras", s + "/cameras.txt", "--out", dir.file("t")}).code == 1);
}

TEST_CASE("nesting violation exits 2 before anything is written") {
  testutil::TempDir dir("cli_nesting");
  small_synth(dir);
  const std::string s = dir.file("scene");
  MaskImage bad = read_mask_image(s + "/masks/view_000.bgm");
  // one level-2 id under two different level-1 parents
  std::size_t a = 0, b = 0;
  for (std::size_t i = 0; i < bad.levels[0].size(); ++i) {
    if (bad.levels[0][i] == 1) a = i;
    if (bad.levels[0][i] == 2) b = i;
  }
  REQUIRE(bad.levels[0][a] != bad.levels[0][b]);
  bad.levels[1][b] = bad.levels[1][a];
  write_mask_image(s + "/masks/view_000.bgm", bad);
  const Run r = cli({"train", "--scene", s + "/scene.bgs", "--masks", s + "/masks", "--cameras", s + "/cameras.txt",
                     "--out", dir.file("out"), "--iterations", "5"});
  CHECK(r.code == 2);
  CHECK(r.err.find("nest") != std::string::npos);
  CHECK_FALSE(fs::exists(dir.file("out")));
}

TEST_CASE("non-finite training exits 3") {
  testutil::TempDir dir("cli_numeric");
  small_synth(dir);
  const std::string s = dir.file("scene");
  testutil::write_text(dir.file("cfg.txt"), "lr_features = inf\n");
  const Run r = cli({"train", "--scene", s + "/scene.bgs", "--masks", s + "/masks", "--cameras", s + "/cameras.txt",
                     "--config", dir.file("cfg.txt"), "--out", dir.file("out"), "--iterations", "3"});
  CHECK(r.code == 3);
  CHECK(r.err.find("iteration") != std::string::npos);
}

TEST_CASE("seeded runs are byte-identical and never touch their inputs") {
  testutil::TempDir dir("cli_seed");
  small_synth(dir, "a");
  small_synth(dir, "b");
  for (const char* f : {"scene.bgs", "cameras.txt", "tree.txt", "masks/view_000.bgm", "masks/view_002.bgm"})
    CHECK(testutil::read_bytes(dir.file("a") + "/" + f) == testutil::read_bytes(dir.file("b") + "/" + f));
  CHECK(testutil::read_text(dir.file("a") + "/tree.txt").rfind("# seed=4\n", 0) == 0);

  const std::string s = dir.file("a");
  std::vector<std::vector<char>> before;
  const std::vector<std::string> inputs = {s + "/scene.bgs", s + "/cameras.txt", s + "/masks/view_000.bgm"};
  for (const auto& f : inputs) before.push_back(testutil::read_bytes(f));
  auto train = [&](const std::string& out, const std::string& threads) {
    return cli({"--threads", threads, "train", "--scene", s + "/scene.bgs", "--masks", s + "/masks", "--cameras",
                s + "/cameras.txt", "--out", out, "--iterations", "30", "--seed", "9"});
  };
  REQUIRE(train(dir.file("t1"), "1").code == 0);
  REQUIRE(train(dir.file("t2"), "4").code == 0);
  for (const char* f : {"codes.bgc", "scene.bgs", "train_log.csv", "state.bgo", "config.txt"})
    CHECK(testutil::read_bytes(dir.file("t1") + "/" + f) == testutil::read_bytes(dir.file("t2") + "/" + f));
  CHECK(testutil::read_text(dir.file("t1") + "/train_log.csv").rfind("# seed=9 ", 0) == 0);

  const Run r = cli({"render-class", "--scene", dir.file("t1") + "/scene.bgs", "--codes", dir.file("t1") + "/codes.bgc",
                     "--cameras", s + "/cameras.txt", "--camera", "1", "--level", "2", "--out", dir.file("r.bgm")});
  CHECK(r.code == 0);
  for (std::size_t k = 0; k < inputs.size(); ++k) CHECK(testutil::read_bytes(inputs[k]) == before[k]);

  // resume from the saved state continues the run
  const Run resumed = cli({"train", "--resume", dir.file("t1") + "/state", "--masks", s + "/masks", "--cameras",
                           s + "/cameras.txt", "--out", dir.file("t3"), "--iterations", "40", "--seed", "9"});
  CHECK(resumed.code == 0);
  CHECK(resumed.out.find("train: 40 iterations") != std::string::npos);
}

TEST_CASE("extract-object writes the selected Gaussians") {
  testutil::TempDir dir("cli_extract");
  small_synth(dir);
  const std::string s = dir.file("scene");
  GaussianScene scene = read_scene(s + "/scene.bgs");
  CodeTable codes{scene.layout(), {}};
  for (std::size_t i = 0; i < scene.size(); ++i) codes.codes.push_back(i % 3 == 0 ? 0x15u : 0x25u);
  write_codes(dir.file("c.bgc"), codes);
  Run r = cli({"extract-object", "--scene", s + "/scene.bgs", "--codes", dir.file("c.bgc"), "--level", "1", "--class",
               "5", "--out", dir.file("all.bgs")});
  CHECK(r.code == 0);
  CHECK(read_scene(dir.file("all.bgs")).size() == scene.size());
  r = cli({"extract-object", "--scene", s + "/scene.bgs", "--codes", dir.file("c.bgc"), "--level", "2", "--class",
           "21", "--out", dir.file("third.bgs")});
  CHECK(r.code == 0);
  CHECK(read_scene(dir.file("third.bgs")).size() == (scene.size() + 2) / 3);
  CHECK(cli({"extract-object", "--scene", s + "/scene.bgs", "--codes", dir.file("c.bgc"), "--level", "1", "--class",
             "21", "--out", dir.file("x.bgs")})
            .code == 1);
}

TEST_CASE("synth -> train -> render-class -> eval on the default spec") {
  testutil::TempDir dir("cli_pipeline");
  REQUIRE(cli({"synth", "--out", dir.file("s")}).code == 0);
  const std::string s = dir.file("s");
  const Run t = cli({"train", "--scene", s + "/scene.bgs", "--masks", s + "/masks", "--cameras", s + "/cameras.txt",
                     "--out", dir.file("t")});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("train: 2000 iterations") != std::string::npos);
  for (int level = 1; level <= 3; ++level) {
    const fs::path pred = fs::path(dir.file("pred")) / std::to_string(level);
    fs::create_directories(pred);
    for (int v = 0; v < 12; ++v) {
      char name[32];
      std::snprintf(name, sizeof name, "view_%03d.bgm", v);
      const Run r = cli({"render-class", "--scene", dir.file("t") + "/scene.bgs", "--codes",
                         dir.file("t") + "/codes.bgc", "--cameras", s + "/cameras.txt", "--camera", std::to_string(v),
                         "--level", std::to_string(level), "--out", (pred / name).string()});
      REQUIRE(r.code == 0);
    }
    const Run e = cli({"eval", "--pred", pred.string(), "--truth", s + "/masks", "--level", std::to_string(level),
                       "--codes", dir.file("t") + "/codes.bgc", "--csv", dir.file("eval.csv")});
    REQUIRE(e.code == 0);
    INFO(e.out);
    CHECK(level_miou(e.out, level) >= 95.0);
    CHECK(e.out.find("code table: ") != std::string::npos);
  }
  const Run b = cli({"bench", "--scene", dir.file("t") + "/scene.bgs", "--cameras", s + "/cameras.txt", "--codes",
                     dir.file("t") + "/codes.bgc", "--views", "2"});
  CHECK(b.code == 0);
  CHECK(std::regex_search(b.out, std::regex("ratio: [0-9.]+")));
}
