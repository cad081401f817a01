#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "pagen/checkpoint.hpp"
#include "pagen/config.hpp"
#include "pagen/data.hpp"
#include "pagen/generator.hpp"
#include "pagen/serialize.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace pagen;
using pagen::testing::bitwise_equal;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + PAGEN_CLI + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pagen_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

const std::string kTiny = " --n_source 8 --n_target 8 --height 32 --width 32 --steps 6";

}  // namespace

TEST_CASE("paramcount and config errors") {
  Run r = cli("paramcount");
  CHECK(r.code == 0);
  CHECK(r.output.find("pagen parameters 124743") != std::string::npos);
  r = cli("paramcount --hidden 16");
  CHECK(r.output.find("pagen parameters 62375") != std::string::npos);
  r = cli("paramcount --channels 1 --hidden 1 --patch 1 --heads 1");
  CHECK(r.output.find("pagen parameters 63") != std::string::npos);

  r = cli("paramcount --no_such_key 3");
  CHECK(r.code == 2);
  CHECK(r.output.find("no_such_key") != std::string::npos);
  CHECK(cli("paramcount --heads 5").code == 2);
  CHECK(cli("paramcount --hidden").code == 2);
  CHECK(cli("nonsense").code == 2);
  CHECK(cli("").code == 2);

  const fs::path dir = scratch("cfg");
  std::ofstream(dir / "run.cfg") << "# comment\nhidden = 16  # trailing\n\nheads=4\n";
  r = cli("paramcount -c " + (dir / "run.cfg").string());
  CHECK(r.output.find("pagen parameters 62375") != std::string::npos);
  r = cli("paramcount -c " + (dir / "run.cfg").string() + " --hidden 32");
  CHECK(r.output.find("pagen parameters 124743") != std::string::npos);
  std::ofstream(dir / "bad.cfg") << "colour=blue\n";
  r = cli("paramcount -c " + (dir / "bad.cfg").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("colour") != std::string::npos);
}

TEST_CASE("resolved config text round trips") {
  RunConfig cfg;
  apply_setting(cfg, "lr", "0.003");
  apply_setting(cfg, "stage_channels", "8,16,32");
  apply_setting(cfg, "mode", "fda");
  apply_setting(cfg, "cast_b", "1.25");
  const std::string text = resolved_config_text(cfg);
  RunConfig back;
  apply_config_text(back, text);
  CHECK(resolved_config_text(back) == text);
  for (const std::string& key : config_keys()) {
    CHECK(text.find(key + "=") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_setting(cfg, "lr", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "nope", "1"), UsageError);
  CHECK_THROWS_AS(apply_config_text(cfg, "just words\n"), ConfigError);
}

TEST_CASE("decompose and recompose") {
  const fs::path dir = scratch("decompose");
  data::DatasetSpec spec;
  spec.n_source = 1;
  spec.n_target = 1;
  const fs::path img = dir / "scene.ppm";
  data::save_ppm(img.string(), data::generate_scene(spec, 0).image);

  Run r = cli("decompose " + img.string() + " " + (dir / "out").string());
  REQUIRE(r.code == 0);
  const Tensor phase = io::load_tensor((dir / "out" / "phase.pgtn").string());
  const Tensor amp = io::load_tensor((dir / "out" / "amplitude.pgtn").string());
  CHECK(phase.shape() == Shape{3, 64, 64});
  CHECK(amp.shape() == Shape{3, 64, 64});
  CHECK(fs::exists(dir / "out" / "amplitude_preview.ppm"));
  r = cli("recompose " + (dir / "out" / "phase.pgtn").string() + " " +
          (dir / "out" / "amplitude.pgtn").string() + " " + (dir / "back.ppm").string());
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "back.ppm") == slurp(img));

  // A constant image has energy only at DC, which the preview centers.
  data::save_ppm((dir / "flat.ppm").string(), Tensor::full({3, 6, 8}, 0.4));
  REQUIRE(cli("decompose " + (dir / "flat.ppm").string() + " " + (dir / "flat").string()).code == 0);
  const Tensor preview = data::load_ppm((dir / "flat" / "amplitude_preview.ppm").string());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 6; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        CHECK(preview[(c * 6 + y) * 8 + x] == (y == 3 && x == 4 ? 1.0 : 0.0));
      }
    }
  }

  std::ofstream(dir / "junk.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK(cli("decompose " + (dir / "junk.ppm").string() + " " + (dir / "j").string()).code == 2);
  CHECK(cli("decompose " + (dir / "missing.ppm").string() + " " + (dir / "j").string()).code == 2);
}

TEST_CASE("adapt") {
  const fs::path dir = scratch("adapt");
  data::DatasetSpec spec;
  spec.n_source = 1;
  spec.n_target = 1;
  const Tensor src = data::quantize(data::generate_scene(spec, 0).image);
  const Tensor tgt = data::quantize(data::generate_scene(spec, 1).image);
  const std::string s = (dir / "s.ppm").string(), t = (dir / "t.ppm").string();
  data::save_ppm(s, src);
  data::save_ppm(t, tgt);

  Run r = cli("adapt --src " + s + " --tgt " + t + " --beta 0 --out " + (dir / "a.ppm").string());
  REQUIRE(r.code == 0);
  CHECK(r.output.find(" ms") != std::string::npos);
  CHECK(slurp(dir / "a.ppm") == slurp(s));
  REQUIRE(cli("adapt --src " + s + " --tgt " + s + " --beta 0.2 --out " + (dir / "b.ppm").string()).code == 0);
  CHECK(slurp(dir / "b.ppm") == slurp(s));
  CHECK(cli("adapt --src " + s + " --tgt " + t + " --beta 1.5 --out " + (dir / "c.ppm").string()).code == 2);
  CHECK(cli("adapt --src " + s + " --tgt " + t + " --method pagen --out " + (dir / "c.ppm").string()).code == 2);
  CHECK(cli("adapt --src " + s + " --tgt " + t + " --method pagen --checkpoint " +
            (dir / "none.pagn").string() + " --out " + (dir / "c.ppm").string()).code == 2);

  const auto params = generator::init_params({}, 3);
  io::save_checkpoint((dir / "g.pagn").string(), params);
  r = cli("adapt --src " + s + " --tgt " + t + " --method pagen --checkpoint " +
          (dir / "g.pagn").string() + " --out " + (dir / "p.ppm").string() + " --tensor-out " +
          (dir / "p.pgtn").string());
  REQUIRE(r.code == 0);
  autograd::NoGradGuard no_grad;
  const Tensor expected = generator::forward(params, src, tgt).adapted;
  CHECK(bitwise_equal(io::load_tensor((dir / "p.pgtn").string()).data(), expected.data()));
}

TEST_CASE("train outputs, determinism and ablation semantics") {
  const fs::path dir = scratch("train");
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  Run r = cli("train" + kTiny + " --eval_every 3 --out " + a);
  REQUIRE(r.code == 0);
  for (const char* f : {"loss.csv", "eval.csv", "eval.txt", "resolved_config.txt", "detector.pgdt",
                        "generator.pagn"}) {
    CHECK(fs::exists(dir / "a" / f));
  }
  CHECK(!fs::exists(dir / "a" / ".lock"));
  const auto loss = csv_rows(slurp(dir / "a" / "loss.csv"));
  REQUIRE(loss.size() == 7);
  CHECK(loss[0] == std::vector<std::string>{"step", "l_det_s", "l_det_a", "l_fa", "total"});
  const auto evals = csv_rows(slurp(dir / "a" / "eval.csv"));
  REQUIRE(evals.size() == 3);
  CHECK(evals[1][0] == "3");
  CHECK(evals[2][0] == "6");
  const std::string resolved = slurp(dir / "a" / "resolved_config.txt");
  CHECK(resolved.find("steps=6\n") != std::string::npos);
  CHECK(resolved.find("out=" + a + "\n") != std::string::npos);

  REQUIRE(cli("train" + kTiny + " --eval_every 3 --out " + b).code == 0);
  CHECK(slurp(dir / "a" / "loss.csv") == slurp(dir / "b" / "loss.csv"));

  // Re-running from the written config reproduces the run.
  REQUIRE(cli("train -c " + (dir / "a" / "resolved_config.txt").string() + " --out " +
              (dir / "c").string()).code == 0);
  CHECK(slurp(dir / "a" / "loss.csv") == slurp(dir / "c" / "loss.csv"));

  REQUIRE(cli("train" + kTiny + " --mode source_only --out " + (dir / "so").string()).code == 0);
  CHECK(!fs::exists(dir / "so" / "generator.pagn"));
  for (std::size_t i = 1; i < 7; ++i) {
    const auto row = csv_rows(slurp(dir / "so" / "loss.csv"))[i];
    CHECK(row[2] == "0");
    CHECK(row[3] == "0");
    CHECK(row[4] == row[1]);
  }

  REQUIRE(cli("train" + kTiny + " --lambda 0 --out " + (dir / "l0").string()).code == 0);
  const auto l0 = csv_rows(slurp(dir / "l0" / "loss.csv"))[1];
  const auto l1 = loss[1];
  CHECK(l0[1] == l1[1]);
  CHECK(l0[2] == l1[2]);
  CHECK(l0[3] == l1[3]);
  CHECK(std::stod(l1[4]) - std::stod(l0[4]) == doctest::Approx(std::stod(l1[3])).epsilon(1e-12));
}

TEST_CASE("train rejects locked directories and bad settings") {
  const fs::path dir = scratch("lock");
  std::ofstream(dir / ".lock") << "";
  Run r = cli("train" + kTiny + " --out " + dir.string());
  CHECK(r.code == 2);
  CHECK(r.output.find("locked") != std::string::npos);
  CHECK(fs::exists(dir / ".lock"));
  CHECK(cli("train" + kTiny + " --height 36 --out " + (dir / "x").string()).code == 2);
  CHECK(cli("train" + kTiny + " --mode adversarial --out " + (dir / "x").string()).code == 2);
  r = cli("train" + kTiny + " --out " + (dir / "x").string(), "PAGEN_THREADS=zero");
  CHECK(r.code == 2);
  CHECK(r.output.find("PAGEN_THREADS") != std::string::npos);
}

TEST_CASE("eval") {
  const fs::path dir = scratch("eval");
  const std::string data_args = " --n_source 3 --n_target 3";
  REQUIRE(cli("train" + data_args + " --steps 4 --mode source_only --out " + (dir / "t").string()).code == 0);
  const std::string ckpt = (dir / "t" / "detector.pgdt").string();

  Run r = cli("eval" + data_args + " --checkpoint " + ckpt + " --out " + (dir / "e1").string());
  REQUIRE(r.code == 0);
  CHECK(r.output.find("mAP@0.5") != std::string::npos);
  const Run r2 = cli("eval" + data_args + " --checkpoint " + ckpt + " --out " + (dir / "e2").string(),
                     "PAGEN_THREADS=3");
  REQUIRE(r2.code == 0);
  CHECK(slurp(dir / "e1" / "eval.csv") == slurp(dir / "e2" / "eval.csv"));

  r = cli("eval" + data_args + " --head_hidden 16 --checkpoint " + ckpt + " --out " +
          (dir / "e3").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("head_hidden") != std::string::npos);
  CHECK(cli("eval" + data_args + " --checkpoint " + (dir / "none").string() + " --out " +
            (dir / "e3").string()).code == 2);
  CHECK(cli("eval" + data_args + " --split validation --checkpoint " + ckpt + " --out " +
            (dir / "e3").string()).code == 2);

  // Detection fixtures scored against the three target scenes.
  data::DatasetSpec spec;
  spec.n_source = 3;
  spec.n_target = 3;
  const data::Dataset ds = data::generate_dataset(spec);
  std::ostringstream perfect, partial;
  perfect.precision(17);
  partial.precision(17);
  std::map<int, std::size_t> per_class;
  int dropped_class = -1;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& boxes = ds.target[i].boxes();
    const auto& classes = ds.target[i].classes();
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      ++per_class[classes[k]];
      const Box& bx = boxes[k];
      perfect << i << " " << bx.x1 << " " << bx.y1 << " " << bx.x2 << " " << bx.y2 << " 1 "
              << classes[k] << "\n";
      if (i == 2 && k == 0) {
        dropped_class = classes[k];
        continue;
      }
      partial << i << " " << bx.x1 << " " << bx.y1 << " " << bx.x2 << " " << bx.y2 << " 0.9 "
              << classes[k] << "\n";
    }
  }
  // A confident false positive of the dropped truth's class, far from everything.
  partial << "2 0 0 0.5 0.5 0.99 " << dropped_class << "\n";
  std::ofstream(dir / "perfect.txt") << perfect.str();
  std::ofstream(dir / "partial.txt") << partial.str();
  std::ofstream(dir / "empty.txt") << "# nothing detected\n";

  const auto map_of = [&](const std::string& file, const std::string& out) {
    const Run run = cli("eval" + data_args + " --detections " + (dir / file).string() + " --out " +
                        (dir / out).string());
    REQUIRE(run.code == 0);
    return std::stod(csv_rows(slurp(dir / out / "eval.csv"))[1][1]);
  };
  CHECK(map_of("perfect.txt", "p") == 1.0);
  CHECK(map_of("empty.txt", "z") == 0.0);
  // The dropped class ranks FP first then n-1 TPs: precision and recall both
  // end at (n-1)/n. Other classes score 1.
  const double n = static_cast<double>(per_class[dropped_class]);
  const double expected =
      ((per_class.size() - 1) + ((n - 1) / n) * ((n - 1) / n)) / static_cast<double>(per_class.size());
  CHECK(map_of("partial.txt", "q") == doctest::Approx(expected).epsilon(1e-12));

  std::ofstream(dir / "broken.txt") << "0 1 2 3\n";
  CHECK(cli("eval" + data_args + " --detections " + (dir / "broken.txt").string() + " --out " +
            (dir / "b").string()).code == 2);
}

TEST_CASE("gradcheck exit codes") {
  Run r = cli("gradcheck");
  CHECK(r.code == 0);
  CHECK(r.output.find("pagen + detector + total loss") != std::string::npos);
  r = cli("gradcheck --inject-fault softmax_lastdim");
  CHECK(r.code == 1);
  const auto failing = r.output.find("failing:");
  REQUIRE(failing != std::string::npos);
  CHECK(r.output.find("softmax_lastdim", failing) != std::string::npos);
}

TEST_CASE("embed and generate") {
  const fs::path dir = scratch("embed");
  const std::string data_args = " --n_source 4 --n_target 4 --height 32 --width 32";
  REQUIRE(cli("train" + data_args + " --steps 3 --out " + (dir / "t").string()).code == 0);
  Run r = cli("embed" + data_args + " --detector " + (dir / "t" / "detector.pgdt").string() +
              " --generator " + (dir / "t" / "generator.pagn").string() + " --count 4 --out " +
              (dir / "e").string());
  REQUIRE(r.code == 0);
  CHECK(r.output.find("centroid_distance source-target") != std::string::npos);
  CHECK(r.output.find("centroid_distance adapted-target") != std::string::npos);
  const auto rows = csv_rows(slurp(dir / "e" / "embeddings.csv"));
  CHECK(rows.size() == 13);
  CHECK(rows[0].size() > 2);
  for (const auto& row : rows) CHECK(row.size() == rows[0].size());
  const auto pca = csv_rows(slurp(dir / "e" / "pca.csv"));
  CHECK(pca.size() == 13);
  CHECK(pca[0] == std::vector<std::string>{"set", "index", "pc1", "pc2"});
  CHECK(cli("embed" + data_args + " --detector " + (dir / "nope").string() + " --generator " +
            (dir / "nope").string() + " --out " + (dir / "f").string()).code == 2);

  REQUIRE(cli("generate --n_source 2 --n_target 2 --out " + (dir / "data").string()).code == 0);
  CHECK(fs::exists(dir / "data" / "manifest.txt"));
  CHECK(fs::exists(dir / "data" / "source" / "00000.ppm"));
}
