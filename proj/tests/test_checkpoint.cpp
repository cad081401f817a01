#include <filesystem>
#include <sstream>
#include <string>

#include "doctest.h"
#include "pagen/checkpoint.hpp"
#include "pagen/serialize.hpp"
#include "test_util.hpp"

using namespace pagen;
using pagen::testing::bitwise_equal;

namespace {

template <typename Params>
void check_same(const Params& a, const Params& b) {
  const auto na = a.named(), nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(na[i].second.shape() == nb[i].second.shape());
    CHECK(na[i].second.dtype() == nb[i].second.dtype());
    CHECK(bitwise_equal(na[i].second.data(), nb[i].second.data()));
  }
}

std::string pagen_bytes(const generator::PAGenParams& p) {
  std::ostringstream out(std::ios::binary);
  io::write_checkpoint(out, p);
  return out.str();
}

generator::PAGenParams pagen_from(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return io::read_checkpoint(in);
}

std::string error_of(const std::string& bytes) {
  try {
    pagen_from(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("generator checkpoint round trip") {
  const auto p = generator::init_params({}, 5);
  const auto q = pagen_from(pagen_bytes(p));
  CHECK(q.config == p.config);
  check_same(p, q);
  CHECK(generator::param_count(q.config) == 124743);
  for (const Tensor& t : q.tensors()) CHECK(t.requires_grad());

  generator::PAGenConfig cfg;
  cfg.patch = 4;
  cfg.hidden = 6;
  cfg.heads = 3;
  cfg.channels = 1;
  cfg.symmetrize = false;
  cfg.amp_log_scale = true;
  const auto small = generator::init_params(cfg, 9);
  const auto back = pagen_from(pagen_bytes(small));
  CHECK(back.config == cfg);
  check_same(small, back);

  const auto path = std::filesystem::temp_directory_path() / "pagen_ckpt_test.pagn";
  io::save_checkpoint(path.string(), p);
  check_same(p, io::load_checkpoint(path.string()));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(io::load_checkpoint("/nonexistent/dir/x.pagn"), FormatError);
}

TEST_CASE("generator checkpoint header layout") {
  const std::string b = pagen_bytes(generator::init_params({}, 1));
  CHECK(b.substr(0, 4) == "PAGN");
  std::istringstream in(b.substr(4), std::ios::binary);
  CHECK(io::read_u32(in, "version") == 1);
  CHECK(io::read_u32(in, "p") == 16);
  CHECK(io::read_u32(in, "d") == 32);
  CHECK(io::read_u32(in, "heads") == 4);
  CHECK(io::read_u32(in, "C") == 3);
  CHECK(io::read_u32(in, "flags") == 1);
  CHECK(io::read_u32(in, "count") == 23);
  CHECK(io::read_string(in, "name") == "q.patch.weight");
}

TEST_CASE("generator checkpoint corruption") {
  const std::string good = pagen_bytes(generator::init_params({}, 2));

  std::string bad = good;
  bad[1] = 'X';
  CHECK(error_of(bad).find("PAGN") != std::string::npos);

  bad = good;
  bad[4] = 2;
  CHECK(error_of(bad).find("version") != std::string::npos);

  bad = good;
  bad[24] = 8;  // flags
  CHECK(error_of(bad).find("flag") != std::string::npos);

  bad = good;
  bad[16] = 5;  // heads no longer divide hidden
  CHECK(error_of(bad).find("config") != std::string::npos);

  CHECK(error_of(good.substr(0, 10)).find("truncated") != std::string::npos);
  CHECK(error_of(good.substr(0, good.size() - 3)).find("truncated") != std::string::npos);
  CHECK(error_of(good + "x").find("trailing") != std::string::npos);

  bad = good;
  bad[36] = 'z';  // first character of the first tensor name
  CHECK(error_of(bad).find("expected tensor") != std::string::npos);
}

TEST_CASE("detector checkpoint") {
  detect::DetectorConfig cfg;
  const auto p = detect::init_detector(cfg, 3);
  std::ostringstream out(std::ios::binary);
  io::write_detector(out, p);
  const std::string bytes = out.str();
  CHECK(bytes.substr(0, 4) == "PGDT");
  std::istringstream in(bytes, std::ios::binary);
  const auto q = io::read_detector(in);
  CHECK(q.config == p.config);
  check_same(p, q);

  cfg.stage_channels = {4, 8};
  cfg.n_classes = 2;
  const auto small = detect::init_detector(cfg, 4);
  std::ostringstream o2(std::ios::binary);
  io::write_detector(o2, small);
  std::istringstream i2(o2.str(), std::ios::binary);
  check_same(small, io::read_detector(i2));

  std::string bad = bytes;
  bad[0] = 'Q';
  std::istringstream i3(bad, std::ios::binary);
  try {
    io::read_detector(i3);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("PGDT") != std::string::npos);
  }
  // A generator checkpoint is not a detector checkpoint.
  std::istringstream i4(pagen_bytes(generator::init_params({}, 1)), std::ios::binary);
  CHECK_THROWS_AS(io::read_detector(i4), FormatError);
}
