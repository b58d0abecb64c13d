#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "pasr/config.hpp"
#include "pasr/datamodel.hpp"
#include "pasr/pvol.hpp"

using namespace pasr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pasr_test_datamodel_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

Volume random_volume(std::mt19937_64& rng, bool three_d) {
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  std::uniform_real_distribution<float> val(-1e3f, 1e3f), sp(0.1f, 3.0f);
  Extent e = three_d ? Extent::volume(dim(rng), dim(rng), dim(rng)) : Extent::plane(dim(rng), dim(rng));
  std::vector<float> data(e.count());
  for (auto& v : data) v = val(rng);
  return Volume(e, std::move(data), Spacing{three_d ? sp(rng) : 1.0f, sp(rng), sp(rng)});
}

}  // namespace

TEST_CASE("raster invariants") {
  CHECK_THROWS_AS(Volume(Extent::plane(2, 2), {1, 2, 3}), ValidationError);
  CHECK_THROWS_AS(Volume(Extent::plane(1, 2), {1, std::numeric_limits<float>::quiet_NaN()}), ValidationError);
  CHECK_THROWS_AS(Volume(Extent::plane(1, 1), {std::numeric_limits<float>::infinity()}), ValidationError);
  CHECK_THROWS_AS(Volume(Extent::plane(0, 2), {}), ValidationError);
  CHECK_THROWS_AS(LabelMap(Extent::plane(1, 2), {0, 2}, 2), ValidationError);
  CHECK_NOTHROW(LabelMap(Extent::plane(1, 2), {0, 1}, 2));
  CHECK_THROWS_AS(Mask(Extent::plane(1, 2), {0, 2}), ValidationError);

  const Mask m(Extent::plane(2, 2), {1, 0, 0, 1});
  CHECK(m.count_ones() == 2);
  CHECK(m.inverted().data() == std::vector<std::uint8_t>{0, 1, 1, 0});
  CHECK(Mask::filled(Extent::plane(3, 3), 1).count_ones() == 9);
}

TEST_CASE("pvol header layout") {
  const auto dir = scratch("layout");
  const Volume v(Extent::plane(2, 2), {0, 1, 2, 3}, Spacing{1.0f, 0.5f, 2.0f});
  save_volume(v, dir / "v.pvol");
  const auto b = read_bytes(dir / "v.pvol");
  REQUIRE(b.size() == kPvolHeaderBytes + 4 * sizeof(float));
  CHECK(std::string(b.begin(), b.begin() + 4) == "PVOL");
  std::uint16_t version;
  std::memcpy(&version, b.data() + 4, 2);
  CHECK(version == 1);
  CHECK(b[6] == 0);  // f32
  CHECK(b[7] == 2);  // rank
  float payload[4];
  std::memcpy(payload, b.data() + kPvolHeaderBytes, sizeof payload);
  CHECK(payload[0] == 0.0f);
  CHECK(payload[1] == 1.0f);
  CHECK(payload[2] == 2.0f);
  CHECK(payload[3] == 3.0f);
}

TEST_CASE("pvol round trip on random volumes") {
  const auto dir = scratch("roundtrip");
  std::mt19937_64 rng(42);
  for (int i = 0; i < 1000; ++i) {
    const Volume v = random_volume(rng, i % 3 == 0);
    const auto path = dir / "r.pvol";
    save_volume(v, path);
    const Volume back = load_image(path);
    REQUIRE(back.extent() == v.extent());
    REQUIRE(back.spacing() == v.spacing());
    REQUIRE(std::memcmp(back.data().data(), v.data().data(), v.data().size() * sizeof(float)) == 0);
  }
}

TEST_CASE("pvol label round trip and class validation") {
  const auto dir = scratch("labels");
  const LabelMap l(Extent::volume(2, 2, 3), {0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3}, 4, Spacing{2.0f, 1.0f, 1.0f});
  save_volume(l, dir / "l.pvol");
  CHECK(load_labels(dir / "l.pvol", 4) == l);
  auto any = load_volume(dir / "l.pvol");
  REQUIRE(std::holds_alternative<LabelMap>(any));
  CHECK(std::get<LabelMap>(any).num_classes() == 4);
  // Value 3 is out of range when the manifest declares 3 classes.
  CHECK_THROWS_AS(load_labels(dir / "l.pvol", 3), ValidationError);
  CHECK_THROWS_AS(load_image(dir / "l.pvol"), FormatError);
}

TEST_CASE("pvol format errors") {
  const auto dir = scratch("errors");
  const Volume v(Extent::plane(2, 3), {0, 1, 2, 3, 4, 5});
  save_volume(v, dir / "ok.pvol");
  const auto good = read_bytes(dir / "ok.pvol");

  SUBCASE("bad magic") {
    auto b = good;
    b[0] = 'X';
    write_bytes(dir / "bad.pvol", b);
    CHECK_THROWS_AS(load_volume(dir / "bad.pvol"), FormatError);
  }
  SUBCASE("bad version") {
    auto b = good;
    b[4] = 9;
    write_bytes(dir / "bad.pvol", b);
    CHECK_THROWS_AS(load_volume(dir / "bad.pvol"), FormatError);
  }
  SUBCASE("truncated payload") {
    auto b = good;
    b.resize(b.size() - 2);
    write_bytes(dir / "bad.pvol", b);
    CHECK_THROWS_AS(load_volume(dir / "bad.pvol"), FormatError);
  }
  SUBCASE("truncated header") {
    write_bytes(dir / "bad.pvol", std::vector<char>(good.begin(), good.begin() + 10));
    CHECK_THROWS_AS(load_volume(dir / "bad.pvol"), FormatError);
  }
  SUBCASE("non-finite intensity") {
    auto b = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(b.data() + kPvolHeaderBytes, &nan, sizeof nan);
    write_bytes(dir / "bad.pvol", b);
    CHECK_THROWS_AS(load_volume(dir / "bad.pvol"), ValidationError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_volume(dir / "nope.pvol"), IoError); }
}

TEST_CASE("f64 tensor files round trip exactly") {
  const auto dir = scratch("tensor");
  std::vector<double> vals = {0.1, -1e-300, 3.141592653589793, 1e300, 0.0, -0.0};
  save_tensor(vals, Extent::plane(2, 3), dir / "t.pvol");
  const auto back = load_tensor(dir / "t.pvol");
  CHECK(back.extent == Extent::plane(2, 3));
  CHECK(std::memcmp(back.values.data(), vals.data(), vals.size() * sizeof(double)) == 0);
  CHECK_THROWS_AS(load_image(dir / "t.pvol"), FormatError);
}

TEST_CASE("manifest loading") {
  const auto dir = scratch("manifest");
  fs::create_directories(dir / "img");
  const Extent e = Extent::plane(4, 4);
  auto img = [&](const std::string& name) { save_volume(Volume(e, std::vector<float>(16, 0.5f)), dir / "img" / name); };
  auto lab = [&](const std::string& name) {
    save_volume(LabelMap(e, std::vector<std::uint8_t>(16, 1), 2), dir / "img" / name);
  };
  img("a.pvol"), lab("a_l.pvol"), img("b.pvol"), lab("b_l.pvol"), img("u1.pvol"), img("u2.pvol");

  auto write = [&](const std::string& text) {
    std::ofstream(dir / "m.txt") << text;
    return dir / "m.txt";
  };

  SUBCASE("valid split, manifest order preserved") {
    const auto path = write(
        "num_classes 2\n# comment\nlabeled a img/a.pvol img/a_l.pvol\nunlabeled u2 img/u2.pvol\n"
        "unlabeled u1 img/u1.pvol\ntest b img/b.pvol img/b_l.pvol\n");
    const DatasetSplit s = load_manifest(path);
    CHECK(s.labeled.size() == 1);
    REQUIRE(s.unlabeled.size() == 2);
    CHECK(s.unlabeled[0].id == "u2");
    CHECK(s.unlabeled[1].id == "u1");
    CHECK(s.test.size() == 1);
    const DatasetSplit again = load_manifest(path);
    CHECK(again.unlabeled[0].image == s.unlabeled[0].image);
  }
  SUBCASE("no unlabeled entries is a supervised split") {
    const DatasetSplit s = load_manifest(write("labeled a img/a.pvol img/a_l.pvol\n"));
    CHECK(s.unlabeled.empty());
  }
  SUBCASE("duplicate id across roles") {
    CHECK_THROWS_AS(load_manifest(write("labeled a img/a.pvol img/a_l.pvol\ntest a img/b.pvol img/b_l.pvol\n")),
                    ValidationError);
  }
  SUBCASE("unknown role names the line") {
    try {
      load_manifest(write("labeled a img/a.pvol img/a_l.pvol\ntrain x img/b.pvol img/b_l.pvol\n"));
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_manifest(write("unlabeled x img/missing.pvol\n")), ValidationError);
  }
  SUBCASE("shape mismatch") {
    save_volume(Volume(Extent::plane(4, 8), std::vector<float>(32, 0.0f)), dir / "img" / "wide.pvol");
    CHECK_THROWS_AS(load_manifest(write("labeled a img/a.pvol img/a_l.pvol\nunlabeled w img/wide.pvol\n")),
                    ValidationError);
  }
  SUBCASE("missing manifest") { CHECK_THROWS_AS(load_manifest(dir / "none.txt"), IoError); }
}

TEST_CASE("config defaults") {
  const RunConfig c = parse_config(std::nullopt, {});
  CHECK(c.gamma == 0.5);
  CHECK(c.beta == 0.01);
  CHECK(c.mu == 2.0);
  CHECK(c.alpha == 0.05);
  CHECK(c.lr == 0.01);
  CHECK(c.lambda_ema == 0.99);
  CHECK(c.optimizer == OptimizerKind::Sgd);
}

TEST_CASE("config precedence and errors") {
  const auto dir = scratch("config");
  std::ofstream(dir / "c.txt") << "# run\nalpha = 0.01\nseed = 7\noptimizer = adam\n";
  const RunConfig from_file = parse_config(dir / "c.txt", {});
  CHECK(from_file.alpha == 0.01);
  CHECK(from_file.seed == 7);
  CHECK(from_file.optimizer == OptimizerKind::Adam);
  const RunConfig overridden = parse_config(dir / "c.txt", {{"alpha", "0.05"}});
  CHECK(overridden.alpha == 0.05);
  CHECK(overridden.seed == 7);
  CHECK(parse_config(dir / "c.txt", {}) == from_file);

  try {
    parse_config(std::nullopt, {{"alhpa", "1"}});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("valid keys") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"gamma", "1.5"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"mu", "0"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"lambda_ema", "-0.1"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"lr", "0"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"mask_ratio", "1"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"tap_layer", "6"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"alpha", "-1"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(std::nullopt, {{"optimizer", "rmsprop"}}), ConfigError);
  CHECK_THROWS_AS(split_override("alpha"), ConfigError);
  CHECK(split_override("alpha=0.1") == std::pair<std::string, std::string>{"alpha", "0.1"});
}

TEST_CASE("config text round trip") {
  RunConfig c;
  c.alpha = 0.1 + 0.2;  // not exactly representable in short decimal
  c.adjacency_norm = AdjacencyNorm::Mean;
  c.teacher_alignment_grad = true;
  const auto dir = scratch("config_text");
  std::ofstream(dir / "c.txt") << c.to_text();
  const RunConfig back = parse_config(dir / "c.txt", {});
  CHECK(back == c);
  CHECK(back.digest() == c.digest());
  for (const auto& k : valid_config_keys()) CHECK(back.get(k) == c.get(k));
}
