#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pasr/checkpoint.hpp"
#include "pasr/evalreport.hpp"
#include "pasr/metrics.hpp"
#include "pasr/synthdata.hpp"
#include "pasr/trainer.hpp"

using namespace pasr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pasr_test_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const DatasetSplit& tiny_split() {
  static const DatasetSplit split = [] {
    SynthSpec spec;
    spec.image_size = 16;
    spec.min_radius = 0.2;
    spec.max_radius = 0.3;
    spec.min_shapes = spec.max_shapes = 1;
    spec.labeled = 3;
    spec.unlabeled = 4;
    spec.val = 2;
    spec.test = 2;
    spec.shift_delta = 0.2;
    spec.seed = 21;
    return generate_dataset(spec, scratch("data"));
  }();
  return split;
}

RunConfig tiny_config() {
  RunConfig c;
  c.encoder_depth = 2;
  c.base_channels = 4;
  c.cluster_hidden = 4;
  c.grid_size = 4;
  c.pretrain_iters = 20;
  c.selftrain_iters = 6;
  c.seed = 3;
  return c;
}

bool bit_equal(const NetParams& a, const NetParams& b) {
  if (!a.same_structure(b)) return false;
  for (std::size_t t = 0; t < a.tensors.size(); ++t) {
    const auto& x = a.tensors[t].values;
    const auto& y = b.tensors[t].values;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("ema identities") {
  const ArchConfig arch = arch_for(tiny_config(), tiny_split());
  const NetParams t0 = init_params(arch, 1), s = init_params(arch, 2);

  NetParams t = t0;
  ema_update(t, s, 1.0);
  CHECK(bit_equal(t, t0));
  ema_update(t, s, 0.0);
  CHECK(bit_equal(t, s));

  NetParams a, b;
  a.tensors.push_back({"x", {1}, {1.0}});
  b.tensors.push_back({"x", {1}, {0.0}});
  ema_update(a, b, 0.9);
  CHECK(a.tensors[0].values[0] == doctest::Approx(0.9).epsilon(1e-15));

  NetParams wrong;
  wrong.tensors.push_back({"y", {1}, {0.0}});
  CHECK_THROWS_AS(ema_update(a, wrong, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(ema_update(a, b, 1.5), std::invalid_argument);
}

TEST_CASE("ema contraction toward a frozen student") {
  const ArchConfig arch = arch_for(tiny_config(), tiny_split());
  const NetParams s = init_params(arch, 2);
  NetParams t = init_params(arch, 1);
  auto dist = [&] {
    double d = 0.0;
    for (std::size_t k = 0; k < t.tensors.size(); ++k)
      for (std::size_t i = 0; i < t.tensors[k].values.size(); ++i) {
        const double e = t.tensors[k].values[i] - s.tensors[k].values[i];
        d += e * e;
      }
    return std::sqrt(d);
  };
  const double d0 = dist();
  for (int step = 0; step < 50; ++step) ema_update(t, s, 0.9);
  CHECK(dist() == doctest::Approx(std::pow(0.9, 50) * d0).epsilon(1e-6));
}

TEST_CASE("pretraining") {
  const DatasetSplit& split = tiny_split();
  RunConfig c = tiny_config();

  SUBCASE("zero iterations return the initialization") {
    c.pretrain_iters = 0;
    CHECK(bit_equal(pretrain(c, split).params, init_params(arch_for(c, split), c.seed)));
  }
  SUBCASE("deterministic and the loss falls") {
    c.pretrain_iters = 60;
    const PretrainResult a = pretrain(c, split), b = pretrain(c, split);
    CHECK(bit_equal(a.params, b.params));
    CHECK(a.history == b.history);
    REQUIRE(a.history.size() == 60);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 10; ++i) {
      first += a.history[i].loss.l_pre;
      last += a.history[50 + i].loss.l_pre;
    }
    CHECK(last < first);
  }
  SUBCASE("empty labeled set") {
    DatasetSplit empty = split;
    empty.labeled.clear();
    CHECK_THROWS_AS(pretrain(c, empty), std::invalid_argument);
  }
}

TEST_CASE("overfit teacher reproduces the labeled masks") {
  const DatasetSplit& split = tiny_split();
  RunConfig c = tiny_config();
  c.pretrain_iters = 300;
  const PretrainResult r = pretrain(c, split);
  const ArchConfig arch = arch_for(c, split);
  std::vector<Volume> images;
  for (const auto& s : split.labeled) images.push_back(s.image);
  const auto pseudo = generate_pseudo_labels(arch, r.params, ForwardOptions::plain(), images);
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    CHECK(dice(BinaryImage::of_class(pseudo[i], 1), BinaryImage::of_class(split.labeled[i].label, 1)) >= 0.95);
  }
}

TEST_CASE("batch sampling keeps pairs distinct") {
  const DatasetSplit& split = tiny_split();
  const RunConfig c = tiny_config();
  TrainState st = init_selftrain(c, arch_for(c, split), init_params(arch_for(c, split), 0));
  for (int i = 0; i < 100; ++i) {
    const StepBatch b = sample_batch(st, split);
    REQUIRE(b.pairs.size() == 2);
    for (const auto& p : b.pairs) {
      CHECK(p.a != p.b);
      CHECK(p.s != p.t);
      CHECK(p.mask.count_ones() == 256 - 11 * 11);
    }
  }
  DatasetSplit one = split;
  one.unlabeled.resize(1);
  CHECK_THROWS_AS(sample_batch(st, one), std::invalid_argument);
}

TEST_CASE("teacher frozen at lambda one") {
  const DatasetSplit& split = tiny_split();
  RunConfig c = tiny_config();
  c.lambda_ema = 1.0;
  const ArchConfig arch = arch_for(c, split);
  TrainState st = init_selftrain(c, arch, init_params(arch, 4));
  const NetParams before = st.teacher;
  for (int i = 0; i < 3; ++i) selftrain_step(st, split, sample_batch(st, split));
  CHECK(bit_equal(st.teacher, before));
  CHECK_FALSE(bit_equal(st.student, before));
  CHECK(st.iteration == 3);
  CHECK(st.history.size() == 3);
  CHECK(st.history.back().iteration == 3);
}

TEST_CASE("inert graph branch leaves the baseline step unchanged") {
  const DatasetSplit& split = tiny_split();
  RunConfig base = tiny_config();
  base.alpha = base.beta = 0.0;
  RunConfig fused = base;
  base.graph_fusion = GraphFusion::Off;
  fused.graph_fusion = GraphFusion::On;
  const ArchConfig arch = arch_for(fused, split);
  NetParams init = init_params(arch, 8);
  for (auto& v : init.at("graph.gcn.weight").values) v = 0.0;
  for (auto& v : init.at("graph.proj.weight").values) v = 0.0;

  TrainState a = init_selftrain(base, arch, init), b = init_selftrain(fused, arch, init);
  for (int i = 0; i < 2; ++i) {
    const StepBatch ba = sample_batch(a, split), bb = sample_batch(b, split);
    const LossBreakdown la = selftrain_step(a, split, ba), lb = selftrain_step(b, split, bb);
    CHECK(la.l_pre == lb.l_pre);
    CHECK(la.total == lb.total);
  }
  CHECK(bit_equal(a.student, b.student));
  CHECK(bit_equal(a.teacher, b.teacher));

  const Tensor x = Tensor::from_volume(split.test[0].image);
  const auto oa = forward_segment(arch, a.student, x, ForwardOptions::from_run(base));
  const auto ob = forward_segment(arch, b.student, x, ForwardOptions::from_run(fused));
  CHECK(std::memcmp(oa.logits.data.data(), ob.logits.data.data(), oa.logits.data.size() * sizeof(double)) == 0);
}

TEST_CASE("non-finite loss names the batch") {
  const DatasetSplit& split = tiny_split();
  const RunConfig c = tiny_config();
  const ArchConfig arch = arch_for(c, split);
  NetParams bad = init_params(arch, 0);
  bad.at("head.bias").values[0] = NAN;
  TrainState st = init_selftrain(c, arch, bad);
  try {
    selftrain_step(st, split, sample_batch(st, split));
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(std::string(e.what()).find("L0") != std::string::npos);
    CHECK(std::string(e.what()).find("U0") != std::string::npos);
  }
}

TEST_CASE("zero self-training iterations keep the initial student") {
  const DatasetSplit& split = tiny_split();
  RunConfig c = tiny_config();
  c.selftrain_iters = 0;
  const ArchConfig arch = arch_for(c, split);
  const NetParams init = init_params(arch, 5);
  TrainState st = init_selftrain(c, arch, init);
  run_selftrain(st, split, {.out_dir = scratch("zero")});
  CHECK(bit_equal(st.student, init));
}

TEST_CASE("identical runs write identical logs") {
  const DatasetSplit& split = tiny_split();
  RunConfig c = tiny_config();
  c.checkpoint_interval = 3;
  const ArchConfig arch = arch_for(c, split);
  const NetParams init = init_params(arch, 6);
  const auto d1 = scratch("det1"), d2 = scratch("det2");
  TrainState a = init_selftrain(c, arch, init), b = init_selftrain(c, arch, init);
  run_selftrain(a, split, {.out_dir = d1});
  run_selftrain(b, split, {.out_dir = d2});
  CHECK(slurp(d1 / "losses.csv") == slurp(d2 / "losses.csv"));
  CHECK(slurp(d1 / "val_metrics.csv") == slurp(d2 / "val_metrics.csv"));
  CHECK(fs::exists(checkpoint_dir(d1, 3)));
  CHECK(fs::exists(checkpoint_dir(d1, 6)));
  // header plus student and teacher rows at both checkpoints
  std::istringstream val(slurp(d1 / "val_metrics.csv"));
  int lines = 0;
  for (std::string l; std::getline(val, l);) ++lines;
  CHECK(lines == 5);
}

TEST_CASE("resume from a checkpoint matches an uninterrupted run") {
  const DatasetSplit& split = tiny_split();
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    RunConfig c = tiny_config();
    c.optimizer = kind;
    c.checkpoint_interval = 3;
    const ArchConfig arch = arch_for(c, split);
    const NetParams init = init_params(arch, 7);

    const auto full_dir = scratch("full"), part_dir = scratch("part");
    TrainState full = init_selftrain(c, arch, init);
    run_selftrain(full, split, {.out_dir = full_dir});

    TrainState part = init_selftrain(c, arch, init);
    run_selftrain(part, split, {.out_dir = part_dir, .stop_at = 3});
    TrainState resumed = load_checkpoint(checkpoint_dir(part_dir, 3));
    CHECK(resumed.iteration == 3);
    run_selftrain(resumed, split, {.out_dir = part_dir});

    CHECK(bit_equal(resumed.student, full.student));
    CHECK(bit_equal(resumed.teacher, full.teacher));
    CHECK(resumed.opt == full.opt);
    CHECK(slurp(part_dir / "losses.csv") == slurp(full_dir / "losses.csv"));
    CHECK(slurp(part_dir / "val_metrics.csv") == slurp(full_dir / "val_metrics.csv"));
  }
}

TEST_CASE("checkpoint round trip") {
  const DatasetSplit& split = tiny_split();
  RunConfig c = tiny_config();
  c.optimizer = OptimizerKind::Adam;
  const ArchConfig arch = arch_for(c, split);
  TrainState st = init_selftrain(c, arch, init_params(arch, 9));
  selftrain_step(st, split, sample_batch(st, split));
  st.val_rows.push_back("1,student,0.5,0.4,1,1");
  const auto dir = scratch("ckpt");
  save_checkpoint(st, dir);
  const TrainState back = load_checkpoint(dir);
  CHECK(back.cfg == st.cfg);
  CHECK(back.arch == st.arch);
  CHECK(bit_equal(back.teacher, st.teacher));
  CHECK(bit_equal(back.student, st.student));
  CHECK(back.opt == st.opt);
  CHECK(back.iteration == st.iteration);
  CHECK(back.rng == st.rng);
  CHECK(back.history == st.history);
  CHECK(back.val_rows == st.val_rows);

  const auto pre = scratch("pre");
  save_pretrained(c, arch, st.teacher, st.history, pre);
  CHECK(bit_equal(load_pretrained(pre).params, st.teacher));
  CHECK(bit_equal(load_model(pre, "student").params, st.teacher));
  CHECK(bit_equal(load_model(dir, "student").params, st.student));
  CHECK_THROWS_AS(load_checkpoint(pre), FormatError);
}

TEST_CASE("golden self-training log") {
  const DatasetSplit& split = tiny_split();
  RunConfig c = tiny_config();
  const ArchConfig arch = arch_for(c, split);
  const NetParams teacher = retarget_params(pretrain(c, split).params, arch, c.seed);
  TrainState st = init_selftrain(c, arch, teacher);
  for (int i = 0; i < 3; ++i) selftrain_step(st, split, sample_batch(st, split));
  // Captured from a reference run of this configuration.
  const double golden[3][3] = {{1.7840425924420731, 0.096384488916044245, 0.12651905198320568},
                               {1.7231367669933357, 0.10291039388933787, 0.13451765223131248},
                               {1.6382024005886102, 0.11400520128057501, 0.14835322090738504}};
  for (int i = 0; i < 3; ++i) {
    const auto& l = st.history[std::size_t(i)].loss;
    CHECK(l.l_pre == doctest::Approx(golden[i][0]).epsilon(1e-5));
    CHECK(l.l_st == doctest::Approx(golden[i][1]).epsilon(1e-5));
    CHECK(l.l_cl == doctest::Approx(golden[i][2]).epsilon(1e-5));
  }
}
