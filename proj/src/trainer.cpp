#include "pasr/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pasr/evalreport.hpp"
#include "pasr/mixing.hpp"
#include "pasr/optim.hpp"
#include "pasr/synthdata.hpp"

namespace fs = std::filesystem;

namespace pasr {

namespace {

constexpr std::uint64_t kPretrainStream = 0x7072657472616e31ULL;
constexpr std::uint64_t kSelftrainStream = 0x73656c6674726e32ULL;

// k distinct indices from [0, n) by partial Fisher-Yates.
std::vector<std::size_t> draw_distinct(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

std::string format_val_row(std::uint64_t iteration, const char* network, const MetricSummary& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%s,%.10g,%.10g,%.10g,%.10g", static_cast<unsigned long long>(iteration), network,
                m.dice, m.jaccard, m.hd95, m.asd);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

void write_logs(const TrainState& st, const fs::path& out) {
  fs::create_directories(out);
  write_loss_csv(out / "losses.csv", st.history);
  std::string val = "iteration,network,DICE,Jaccard,95HD,ASD\n";
  for (const auto& r : st.val_rows) val += r + "\n";
  write_text(out / "val_metrics.csv", val);
}

}  // namespace

ArchConfig arch_for(const RunConfig& cfg, const DatasetSplit& split) {
  return ArchConfig::from_run(cfg, split.num_classes, split.any_image().extent().rank);
}

PretrainResult pretrain(const RunConfig& cfg, const DatasetSplit& split) {
  if (split.labeled.empty()) throw std::invalid_argument("pretrain: the labeled set is empty");
  const ArchConfig arch = arch_for(cfg, split);
  PretrainResult res;
  res.params = init_params(arch, cfg.seed);
  const OptimizerSettings os = OptimizerSettings::from_run(cfg);
  OptimizerState opt = make_optimizer_state(os, res.params);
  std::mt19937_64 rng(sample_seed(cfg.seed, kPretrainStream));
  const ForwardOptions plain = ForwardOptions::plain();
  const auto n = split.labeled.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int it = 1; it <= cfg.pretrain_iters; ++it) {
    std::vector<std::size_t> batch;
    if (n >= bs) {
      batch = draw_distinct(rng, n, bs);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < bs; ++i) batch.push_back(pick(rng));
    }
    NetParams grads = res.params.zeros_like();
    double loss = 0.0;
    const double w = 1.0 / static_cast<double>(bs);
    for (auto i : batch) {
      const LabeledSample& s = split.labeled[i];
      ForwardCache cache;
      ForwardOutput out = forward_segment(arch, res.params, Tensor::from_volume(s.image), plain, &cache);
      Tensor d(out.logits.channels, out.logits.extent);
      loss += w * combined_loss(out.logits, s.label, &d, w);
      backward_segment(arch, res.params, plain, cache, out, Upstream{&d, nullptr, nullptr}, grads);
    }
    if (!std::isfinite(loss)) {
      std::string ids;
      for (auto i : batch) ids += " " + split.labeled[i].id;
      throw NonFiniteLoss("pretrain iteration " + std::to_string(it) + ": non-finite loss on batch" + ids);
    }
    res.history.push_back({static_cast<std::uint64_t>(it), total_loss(loss, 0.0, 0.0, 0.0, 0.0)});
    optimizer_step(os, opt, res.params, grads);
  }
  return res;
}

NetParams retarget_params(const NetParams& trained, const ArchConfig& arch, std::uint64_t seed) {
  NetParams out = init_params(arch, seed);
  for (auto& t : out.tensors) {
    if (t.name.rfind("graph.", 0) == 0 || t.name.rfind("cluster.", 0) == 0) continue;
    const ParamTensor& src = trained.at(t.name);
    if (src.shape != t.shape) throw std::invalid_argument("retarget_params: shape mismatch for " + t.name);
    t.values = src.values;
  }
  return out;
}

std::vector<LabelMap> generate_pseudo_labels(const ArchConfig& arch, const NetParams& teacher,
                                             const ForwardOptions& opts, const std::vector<Volume>& images) {
  std::vector<LabelMap> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(predict_labels(arch, teacher, img, opts));
  return out;
}

void ema_update(NetParams& teacher, const NetParams& student, double lambda) {
  if (!teacher.same_structure(student)) throw std::invalid_argument("ema_update: teacher/student structure mismatch");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("ema_update: lambda must lie in [0, 1]");
  if (lambda == 1.0) return;
  if (lambda == 0.0) {
    teacher = student;
    return;
  }
  for (std::size_t t = 0; t < teacher.tensors.size(); ++t) {
    auto& tv = teacher.tensors[t].values;
    const auto& sv = student.tensors[t].values;
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = lambda * tv[i] + (1.0 - lambda) * sv[i];
  }
}

StepBatch sample_batch(TrainState& state, const DatasetSplit& split) {
  if (split.labeled.size() < 2) throw std::invalid_argument("self-training needs at least 2 labeled samples");
  if (split.unlabeled.size() < 2) throw std::invalid_argument("self-training needs at least 2 unlabeled samples");
  const Extent extent = split.any_image().extent();
  StepBatch b;
  for (int i = 0; i < state.cfg.batch_size; ++i) {
    const auto l = draw_distinct(state.rng, split.labeled.size(), 2);
    const auto u = draw_distinct(state.rng, split.unlabeled.size(), 2);
    Mask m = generate_mask(extent, state.cfg.mask_ratio, state.rng);
    b.pairs.push_back(MixedPair{l[0], l[1], u[0], u[1], std::move(m)});
  }
  return b;
}

TrainState init_selftrain(const RunConfig& cfg, const ArchConfig& arch, const NetParams& teacher_init) {
  TrainState st;
  st.cfg = cfg;
  st.arch = arch;
  st.teacher = teacher_init;
  st.student = teacher_init;
  st.opt = make_optimizer_state(OptimizerSettings::from_run(cfg), teacher_init);
  st.rng.seed(sample_seed(cfg.seed, kSelftrainStream));
  return st;
}

LossBreakdown selftrain_objective(const TrainState& st, const DatasetSplit& split, const StepBatch& batch,
                                  NetParams& grads, NetParams* teacher_grads) {
  const RunConfig& cfg = st.cfg;
  const ArchConfig& arch = st.arch;
  const ForwardOptions opts = ForwardOptions::from_run(cfg);
  const bool graph = opts.build_graph;
  const bool teacher_grad = teacher_grads && graph && cfg.teacher_alignment_grad && cfg.alpha > 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.pairs.size());
  NetParams& tgrads = teacher_grad ? *teacher_grads : grads;
  double l_pre = 0.0, l_st = 0.0, l_cl = 0.0;

  for (const MixedPair& pair : batch.pairs) {
    const LabeledSample& la = split.labeled.at(pair.a);
    const LabeledSample& lb = split.labeled.at(pair.b);
    const UnlabeledSample& us = split.unlabeled.at(pair.s);
    const UnlabeledSample& ut = split.unlabeled.at(pair.t);

    // Teacher: pseudo-labels and target graphs.
    ForwardCache tc_s, tc_t;
    const ForwardOutput to_s =
        forward_segment(arch, st.teacher, Tensor::from_volume(us.image), opts, teacher_grad ? &tc_s : nullptr);
    const ForwardOutput to_t =
        forward_segment(arch, st.teacher, Tensor::from_volume(ut.image), opts, teacher_grad ? &tc_t : nullptr);
    const LabelMap pseudo_s = argmax_labels(to_s.logits, us.image.spacing());
    const LabelMap pseudo_t = argmax_labels(to_t.logits, ut.image.spacing());

    const auto [p, q] = bidirectional_mix(MixSources{&la, &lb, &us, &ut, &pseudo_s, &pseudo_t}, pair.mask);

    ForwardCache cp, cq;
    const ForwardOutput op = forward_segment(arch, st.student, Tensor::from_volume(p.image), opts, &cp);
    const ForwardOutput oq = forward_segment(arch, st.student, Tensor::from_volume(q.image), opts, &cq);

    Tensor dp(op.logits.channels, op.logits.extent), dq(oq.logits.channels, oq.logits.extent);
    l_pre += inv_b * prediction_loss(op.logits, p.label, oq.logits, q.label, pair.mask, cfg.gamma, cfg.region_norm,
                                     PredictionGrads{&dp, &dq, inv_b});

    std::optional<Matrix> dsim_p, dsim_q, dassign_p, dassign_q;
    if (graph) {
      const Matrix& au_t = to_t.graph->similarity();
      const Matrix& au_s = to_s.graph->similarity();
      const Matrix& am_p = op.graph->similarity();
      const Matrix& am_q = oq.graph->similarity();
      l_st += inv_b * 0.5 * (alignment_distance(au_t, am_p) + alignment_distance(au_s, am_q));
      dsim_p = Matrix::Zero(am_p.rows(), am_p.cols());
      dsim_q = Matrix::Zero(am_q.rows(), am_q.cols());
      if (cfg.alpha > 0.0) {
        const double w = cfg.alpha * 0.5 * inv_b;
        const Matrix gp = alignment_distance_grad(au_t, am_p);
        const Matrix gq = alignment_distance_grad(au_s, am_q);
        *dsim_p += w * gp;
        *dsim_q += w * gq;
        if (teacher_grad) {
          const Matrix dt = -w * gp;
          const Matrix ds = -w * gq;
          backward_segment(arch, st.teacher, opts, tc_t, to_t, Upstream{nullptr, &dt, nullptr}, tgrads);
          backward_segment(arch, st.teacher, opts, tc_s, to_s, Upstream{nullptr, &ds, nullptr}, tgrads);
        }
      }

      const bool from_student = cfg.cluster_source == ClusterSource::Student;
      auto cluster_term = [&](const ForwardOutput& o, const Matrix& a_teacher, Matrix& dsim,
                              std::optional<Matrix>& dassign) {
        const Matrix& a = from_student ? o.graph->similarity() : a_teacher;
        const Matrix& c = o.graph->assignments();
        const double n = static_cast<double>(a.rows());
        const double norm = cfg.cluster_loss_norm == ClusterLossNorm::Mean ? 1.0 / (n * n) : 1.0;
        l_cl += 0.5 * inv_b * norm * clustering_loss(a, c);
        if (cfg.beta > 0.0) {
          const double w = cfg.beta * 0.5 * inv_b * norm;
          auto [da, dc] = clustering_loss_grad(a, c);
          dassign = w * dc;
          if (from_student) dsim += w * da;
        }
      };
      cluster_term(op, au_t, *dsim_p, dassign_p);
      cluster_term(oq, au_s, *dsim_q, dassign_q);
    }

    backward_segment(arch, st.student, opts, cp, op,
                     Upstream{&dp, dsim_p ? &*dsim_p : nullptr, dassign_p ? &*dassign_p : nullptr}, grads);
    backward_segment(arch, st.student, opts, cq, oq,
                     Upstream{&dq, dsim_q ? &*dsim_q : nullptr, dassign_q ? &*dassign_q : nullptr}, grads);
  }

  LossBreakdown lb;
  try {
    lb = total_loss(l_pre, l_st, l_cl, cfg.alpha, cfg.beta, cfg.gamma);
  } catch (const NonFiniteLoss& e) {
    std::string ids;
    for (const auto& pr : batch.pairs) {
      ids += " (" + split.labeled[pr.a].id + "," + split.labeled[pr.b].id + "," + split.unlabeled[pr.s].id + "," +
             split.unlabeled[pr.t].id + ")";
    }
    throw NonFiniteLoss("self-training iteration " + std::to_string(st.iteration + 1) + ": " + e.what() +
                        "; batch" + ids);
  }
  return lb;
}

LossBreakdown selftrain_step(TrainState& st, const DatasetSplit& split, const StepBatch& batch) {
  const RunConfig& cfg = st.cfg;
  const bool teacher_grad = cfg.teacher_alignment_grad && cfg.alpha > 0.0 && ForwardOptions::from_run(cfg).build_graph;
  NetParams grads = st.student.zeros_like();
  NetParams tgrads = teacher_grad ? st.teacher.zeros_like() : NetParams{};
  const LossBreakdown lb = selftrain_objective(st, split, batch, grads, teacher_grad ? &tgrads : nullptr);

  optimizer_step(OptimizerSettings::from_run(cfg), st.opt, st.student, grads);
  if (teacher_grad) {
    for (std::size_t t = 0; t < st.teacher.tensors.size(); ++t) {
      auto& v = st.teacher.tensors[t].values;
      const auto& g = tgrads.tensors[t].values;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.lr * g[i];
    }
  }
  ema_update(st.teacher, st.student, cfg.lambda_ema);
  ++st.iteration;
  st.history.push_back({st.iteration, lb});
  return lb;
}

fs::path checkpoint_dir(const fs::path& out_dir, std::uint64_t iteration) {
  std::ostringstream name;
  name << "iter_" << std::setw(6) << std::setfill('0') << iteration;
  return out_dir / "checkpoints" / name.str();
}

void run_selftrain(TrainState& st, const DatasetSplit& split, const SelftrainOptions& opts) {
  const auto total = static_cast<std::uint64_t>(st.cfg.selftrain_iters);
  const std::uint64_t until = opts.stop_at ? std::min(*opts.stop_at, total) : total;
  const auto interval = static_cast<std::uint64_t>(st.cfg.checkpoint_interval);
  const ForwardOptions fopts = ForwardOptions::from_run(st.cfg);
  bool saved_last = false;

  while (st.iteration < until) {
    const StepBatch batch = sample_batch(st, split);
    selftrain_step(st, split, batch);
    if (opts.on_step) opts.on_step(st);
    const bool scheduled = (interval > 0 && st.iteration % interval == 0) || st.iteration == total;
    saved_last = false;
    if (scheduled) {
      if (opts.validate && !split.validation.empty()) {
        st.val_rows.push_back(
            format_val_row(st.iteration, "student", evaluate(st.arch, st.student, fopts, split.validation).mean));
        st.val_rows.push_back(
            format_val_row(st.iteration, "teacher", evaluate(st.arch, st.teacher, fopts, split.validation).mean));
      }
      if (opts.out_dir) {
        save_checkpoint(st, checkpoint_dir(*opts.out_dir, st.iteration));
        saved_last = true;
      }
    }
  }
  if (opts.out_dir) {
    if (!saved_last) save_checkpoint(st, checkpoint_dir(*opts.out_dir, st.iteration));
    write_logs(st, *opts.out_dir);
  }
}

}  // namespace pasr
