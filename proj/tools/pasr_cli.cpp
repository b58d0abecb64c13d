// pasr: synthetic data, training, evaluation and report harnesses.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pasr/checkpoint.hpp"
#include "pasr/config.hpp"
#include "pasr/datamodel.hpp"
#include "pasr/evalreport.hpp"
#include "pasr/svg.hpp"
#include "pasr/synthdata.hpp"
#include "pasr/trainer.hpp"

namespace fs = std::filesystem;
using namespace pasr;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> keys;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value config file");
    app->add_option("--set", sets, "override as key=value (repeatable)");
    app->add_option("--out", out, "output directory (overrides output_dir)");
    for (const auto& k : valid_config_keys()) app->add_option("--" + k, keys[k], "config key " + k);
  }

  RunConfig resolve() const {
    std::vector<std::pair<std::string, std::string>> ov;
    for (const auto& s : sets) ov.push_back(split_override(s));
    for (const auto& k : valid_config_keys()) {
      auto it = keys.find(k);
      if (it != keys.end() && !it->second.empty()) ov.emplace_back(k, it->second);
    }
    if (!out.empty()) ov.emplace_back("output_dir", out);
    std::optional<fs::path> file;
    if (!config_file.empty()) file = config_file;
    return parse_config(file, ov);
  }
};

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

void print_summary(const MetricReport& r) {
  std::printf("DICE %.4f  Jaccard %.4f  95HD %.4f  ASD %.4f  (%zu rows, %zu with surfaces)\n", r.mean.dice,
              r.mean.jaccard, r.mean.hd95, r.mean.asd, r.mean.rows, r.mean.surface_rows);
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void save_eval(const MetricReport& rep, const fs::path& dir) {
  write_file(dir / "eval_rows.csv", metric_rows_csv(rep));
  write_file(dir / "eval_summary.csv", metric_summary_csv(rep));
}

std::vector<LabeledSample> pick_split(const DatasetSplit& split, const std::string& which) {
  if (which == "test") return split.test;
  if (which == "val") return split.validation;
  if (which == "labeled") return split.labeled;
  throw std::invalid_argument("unknown split '" + which + "' (test, val, labeled)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised segmentation with pairwise-similarity regularization"};
  app.require_subcommand(1);

  // synth
  SynthSpec spec;
  std::string synth_out = "data/synth";
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();
  synth->add_option("--image-size", spec.image_size)->capture_default_str();
  synth->add_option("--num-classes", spec.num_classes)->capture_default_str();
  synth->add_option("--min-shapes", spec.min_shapes)->capture_default_str();
  synth->add_option("--max-shapes", spec.max_shapes)->capture_default_str();
  synth->add_option("--min-radius", spec.min_radius)->capture_default_str();
  synth->add_option("--max-radius", spec.max_radius)->capture_default_str();
  synth->add_option("--class-means", spec.class_means, "one mean intensity per class");
  synth->add_option("--noise-sigma", spec.noise_sigma)->capture_default_str();
  synth->add_option("--shift-delta", spec.shift_delta)->capture_default_str();
  synth->add_option("--unlabeled-noise-sigma", spec.unlabeled_noise_sigma)->capture_default_str();
  synth->add_option("--labeled", spec.labeled)->capture_default_str();
  synth->add_option("--unlabeled", spec.unlabeled)->capture_default_str();
  synth->add_option("--val", spec.val)->capture_default_str();
  synth->add_option("--test", spec.test)->capture_default_str();

  std::string data;
  auto add_data = [&](CLI::App* a) { a->add_option("--data", data, "dataset manifest")->required(); };

  ConfigArgs pre_args, self_args, train_args, abl_args, sweep_args;

  auto* pre = app.add_subcommand("pretrain", "supervised teacher pretraining");
  add_data(pre);
  pre_args.attach(pre);

  std::string init_dir, resume_dir;
  auto* self = app.add_subcommand("selftrain", "teacher-student self-training");
  add_data(self);
  self_args.attach(self);
  self->add_option("--init", init_dir, "pretrained model directory");
  self->add_option("--resume", resume_dir, "checkpoint directory to resume from");

  auto* train = app.add_subcommand("train", "pretrain then self-train, then evaluate on the test split");
  add_data(train);
  train_args.attach(train);

  std::string ckpt, network = "student", which_split = "test", eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_data(eval);
  eval->add_option("--checkpoint", ckpt, "checkpoint or pretrained directory")->required();
  eval->add_option("--network", network, "student or teacher")->capture_default_str();
  eval->add_option("--split", which_split, "test, val or labeled")->capture_default_str();
  eval->add_option("--out", eval_out, "directory for eval_rows.csv / eval_summary.csv");

  std::string kde_out = "kde", quantity;
  double bandwidth = 0.0;
  auto* kde = app.add_subcommand("kde", "per-class density curves, labeled vs unlabeled pool");
  add_data(kde);
  kde->add_option("--checkpoint", ckpt, "checkpoint or pretrained directory")->required();
  kde->add_option("--network", network, "student or teacher")->capture_default_str();
  kde->add_option("--out", kde_out, "output directory")->capture_default_str();
  kde->add_option("--bandwidth", bandwidth, "kernel bandwidth (default: Silverman's rule)");
  kde->add_option("--quantity", quantity, "probability or feature (default from checkpoint config)");

  auto* abl = app.add_subcommand("ablate-layers", "train and evaluate once per tap layer");
  add_data(abl);
  abl_args.attach(abl);

  std::vector<double> alphas{0.0, 0.01, 0.05, 0.1};
  auto* sweep = app.add_subcommand("sweep-alpha", "train and evaluate once per alpha");
  add_data(sweep);
  sweep_args.attach(sweep);
  sweep->add_option("--values", alphas, "alpha values")->capture_default_str();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "assemble a markdown summary of a run directory");
  report->add_option("--dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const DatasetSplit s = generate_dataset(spec, synth_out);
      std::printf("wrote %zu labeled, %zu unlabeled, %zu val, %zu test samples to %s\n", s.labeled.size(),
                  s.unlabeled.size(), s.validation.size(), s.test.size(), (fs::path(synth_out) / "manifest.txt").c_str());
      return 0;
    }
    if (report->parsed()) {
      const fs::path out = fs::path(report_dir) / "report.md";
      write_file(out, build_report(report_dir));
      std::printf("wrote %s\n", out.c_str());
      return 0;
    }

    const DatasetSplit split = load_manifest(data);

    if (pre->parsed()) {
      const RunConfig cfg = pre_args.resolve();
      Timer t;
      const PretrainResult r = pretrain(cfg, split);
      save_pretrained(cfg, arch_for(cfg, split), r.params, r.history, cfg.output_dir);
      std::printf("pretrained %d iterations in %.1fs -> %s\n", cfg.pretrain_iters, t.seconds(), cfg.output_dir.c_str());
      return 0;
    }
    if (self->parsed()) {
      Timer t;
      TrainState st;
      if (!resume_dir.empty()) {
        st = load_checkpoint(resume_dir);
        // Only the run length and output location may change on resume.
        const RunConfig cli = self_args.resolve();
        st.cfg.selftrain_iters = cli.selftrain_iters;
        st.cfg.output_dir = cli.output_dir;
      } else {
        if (init_dir.empty()) throw std::invalid_argument("selftrain needs --init or --resume");
        const RunConfig cfg = self_args.resolve();
        const PretrainedModel m = load_pretrained(init_dir);
        const ArchConfig arch = arch_for(cfg, split);
        st = init_selftrain(cfg, arch, retarget_params(m.params, arch, cfg.seed));
      }
      SelftrainOptions so;
      so.out_dir = st.cfg.output_dir;
      run_selftrain(st, split, so);
      std::printf("self-trained to iteration %llu in %.1fs -> %s\n", static_cast<unsigned long long>(st.iteration),
                  t.seconds(), st.cfg.output_dir.c_str());
      return 0;
    }
    if (train->parsed()) {
      const RunConfig cfg = train_args.resolve();
      const fs::path out = cfg.output_dir;
      Timer t;
      const PretrainResult r = pretrain(cfg, split);
      save_pretrained(cfg, arch_for(cfg, split), r.params, r.history, out / "pretrain");
      std::printf("pretrain done (%.1fs)\n", t.seconds());
      const ArchConfig arch = arch_for(cfg, split);
      TrainState st = init_selftrain(cfg, arch, r.params);
      SelftrainOptions so;
      so.out_dir = out;
      run_selftrain(st, split, so);
      std::printf("self-training done (%.1fs)\n", t.seconds());
      const MetricReport rep = evaluate(arch, st.student, ForwardOptions::from_run(cfg), split.test);
      save_eval(rep, out);
      print_summary(rep);
      return 0;
    }
    if (eval->parsed()) {
      const PretrainedModel m = load_model(ckpt, network);
      MetricReport rep = evaluate(m.arch, m.params, ForwardOptions::from_run(m.cfg), pick_split(split, which_split));
      rep.config_digest = m.cfg.digest();
      rep.checkpoint = ckpt;
      if (!eval_out.empty()) save_eval(rep, eval_out);
      print_summary(rep);
      return 0;
    }
    if (kde->parsed()) {
      const PretrainedModel m = load_model(ckpt, network);
      KdeOptions ko;
      ko.quantity = m.cfg.kde_quantity;
      if (!quantity.empty()) {
        RunConfig tmp;
        tmp.set("kde_quantity", quantity);
        ko.quantity = tmp.kde_quantity;
      }
      if (bandwidth > 0.0) ko.bandwidth = bandwidth;
      const KdeReport r = kde_report(m.arch, m.params, ForwardOptions::from_run(m.cfg), split, ko);
      write_kde_report(r, kde_out);
      for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::printf("wrote %zu curve(s) to %s\n", r.curves.size(), kde_out.c_str());
      return 0;
    }
    if (abl->parsed()) {
      const RunConfig cfg = abl_args.resolve();
      PretrainCache cache;
      const auto rows = ablation_layers(cfg, split, cache);
      const fs::path out = cfg.output_dir;
      write_file(out / "ablation_layers.csv", ablation_csv(rows));
      std::cout << ablation_csv(rows);
      return 0;
    }
    if (sweep->parsed()) {
      const RunConfig cfg = sweep_args.resolve();
      PretrainCache cache;
      const auto rows = sweep_alpha(cfg, split, alphas, cache);
      const fs::path out = cfg.output_dir;
      write_file(out / "sweep_alpha.csv", sweep_csv(rows));
      Series s{"DICE", {}, {}, "#d62728", true};
      for (const auto& r : rows) {
        s.x.push_back(r.key);
        s.y.push_back(r.metrics.dice);
      }
      write_file(out / "sweep_alpha.svg", line_chart_svg("Test DICE vs alpha", "alpha", "DICE", {s}));
      std::cout << sweep_csv(rows);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
