#include "pasr/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "pasr/svg.hpp"

namespace fs = std::filesystem;

namespace pasr {

namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Cut-off in bandwidths beyond which a Gaussian term underflows to zero.
constexpr double kKernelReach = 40.0;
constexpr double kFallbackBandwidth = 1e-3;
constexpr std::size_t kMaxGridPoints = 1000001;

}  // namespace

MetricRow score_class(const std::string& id, const LabelMap& pred, const LabelMap& gt, int cls) {
  if (pred.extent() != gt.extent()) throw std::invalid_argument("score_class: extent mismatch for sample " + id);
  const BinaryImage p = BinaryImage::of_class(pred, cls);
  const BinaryImage g = BinaryImage::of_class(gt, cls);
  MetricRow r;
  r.sample_id = id;
  r.cls = cls;
  const std::size_t np = p.count(), ng = g.count();
  if (np == 0 && ng == 0) {
    r.dice = r.jaccard = 1.0;
    r.status = "absent";
    return r;
  }
  r.dice = dice(p, g);
  r.jaccard = jaccard(p, g);
  if (np == 0) {
    r.status = "empty_prediction";
  } else if (ng == 0) {
    r.status = "empty_ground_truth";
  } else {
    const auto d = surface_distances(p, g, gt.spacing());
    r.hd95 = percentile(d, 95.0);
    r.asd = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  }
  return r;
}

MetricReport evaluate_predictions(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                                  const std::vector<LabelMap>& gts) {
  if (ids.size() != preds.size() || preds.size() != gts.size()) {
    throw std::invalid_argument("evaluate_predictions: list lengths differ");
  }
  MetricReport rep;
  double sd = 0, sj = 0, sh = 0, sa = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int c = 1; c < gts[i].num_classes(); ++c) {
      MetricRow r = score_class(ids[i], preds[i], gts[i], c);
      sd += r.dice;
      sj += r.jaccard;
      if (r.hd95) {
        sh += *r.hd95;
        sa += *r.asd;
        ++rep.mean.surface_rows;
      }
      rep.rows.push_back(std::move(r));
    }
  }
  const double n = static_cast<double>(rep.rows.size());
  const double ns = static_cast<double>(rep.mean.surface_rows);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rep.mean.rows = rep.rows.size();
  rep.mean.dice = n > 0 ? sd / n : nan;
  rep.mean.jaccard = n > 0 ? sj / n : nan;
  rep.mean.hd95 = ns > 0 ? sh / ns : nan;
  rep.mean.asd = ns > 0 ? sa / ns : nan;
  return rep;
}

MetricReport evaluate(const ArchConfig& arch, const NetParams& params, const ForwardOptions& opts,
                      const std::vector<LabeledSample>& samples) {
  std::vector<std::string> ids;
  std::vector<LabelMap> preds, gts;
  for (const auto& s : samples) {
    ids.push_back(s.id);
    preds.push_back(predict_labels(arch, params, s.image, opts));
    gts.push_back(s.label);
  }
  return evaluate_predictions(ids, preds, gts);
}

std::string metric_rows_csv(const MetricReport& r) {
  std::string out = "sample,class,DICE,Jaccard,95HD,ASD,status\n";
  for (const auto& row : r.rows) {
    out += row.sample_id + "," + std::to_string(row.cls) + "," + fmt(row.dice) + "," + fmt(row.jaccard) + "," +
           (row.hd95 ? fmt(*row.hd95) : "") + "," + (row.asd ? fmt(*row.asd) : "") + "," + row.status + "\n";
  }
  return out;
}

std::string metric_summary_csv(const MetricReport& r) {
  return "DICE,Jaccard,95HD,ASD\n" + fmt(r.mean.dice) + "," + fmt(r.mean.jaccard) + "," + fmt(r.mean.hd95) + "," +
         fmt(r.mean.asd) + "\n";
}

double silverman_bandwidth(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) return kFallbackBandwidth;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(n - 1));
  const double iqr = percentile(values, 75.0) - percentile(values, 25.0);
  const double spread = iqr > 0.0 ? std::min(sigma, iqr / 1.34) : sigma;
  const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  return (std::isfinite(h) && h > 0.0) ? h : kFallbackBandwidth;
}

std::vector<double> kde_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo)) throw std::invalid_argument("kde_grid: invalid range");
  const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / step)) + 1;
  if (n > kMaxGridPoints) throw std::invalid_argument("kde_grid: too many grid points");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + step * static_cast<double>(i);
  return g;
}

std::vector<double> kde_density(std::vector<double> values, double h, const std::vector<double>& grid) {
  if (!(h > 0.0)) throw std::invalid_argument("kde_density: bandwidth must be positive");
  std::vector<double> d(grid.size(), 0.0);
  if (values.empty() || grid.empty()) return d;
  std::sort(values.begin(), values.end());
  const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * M_PI));
  // Grid-major with a sorted window so every density is summed in value order.
  std::size_t first = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double x = grid[g];
    while (first < values.size() && values[first] < x - kKernelReach * h) ++first;
    double sum = 0.0;
    for (std::size_t i = first; i < values.size() && values[i] <= x + kKernelReach * h; ++i) {
      const double u = (x - values[i]) / h;
      sum += std::exp(-0.5 * u * u);
    }
    d[g] = sum * norm;
  }
  return d;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size() && i < y.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

std::map<int, std::vector<double>> kde_samples(const ArchConfig& arch, const NetParams& params,
                                              const ForwardOptions& opts, const std::vector<Volume>& images,
                                              KdeQuantity quantity) {
  std::map<int, std::vector<double>> out;
  for (const auto& img : images) {
    const ForwardOutput fo = forward_segment(arch, params, Tensor::from_volume(img), opts);
    const Tensor prob = softmax_channels(fo.logits);
    const LabelMap labels = argmax_labels(fo.logits);
    const Extent& e = img.extent();
    const Extent& te = fo.tap_features.extent;
    const std::size_t shift = static_cast<std::size_t>(arch.tap_layer - 1);
    for (std::size_t z = 0; z < e.d; ++z)
      for (std::size_t y = 0; y < e.h; ++y)
        for (std::size_t x = 0; x < e.w; ++x) {
          const std::size_t i = e.index(z, y, x);
          const int c = labels[i];
          if (c == 0) continue;
          double v = 0.0;
          if (quantity == KdeQuantity::Probability) {
            v = prob.at(static_cast<std::size_t>(c), i);
          } else {
            const std::size_t ti = te.index(e.rank == 3 ? z >> shift : 0, y >> shift, x >> shift);
            for (std::size_t ch = 0; ch < fo.tap_features.channels; ++ch) v += fo.tap_features.at(ch, ti);
            v /= static_cast<double>(fo.tap_features.channels);
          }
          out[c].push_back(v);
        }
  }
  return out;
}

KdeReport kde_report(const ArchConfig& arch, const NetParams& params, const ForwardOptions& opts,
                     const DatasetSplit& split, const KdeOptions& kopts) {
  std::vector<Volume> lab, unl;
  for (const auto& s : split.labeled) lab.push_back(s.image);
  for (const auto& s : split.unlabeled) unl.push_back(s.image);
  auto sl = kde_samples(arch, params, opts, lab, kopts.quantity);
  auto su = kde_samples(arch, params, opts, unl, kopts.quantity);
  KdeReport rep;
  for (int c = 1; c < split.num_classes; ++c) {
    const auto& vl = sl[c];
    const auto& vu = su[c];
    if (vl.empty() || vu.empty()) {
      rep.warnings.push_back("class " + std::to_string(c) + ": no " + (vl.empty() ? "labeled" : "unlabeled") +
                             " voxels assigned; curve omitted");
      continue;
    }
    KdeCurve k;
    k.cls = c;
    k.n_labeled = vl.size();
    k.n_unlabeled = vu.size();
    k.h_labeled = kopts.bandwidth ? *kopts.bandwidth : silverman_bandwidth(vl);
    k.h_unlabeled = kopts.bandwidth ? *kopts.bandwidth : silverman_bandwidth(vu);
    const double lo = std::min(*std::min_element(vl.begin(), vl.end()), *std::min_element(vu.begin(), vu.end()));
    const double hi = std::max(*std::max_element(vl.begin(), vl.end()), *std::max_element(vu.begin(), vu.end()));
    const double hmax = std::max(k.h_labeled, k.h_unlabeled);
    const double hmin = std::min(k.h_labeled, k.h_unlabeled);
    const double span = (hi - lo) + 10.0 * hmax;
    const double step = std::max(hmin / 4.0, span / static_cast<double>(kMaxGridPoints - 2));
    k.x = kde_grid(lo - 5.0 * hmax, hi + 5.0 * hmax, step);
    k.labeled = kde_density(vl, k.h_labeled, k.x);
    k.unlabeled = kde_density(vu, k.h_unlabeled, k.x);
    rep.curves.push_back(std::move(k));
  }
  return rep;
}

void write_kde_report(const KdeReport& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (const auto& k : r.curves) {
    std::string csv = "x,density_labeled,density_unlabeled\n";
    for (std::size_t i = 0; i < k.x.size(); ++i) {
      csv += fmt(k.x[i]) + "," + fmt(k.labeled[i]) + "," + fmt(k.unlabeled[i]) + "\n";
    }
    const std::string stem = "kde_class" + std::to_string(k.cls);
    write_text(out_dir / (stem + ".csv"), csv);
    // Thin the polyline for the figure; the CSV keeps the full grid.
    const std::size_t stride = std::max<std::size_t>(1, k.x.size() / 2000);
    Series sl{"labeled (h=" + fmt(k.h_labeled) + ")", {}, {}, "#2ca02c"};
    Series su{"unlabeled (h=" + fmt(k.h_unlabeled) + ")", {}, {}, "#1f77b4"};
    for (std::size_t i = 0; i < k.x.size(); i += stride) {
      sl.x.push_back(k.x[i]);
      sl.y.push_back(k.labeled[i]);
      su.x.push_back(k.x[i]);
      su.y.push_back(k.unlabeled[i]);
    }
    write_text(out_dir / (stem + ".svg"),
               line_chart_svg("Class " + std::to_string(k.cls) + " density", "value", "density", {sl, su}));
  }
  std::string warn;
  for (const auto& w : r.warnings) warn += w + "\n";
  write_text(out_dir / "kde_warnings.txt", warn);
}

const NetParams& PretrainCache::get(const RunConfig& cfg, const DatasetSplit& split) {
  RunConfig canon = cfg;
  canon.tap_layer = 1;
  std::ostringstream key;
  key << &split << "|" << canon.seed << "|" << canon.get("lr") << "|" << canon.get("momentum") << "|"
      << canon.get("optimizer") << "|" << canon.batch_size << "|" << canon.pretrain_iters << "|"
      << canon.encoder_depth << "|" << canon.base_channels;
  auto it = cache_.find(key.str());
  if (it != cache_.end()) return it->second;
  return cache_.emplace(key.str(), pretrain(canon, split).params).first->second;
}

PipelineRun run_pipeline(const RunConfig& cfg, const DatasetSplit& split, PretrainCache& cache) {
  const ArchConfig arch = arch_for(cfg, split);
  const NetParams teacher = retarget_params(cache.get(cfg, split), arch, cfg.seed);
  TrainState st = init_selftrain(cfg, arch, teacher);
  SelftrainOptions so;
  so.validate = false;
  run_selftrain(st, split, so);
  PipelineRun run;
  run.test = evaluate(arch, st.student, ForwardOptions::from_run(cfg), split.test);
  run.history = std::move(st.history);
  run.student = std::move(st.student);
  return run;
}

std::vector<HarnessRow> ablation_layers(const RunConfig& cfg, const DatasetSplit& split, PretrainCache& cache) {
  std::vector<HarnessRow> rows;
  for (int layer = 1; layer <= cfg.encoder_depth; ++layer) {
    RunConfig c = cfg;
    c.tap_layer = layer;
    rows.push_back({static_cast<double>(layer), run_pipeline(c, split, cache).test.mean});
  }
  return rows;
}

std::vector<HarnessRow> sweep_alpha(const RunConfig& cfg, const DatasetSplit& split, const std::vector<double>& alphas,
                                    PretrainCache& cache) {
  if (alphas.empty()) throw std::invalid_argument("sweep_alpha: no alpha values given");
  std::vector<HarnessRow> rows;
  for (double a : alphas) {
    if (!(a >= 0.0)) throw std::invalid_argument("sweep_alpha: alpha values must be >= 0");
    RunConfig c = cfg;
    c.alpha = a;
    rows.push_back({a, run_pipeline(c, split, cache).test.mean});
  }
  return rows;
}

namespace {

std::string harness_csv(const char* key, const std::vector<HarnessRow>& rows, bool integer_key) {
  std::string out = std::string(key) + ",DICE,Jaccard,95HD,ASD\n";
  for (const auto& r : rows) {
    out += (integer_key ? std::to_string(static_cast<int>(r.key)) : fmt(r.key)) + "," + fmt(r.metrics.dice) + "," +
           fmt(r.metrics.jaccard) + "," + fmt(r.metrics.hd95) + "," + fmt(r.metrics.asd) + "\n";
  }
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string markdown_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "(empty)\n";
  std::string out = "|";
  for (const auto& h : rows[0]) out += " " + h + " |";
  out += "\n|";
  for (std::size_t i = 0; i < rows[0].size(); ++i) out += "---|";
  out += "\n";
  for (std::size_t r = 1; r < rows.size(); ++r) {
    out += "|";
    for (const auto& c : rows[r]) out += " " + c + " |";
    out += "\n";
  }
  return out;
}

}  // namespace

std::string ablation_csv(const std::vector<HarnessRow>& rows) { return harness_csv("layer", rows, true); }

std::string sweep_csv(const std::vector<HarnessRow>& rows) { return harness_csv("alpha", rows, false); }

std::string build_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("report: " + dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir);
    if (rel.begin()->string() == "checkpoints") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());

  std::string md = "# Run report: " + dir.filename().string() + "\n\n";
  const std::vector<std::pair<std::string, std::string>> known = {
      {"eval_summary.csv", "Test metrics"},
      {"ablation_layers.csv", "Tap-layer ablation"},
      {"sweep_alpha.csv", "Alignment weight sweep"},
      {"val_metrics.csv", "Validation history"},
  };
  for (const auto& [name, title] : known) {
    for (const auto& f : files) {
      if (f.filename() != name) continue;
      md += "## " + title + " (`" + f.generic_string() + "`)\n\n" + markdown_table(parse_csv(read_text(dir / f))) +
            "\n";
    }
  }
  for (const auto& f : files) {
    if (f.filename() != "losses.csv") continue;
    const auto rows = parse_csv(read_text(dir / f));
    md += "## Loss log (`" + f.generic_string() + "`)\n\n";
    if (rows.size() < 2) {
      md += "(no iterations)\n\n";
      continue;
    }
    md += markdown_table({rows[0], rows[1], rows.back()}) + "\n";
  }
  std::string figures;
  for (const auto& f : files) {
    if (f.extension() == ".svg") figures += "![" + f.stem().string() + "](" + f.generic_string() + ")\n\n";
  }
  if (!figures.empty()) md += "## Figures\n\n" + figures;
  for (const auto& f : files) {
    if (f.filename() == "kde_warnings.txt") {
      const std::string w = read_text(dir / f);
      if (!w.empty()) md += "## KDE warnings\n\n```\n" + w + "```\n";
    }
  }
  return md;
}

}  // namespace pasr
