#pragma once
// Test-set evaluation, KDE reports, the tap-layer ablation and the alpha sweep.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pasr/backbone.hpp"
#include "pasr/config.hpp"
#include "pasr/datamodel.hpp"
#include "pasr/metrics.hpp"
#include "pasr/trainer.hpp"

namespace pasr {

struct MetricRow {
  std::string sample_id;
  int cls = 1;
  double dice = 0.0;
  double jaccard = 0.0;
  std::optional<double> hd95;
  std::optional<double> asd;
  // ok | absent (class missing from both) | empty_prediction | empty_ground_truth
  std::string status = "ok";
};

struct MetricSummary {
  double dice = 0.0;
  double jaccard = 0.0;
  double hd95 = 0.0;
  double asd = 0.0;
  std::size_t rows = 0;
  std::size_t surface_rows = 0;  // rows contributing to hd95 / asd
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricSummary mean;
  std::string config_digest;
  std::string checkpoint;
};

MetricRow score_class(const std::string& id, const LabelMap& pred, const LabelMap& gt, int cls);

// Rows ordered by sample then class 1..M-1.
MetricReport evaluate_predictions(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                                  const std::vector<LabelMap>& gts);

MetricReport evaluate(const ArchConfig& arch, const NetParams& params, const ForwardOptions& opts,
                      const std::vector<LabeledSample>& samples);

// sample,class,DICE,Jaccard,95HD,ASD,status
std::string metric_rows_csv(const MetricReport& r);
// DICE,Jaccard,95HD,ASD
std::string metric_summary_csv(const MetricReport& r);

// Gaussian kernel density estimate.
double silverman_bandwidth(const std::vector<double>& values);
std::vector<double> kde_grid(double lo, double hi, double step);
// Density of `values` at each grid point with bandwidth h.
std::vector<double> kde_density(std::vector<double> values, double h, const std::vector<double>& grid);
double trapezoid(const std::vector<double>& x, const std::vector<double>& y);

struct KdeCurve {
  int cls = 1;
  std::vector<double> x;
  std::vector<double> labeled;
  std::vector<double> unlabeled;
  double h_labeled = 0.0;
  double h_unlabeled = 0.0;
  std::size_t n_labeled = 0;
  std::size_t n_unlabeled = 0;
};

struct KdeReport {
  std::vector<KdeCurve> curves;
  std::vector<std::string> warnings;  // omitted classes
};

struct KdeOptions {
  KdeQuantity quantity = KdeQuantity::Probability;
  std::optional<double> bandwidth;  // default: Silverman per pool
};

// Per-class samples of the chosen quantity over voxels the model assigns to
// that class.
std::map<int, std::vector<double>> kde_samples(const ArchConfig& arch, const NetParams& params,
                                              const ForwardOptions& opts, const std::vector<Volume>& images,
                                              KdeQuantity quantity);

KdeReport kde_report(const ArchConfig& arch, const NetParams& params, const ForwardOptions& opts,
                     const DatasetSplit& split, const KdeOptions& kopts);

// Writes kde_class<c>.csv (x,density_labeled,density_unlabeled), kde_class<c>.svg
// and kde_warnings.txt.
void write_kde_report(const KdeReport& r, const std::filesystem::path& out_dir);

// Single train + evaluate run used by the harnesses.
struct PipelineRun {
  MetricReport test;
  std::vector<LossRecord> history;
  NetParams student;
};

// Pretrained parameters keyed by everything pretraining depends on.
class PretrainCache {
 public:
  const NetParams& get(const RunConfig& cfg, const DatasetSplit& split);

 private:
  std::map<std::string, NetParams> cache_;
};

PipelineRun run_pipeline(const RunConfig& cfg, const DatasetSplit& split, PretrainCache& cache);

struct HarnessRow {
  double key = 0.0;  // tap layer or alpha
  MetricSummary metrics;
};

std::vector<HarnessRow> ablation_layers(const RunConfig& cfg, const DatasetSplit& split, PretrainCache& cache);
std::vector<HarnessRow> sweep_alpha(const RunConfig& cfg, const DatasetSplit& split, const std::vector<double>& alphas,
                                    PretrainCache& cache);

// layer,DICE,Jaccard,95HD,ASD
std::string ablation_csv(const std::vector<HarnessRow>& rows);
// alpha,DICE,Jaccard,95HD,ASD
std::string sweep_csv(const std::vector<HarnessRow>& rows);

// Markdown summary of whatever report artifacts exist under `dir`.
std::string build_report(const std::filesystem::path& dir);

}  // namespace pasr
