#pragma once
// Run configuration: flat `key = value` files with `#` comments, overridden by
// command-line `key=value` pairs. Keys are exactly the RunConfig field names.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pasr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { Sgd, Adam };
enum class GraphFusion { Auto, On, Off };
enum class AdjacencyNorm { None, Mean, RowSoftmax };
enum class ClusterLossNorm { Sum, Mean };
enum class ClusterSource { Student, Teacher };
enum class RegionNorm { Region, Total };
enum class KdeQuantity { Probability, Feature };

struct RunConfig {
  double alpha = 0.05;
  double beta = 0.01;
  double gamma = 0.5;
  double mu = 2.0;
  double lambda_ema = 0.99;
  double lr = 0.01;
  int tap_layer = 1;
  int grid_size = 16;
  int num_clusters = 0;  // 0: one cluster per segmentation class
  int batch_size = 2;
  int pretrain_iters = 300;
  int selftrain_iters = 600;
  double mask_ratio = 2.0 / 3.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::string output_dir = "runs/default";

  double momentum = 0.9;
  int encoder_depth = 5;
  int base_channels = 8;
  int cluster_hidden = 16;
  GraphFusion graph_fusion = GraphFusion::Auto;
  AdjacencyNorm adjacency_norm = AdjacencyNorm::RowSoftmax;
  ClusterSource cluster_source = ClusterSource::Student;
  ClusterLossNorm cluster_loss_norm = ClusterLossNorm::Mean;
  bool teacher_alignment_grad = false;
  RegionNorm region_norm = RegionNorm::Region;
  int checkpoint_interval = 0;  // 0: only the final iteration
  KdeQuantity kde_quantity = KdeQuantity::Probability;

  // Graph similarity/GCN/cluster branch is built when any graph loss is active
  // or when fusion is forced on.
  bool graph_enabled() const;
  int clusters_for(int num_classes) const { return num_clusters > 0 ? num_clusters : num_classes; }

  void validate() const;
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  // Canonical `key = value` text, one key per line in valid_keys() order.
  std::string to_text() const;
  std::string digest() const;

  bool operator==(const RunConfig&) const = default;
};

const std::vector<std::string>& valid_config_keys();

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides);

// Splits "key=value".
std::pair<std::string, std::string> split_override(const std::string& text);

}  // namespace pasr
