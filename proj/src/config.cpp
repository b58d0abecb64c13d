#include "pasr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace pasr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename E>
struct EnumNames {
  std::vector<std::pair<E, std::string>> names;

  E parse(const std::string& key, const std::string& v) const {
    for (const auto& [e, n] : names) {
      if (n == v) return e;
    }
    std::string allowed;
    for (const auto& [e, n] : names) allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError("config key '" + key + "': '" + v + "' is not one of {" + allowed + "}");
  }
  std::string label(E e) const {
    for (const auto& [x, n] : names) {
      if (x == e) return n;
    }
    return "?";
  }
};

const EnumNames<OptimizerKind> kOptimizer{{{OptimizerKind::Sgd, "sgd"}, {OptimizerKind::Adam, "adam"}}};
const EnumNames<GraphFusion> kFusion{{{GraphFusion::Auto, "auto"}, {GraphFusion::On, "on"}, {GraphFusion::Off, "off"}}};
const EnumNames<AdjacencyNorm> kAdjNorm{{{AdjacencyNorm::None, "none"}, {AdjacencyNorm::Mean, "mean"}, {AdjacencyNorm::RowSoftmax, "row_softmax"}}};
const EnumNames<ClusterLossNorm> kClusterNorm{{{ClusterLossNorm::Sum, "sum"}, {ClusterLossNorm::Mean, "mean"}}};
const EnumNames<ClusterSource> kClusterSrc{{{ClusterSource::Student, "student"}, {ClusterSource::Teacher, "teacher"}}};
const EnumNames<RegionNorm> kRegionNorm{{{RegionNorm::Region, "region"}, {RegionNorm::Total, "total"}}};
const EnumNames<KdeQuantity> kKde{{{KdeQuantity::Probability, "probability"}, {KdeQuantity::Feature, "feature"}}};

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PASR_REAL(name) \
  {#name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.name = to_double(k, v); }, \
           [](const RunConfig& c) { return fmt_double(c.name); }}}
#define PASR_INT(name) \
  {#name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.name = static_cast<int>(to_int(k, v)); }, \
           [](const RunConfig& c) { return std::to_string(c.name); }}}
#define PASR_ENUM(name, table) \
  {#name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.name = table.parse(k, v); }, \
           [](const RunConfig& c) { return table.label(c.name); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      PASR_REAL(alpha),
      PASR_REAL(beta),
      PASR_REAL(gamma),
      PASR_REAL(mu),
      PASR_REAL(lambda_ema),
      PASR_REAL(lr),
      PASR_INT(tap_layer),
      PASR_INT(grid_size),
      PASR_INT(num_clusters),
      PASR_INT(batch_size),
      PASR_INT(pretrain_iters),
      PASR_INT(selftrain_iters),
      PASR_REAL(mask_ratio),
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          auto x = to_int(k, v);
          if (x < 0) throw ConfigError("config key 'seed' must be non-negative");
          c.seed = static_cast<std::uint64_t>(x);
        },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      PASR_ENUM(optimizer, kOptimizer),
      {"output_dir",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
        [](const RunConfig& c) { return c.output_dir; }}},
      PASR_REAL(momentum),
      PASR_INT(encoder_depth),
      PASR_INT(base_channels),
      PASR_INT(cluster_hidden),
      PASR_ENUM(graph_fusion, kFusion),
      PASR_ENUM(adjacency_norm, kAdjNorm),
      PASR_ENUM(cluster_source, kClusterSrc),
      PASR_ENUM(cluster_loss_norm, kClusterNorm),
      {"teacher_alignment_grad",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.teacher_alignment_grad = to_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.teacher_alignment_grad ? "true" : "false"); }}},
      PASR_ENUM(region_norm, kRegionNorm),
      PASR_INT(checkpoint_interval),
      PASR_ENUM(kde_quantity, kKde),
  };
  return table;
}

#undef PASR_REAL
#undef PASR_INT
#undef PASR_ENUM

const Field& find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return f;
  }
  std::string valid;
  for (const auto& k : valid_config_keys()) valid += (valid.empty() ? "" : ", ") + k;
  throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid);
}

}  // namespace

const std::vector<std::string>& valid_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

bool RunConfig::graph_enabled() const {
  switch (graph_fusion) {
    case GraphFusion::On: return true;
    case GraphFusion::Off: return false;
    case GraphFusion::Auto: break;
  }
  return alpha > 0.0 || beta > 0.0;
}

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config constraint violated: " + what);
  };
  need(alpha >= 0.0, "alpha >= 0");
  need(beta >= 0.0, "beta >= 0");
  need(gamma >= 0.0 && gamma <= 1.0, "0 <= gamma <= 1");
  need(mu > 0.0, "mu > 0");
  need(lambda_ema >= 0.0 && lambda_ema <= 1.0, "0 <= lambda_ema <= 1");
  need(lr > 0.0, "lr > 0");
  need(encoder_depth >= 1, "encoder_depth >= 1");
  need(tap_layer >= 1 && tap_layer <= encoder_depth, "1 <= tap_layer <= encoder_depth");
  need(mask_ratio > 0.0 && mask_ratio < 1.0, "0 < mask_ratio < 1");
  need(grid_size >= 1, "grid_size >= 1");
  need(num_clusters >= 0, "num_clusters >= 0");
  need(batch_size >= 1, "batch_size >= 1");
  need(pretrain_iters >= 0, "pretrain_iters >= 0");
  need(selftrain_iters >= 0, "selftrain_iters >= 0");
  need(momentum >= 0.0 && momentum < 1.0, "0 <= momentum < 1");
  need(base_channels >= 1, "base_channels >= 1");
  need(cluster_hidden >= 1, "cluster_hidden >= 1");
  need(checkpoint_interval >= 0, "checkpoint_interval >= 0");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, f] : fields()) os << k << " = " << f.get(*this) << "\n";
  return os.str();
}

std::string RunConfig::digest() const {
  // FNV-1a over the canonical text.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::pair<std::string, std::string> split_override(const std::string& text) {
  auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + text + "' is not of the form key=value");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(file->string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      try {
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(file->string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

}  // namespace pasr
