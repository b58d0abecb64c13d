#include "pasr/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "pasr/pvol.hpp"

namespace fs = std::filesystem;

namespace pasr {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> read_meta(const fs::path& path) {
  std::map<std::string, std::string> meta;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    meta[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return meta;
}

const std::string& meta_get(const std::map<std::string, std::string>& meta, const std::string& key,
                            const fs::path& where) {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError(where.string() + ": missing key '" + key + "'");
  return it->second;
}

std::string arch_meta(const ArchConfig& a) {
  std::ostringstream os;
  os << "rank " << a.rank << "\n"
     << "encoder_depth " << a.encoder_depth << "\n"
     << "base_channels " << a.base_channels << "\n"
     << "num_classes " << a.num_classes << "\n"
     << "tap_layer " << a.tap_layer << "\n"
     << "graph_fusion " << (a.graph_fusion ? 1 : 0) << "\n"
     << "num_clusters " << a.num_clusters << "\n"
     << "cluster_hidden " << a.cluster_hidden << "\n";
  return os.str();
}

ArchConfig arch_from_meta(const std::map<std::string, std::string>& m, const fs::path& where) {
  auto geti = [&](const char* k) { return std::stoi(meta_get(m, k, where)); };
  ArchConfig a;
  a.rank = geti("rank");
  a.encoder_depth = geti("encoder_depth");
  a.base_channels = geti("base_channels");
  a.num_classes = geti("num_classes");
  a.tap_layer = geti("tap_layer");
  a.graph_fusion = geti("graph_fusion") != 0;
  a.num_clusters = geti("num_clusters");
  a.cluster_hidden = geti("cluster_hidden");
  a.validate();
  return a;
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

}  // namespace

void save_params(const NetParams& params, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& t : params.tensors) {
    save_tensor(t.values, Extent::plane(1, t.values.size()), dir / (t.name + ".pvol"));
  }
}

NetParams load_params(const NetParams& like, const fs::path& dir) {
  NetParams out = like;
  for (auto& t : out.tensors) {
    const fs::path path = dir / (t.name + ".pvol");
    RealTensorFile f = load_tensor(path);
    if (f.values.size() != t.values.size()) {
      throw FormatError(path.string() + ": expected " + std::to_string(t.values.size()) + " values, found " +
                        std::to_string(f.values.size()));
    }
    t.values = std::move(f.values);
  }
  return out;
}

std::string loss_csv_header() { return "iteration,l_pre,l_st,l_cl,total"; }

std::string loss_csv_row(const LossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(r.iteration),
                r.loss.l_pre, r.loss.l_st, r.loss.l_cl, r.loss.total);
  return buf;
}

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& history) {
  std::string text = loss_csv_header() + "\n";
  for (const auto& r : history) text += loss_csv_row(r) + "\n";
  write_text(path, text);
}

std::vector<LossRecord> read_loss_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != loss_csv_header()) throw FormatError(path.string() + ": unexpected loss log header");
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    unsigned long long it = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf", &it, &r.loss.l_pre, &r.loss.l_st, &r.loss.l_cl,
                    &r.loss.total) != 5) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    r.iteration = it;
    out.push_back(r);
  }
  return out;
}

void save_checkpoint(const TrainState& state, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream meta;
  meta << "kind selftrain\n"
       << "iteration " << state.iteration << "\n"
       << "optimizer " << optimizer_name(state.opt.kind) << "\n"
       << "optimizer_steps " << state.opt.steps << "\n"
       << "config_digest " << state.cfg.digest() << "\n"
       << arch_meta(state.arch);
  write_text(dir / "meta.txt", meta.str());
  write_text(dir / "config.txt", state.cfg.to_text());
  save_params(state.teacher, dir / "teacher");
  save_params(state.student, dir / "student");
  save_params(state.opt.first, dir / "optim" / "first");
  if (state.opt.kind == OptimizerKind::Adam) save_params(state.opt.second, dir / "optim" / "second");
  std::ostringstream rng;
  rng << state.rng;
  write_text(dir / "rng.txt", rng.str());
  write_loss_csv(dir / "losses.csv", state.history);
  std::string val;
  for (const auto& r : state.val_rows) val += r + "\n";
  write_text(dir / "val_rows.txt", val);
}

TrainState load_checkpoint(const fs::path& dir) {
  const auto meta = read_meta(dir / "meta.txt");
  if (meta_get(meta, "kind", dir) != "selftrain") {
    throw FormatError(dir.string() + ": not a self-training checkpoint");
  }
  TrainState s;
  s.cfg = parse_config(dir / "config.txt", {});
  s.arch = arch_from_meta(meta, dir / "meta.txt");
  s.iteration = std::stoull(meta_get(meta, "iteration", dir));
  const NetParams like = init_params(s.arch, 0);
  s.teacher = load_params(like, dir / "teacher");
  s.student = load_params(like, dir / "student");
  s.opt.kind = meta_get(meta, "optimizer", dir) == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
  s.opt.steps = std::stoull(meta_get(meta, "optimizer_steps", dir));
  s.opt.first = load_params(like, dir / "optim" / "first");
  if (s.opt.kind == OptimizerKind::Adam) s.opt.second = load_params(like, dir / "optim" / "second");
  std::istringstream rng(read_text(dir / "rng.txt"));
  rng >> s.rng;
  if (!rng) throw FormatError(dir.string() + ": corrupt rng state");
  s.history = read_loss_csv(dir / "losses.csv");
  std::istringstream val(read_text(dir / "val_rows.txt"));
  std::string line;
  while (std::getline(val, line)) {
    if (!line.empty()) s.val_rows.push_back(line);
  }
  return s;
}

void save_pretrained(const RunConfig& cfg, const ArchConfig& arch, const NetParams& teacher,
                     const std::vector<LossRecord>& history, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream meta;
  meta << "kind pretrain\n"
       << "iteration " << history.size() << "\n"
       << "config_digest " << cfg.digest() << "\n"
       << arch_meta(arch);
  write_text(dir / "meta.txt", meta.str());
  write_text(dir / "config.txt", cfg.to_text());
  save_params(teacher, dir / "teacher");
  write_loss_csv(dir / "losses.csv", history);
}

PretrainedModel load_pretrained(const fs::path& dir) { return load_model(dir, "teacher"); }

PretrainedModel load_model(const fs::path& dir, const std::string& which) {
  const auto meta = read_meta(dir / "meta.txt");
  const std::string kind = meta_get(meta, "kind", dir);
  PretrainedModel m;
  m.cfg = parse_config(dir / "config.txt", {});
  m.arch = arch_from_meta(meta, dir / "meta.txt");
  std::string sub = which;
  if (kind == "pretrain") sub = "teacher";
  if (sub != "teacher" && sub != "student") throw std::invalid_argument("load_model: network must be student or teacher");
  m.params = load_params(init_params(m.arch, 0), dir / sub);
  return m;
}

}  // namespace pasr
