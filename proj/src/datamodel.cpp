#include "pasr/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pasr/pvol.hpp"

namespace pasr {

namespace {

void check_extent(const Extent& e) {
  if (e.rank != 2 && e.rank != 3) throw ValidationError("raster rank must be 2 or 3, got " + std::to_string(e.rank));
  if (e.d < 1 || e.h < 1 || e.w < 1) throw ValidationError("raster extents must be >= 1, got " + e.str());
  if (e.rank == 2 && e.d != 1) throw ValidationError("rank-2 raster must have depth 1");
}

void check_spacing(const Spacing& s) {
  for (float v : {s.d, s.h, s.w}) {
    if (!std::isfinite(v) || v <= 0.0f) throw ValidationError("voxel spacing must be finite and positive");
  }
}

}  // namespace

std::array<std::uint32_t, 3> Extent::disk_dims() const {
  if (rank == 3) return {static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)};
  return {static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), 1u};
}

Extent Extent::from_disk(int rank, const std::array<std::uint32_t, 3>& dims) {
  if (rank == 3) return Extent::volume(dims[0], dims[1], dims[2]);
  if (rank == 2) return Extent::plane(dims[0], dims[1]);
  throw FormatError("unsupported rank " + std::to_string(rank));
}

std::string Extent::str() const {
  std::ostringstream os;
  if (rank == 3) os << d << "x";
  os << h << "x" << w;
  return os.str();
}

Volume::Volume(Extent extent, std::vector<float> data, Spacing spacing)
    : extent_(extent), spacing_(spacing), data_(std::move(data)) {
  check_extent(extent_);
  check_spacing(spacing_);
  if (data_.size() != extent_.count()) {
    throw ValidationError("volume has " + std::to_string(data_.size()) + " elements, extent " + extent_.str() +
                          " requires " + std::to_string(extent_.count()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) throw ValidationError("non-finite intensity at element " + std::to_string(i));
  }
}

LabelMap::LabelMap(Extent extent, std::vector<std::uint8_t> data, int num_classes, Spacing spacing)
    : extent_(extent), spacing_(spacing), data_(std::move(data)), num_classes_(num_classes) {
  check_extent(extent_);
  check_spacing(spacing_);
  if (num_classes_ < 1 || num_classes_ > 256) throw ValidationError("num_classes must be in [1, 256]");
  if (data_.size() != extent_.count()) {
    throw ValidationError("label map has " + std::to_string(data_.size()) + " elements, extent " + extent_.str() +
                          " requires " + std::to_string(extent_.count()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (data_[i] >= num_classes_) {
      throw ValidationError("label value " + std::to_string(data_[i]) + " at element " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes_ - 1) + "]");
    }
  }
}

Mask::Mask(Extent extent, std::vector<std::uint8_t> data) : extent_(extent), data_(std::move(data)) {
  check_extent(extent_);
  if (data_.size() != extent_.count()) throw ValidationError("mask size does not match extent " + extent_.str());
  for (auto v : data_) {
    if (v > 1) throw ValidationError("mask values must be 0 or 1");
  }
}

Mask Mask::filled(Extent extent, std::uint8_t value) {
  return Mask(extent, std::vector<std::uint8_t>(extent.count(), value));
}

std::size_t Mask::count_ones() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

Mask Mask::inverted() const {
  std::vector<std::uint8_t> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(), [](std::uint8_t v) { return std::uint8_t(1 - v); });
  return Mask(extent_, std::move(out));
}

const Volume& DatasetSplit::any_image() const {
  if (!labeled.empty()) return labeled.front().image;
  if (!unlabeled.empty()) return unlabeled.front().image;
  if (!validation.empty()) return validation.front().image;
  if (!test.empty()) return test.front().image;
  throw ValidationError("dataset split is empty");
}

void DatasetSplit::validate() const {
  std::set<std::string> ids;
  const Volume* ref = nullptr;
  auto check_image = [&](const std::string& id, const Volume& v) {
    if (!ids.insert(id).second) throw ValidationError("sample id '" + id + "' appears more than once");
    if (ref == nullptr) {
      ref = &v;
      return;
    }
    if (!(v.extent() == ref->extent())) throw ValidationError("sample '" + id + "' has extent " + v.extent().str() +
                                                              ", expected " + ref->extent().str());
    if (!(v.spacing() == ref->spacing())) throw ValidationError("sample '" + id + "' has mismatched spacing");
  };
  auto check_labeled = [&](const LabeledSample& s) {
    check_image(s.id, s.image);
    if (!(s.label.extent() == s.image.extent())) throw ValidationError("label of '" + s.id + "' does not match image extent");
    if (s.label.num_classes() != num_classes) throw ValidationError("label of '" + s.id + "' has wrong num_classes");
  };
  for (const auto& s : labeled) check_labeled(s);
  for (const auto& s : unlabeled) check_image(s.id, s.image);
  for (const auto& s : validation) check_labeled(s);
  for (const auto& s : test) check_labeled(s);
}

DatasetSplit load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  DatasetSplit split;
  bool have_entries = false;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;

    if (tok[0] == "num_classes") {
      if (tok.size() != 2) fail("expected 'num_classes <M>'");
      try {
        split.num_classes = std::stoi(tok[1]);
      } catch (const std::exception&) {
        fail("invalid num_classes '" + tok[1] + "'");
      }
      if (split.num_classes < 2 || split.num_classes > 256) fail("num_classes must be in [2, 256]");
      if (have_entries) fail("num_classes must precede sample entries");
      continue;
    }

    const std::string& role = tok[0];
    have_entries = true;
    const bool needs_label = role == "labeled" || role == "val" || role == "test";
    if (!needs_label && role != "unlabeled") {
      fail("unknown role '" + role + "' (expected labeled, unlabeled, val or test)");
    }
    if (needs_label && tok.size() != 4) fail("role '" + role + "' expects '<role> <id> <image> <label>'");
    if (!needs_label && tok.size() != 3) fail("role 'unlabeled' expects '<role> <id> <image>'");

    try {
      auto image_path = resolve(tok[2]);
      if (!std::filesystem::exists(image_path)) fail("missing image file " + image_path.string());
      Volume image = load_image(image_path);
      if (needs_label) {
        auto label_path = resolve(tok[3]);
        if (!std::filesystem::exists(label_path)) fail("missing label file " + label_path.string());
        LabelMap label = load_labels(label_path, split.num_classes);
        if (!(label.extent() == image.extent())) fail("label extent does not match image extent");
        LabeledSample s{tok[1], std::move(image), std::move(label)};
        if (role == "labeled") split.labeled.push_back(std::move(s));
        else if (role == "val") split.validation.push_back(std::move(s));
        else split.test.push_back(std::move(s));
      } else {
        split.unlabeled.push_back({tok[1], std::move(image)});
      }
    } catch (const ValidationError& e) {
      std::string msg = e.what();
      if (msg.rfind(path.string() + ":", 0) == 0) throw;
      fail(msg);
    } catch (const FormatError& e) {
      fail(e.what());
    }
  }

  try {
    split.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return split;
}

}  // namespace pasr
