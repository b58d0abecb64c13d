#include "pasr/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pasr/pvol.hpp"

namespace pasr {

void SynthSpec::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("synthetic spec: ") + what);
  };
  need(image_size >= 16, "image_size >= 16");
  need(num_classes >= 2 && num_classes <= 255, "2 <= num_classes <= 255");
  need(min_shapes >= 0 && max_shapes >= min_shapes, "0 <= min_shapes <= max_shapes");
  need(min_radius > 0.0 && max_radius >= min_radius && max_radius < 0.5, "0 < min_radius <= max_radius < 0.5");
  need(noise_sigma >= 0.0, "noise_sigma >= 0");
  need(labeled >= 0 && unlabeled >= 0 && val >= 0 && test >= 0, "role counts >= 0");
  need(class_means.empty() || static_cast<int>(class_means.size()) == num_classes,
       "class_means must list one mean per class");
}

double SynthSpec::class_mean(int c) const {
  if (!class_means.empty()) return class_means[static_cast<std::size_t>(c)];
  return 0.2 + 0.6 * c / (num_classes - 1);
}

bool Ellipse::contains(double y, double x) const {
  const double dy = y - cy;
  const double dx = x - cx;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over a combination of the two
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::pair<Volume, LabelMap> sample_image(const SynthSpec& spec, std::mt19937_64& rng, double shift, double sigma) {
  const auto n = static_cast<std::size_t>(spec.image_size);
  const double size = spec.image_size;
  if (sigma < 0.0) sigma = spec.noise_sigma;

  std::uniform_int_distribution<int> count_dist(spec.min_shapes, spec.max_shapes);
  std::uniform_real_distribution<double> radius(spec.min_radius * size, spec.max_radius * size);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);

  std::vector<std::uint8_t> labels(n * n, 0);
  const int shapes = count_dist(rng);
  for (int k = 0; k < shapes; ++k) {
    const double ry = radius(rng);
    const double rx = radius(rng);
    const double r = std::max(ry, rx);
    std::uniform_real_distribution<double> center(r, size - r);
    const double cy = center(rng);
    const double cx = center(rng);
    const double a = angle(rng);
    // Nested rings: class c occupies the ellipse scaled by (M - c) / (M - 1).
    for (int c = 1; c < spec.num_classes; ++c) {
      const double scale = static_cast<double>(spec.num_classes - c) / (spec.num_classes - 1);
      const Ellipse e{cy, cx, ry * scale, rx * scale, a};
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          if (e.contains(y + 0.5, x + 0.5)) labels[y * n + x] = static_cast<std::uint8_t>(c);
        }
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<float> image(n * n);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = spec.class_mean(labels[i]) + shift + (sigma > 0.0 ? sigma * noise(rng) : 0.0);
    image[i] = static_cast<float>(v);
  }
  const Extent e = Extent::plane(n, n);
  return {Volume(e, std::move(image)), LabelMap(e, std::move(labels), spec.num_classes)};
}

DatasetSplit generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  for (const char* sub : {"labeled", "unlabeled", "val", "test", "hidden"}) fs::create_directories(out_dir / sub);

  DatasetSplit split;
  split.num_classes = spec.num_classes;
  std::ostringstream manifest;
  manifest << "# synthetic ellipse dataset, seed " << spec.seed << "\n";
  manifest << "num_classes " << spec.num_classes << "\n";

  const double unl_sigma = spec.unlabeled_noise_sigma < 0.0 ? spec.noise_sigma : spec.unlabeled_noise_sigma;
  std::uint64_t index = 0;
  auto emit = [&](const std::string& role, const char* prefix, int count) {
    for (int i = 0; i < count; ++i, ++index) {
      std::mt19937_64 rng(sample_seed(spec.seed, index));
      const bool unlabeled = role == "unlabeled";
      auto [image, label] = unlabeled ? sample_image(spec, rng, spec.shift_delta, unl_sigma) : sample_image(spec, rng);
      std::ostringstream id;
      id << prefix << std::setw(4) << std::setfill('0') << i;
      const std::string image_rel = role + "/" + id.str() + "_image.pvol";
      save_volume(image, out_dir / image_rel);
      if (unlabeled) {
        save_volume(label, out_dir / "hidden" / (id.str() + "_label.pvol"));
        manifest << role << " " << id.str() << " " << image_rel << "\n";
        split.unlabeled.push_back({id.str(), std::move(image)});
        continue;
      }
      const std::string label_rel = role + "/" + id.str() + "_label.pvol";
      save_volume(label, out_dir / label_rel);
      manifest << role << " " << id.str() << " " << image_rel << " " << label_rel << "\n";
      LabeledSample s{id.str(), std::move(image), std::move(label)};
      if (role == "labeled") split.labeled.push_back(std::move(s));
      else if (role == "val") split.validation.push_back(std::move(s));
      else split.test.push_back(std::move(s));
    }
  };
  emit("labeled", "L", spec.labeled);
  emit("unlabeled", "U", spec.unlabeled);
  emit("val", "V", spec.val);
  emit("test", "T", spec.test);

  std::ofstream mf(out_dir / "manifest.txt", std::ios::trunc);
  if (!mf) throw IoError("cannot write manifest in " + out_dir.string());
  mf << manifest.str();
  if (!mf) throw IoError("manifest write failed in " + out_dir.string());
  split.validate();
  return split;
}

}  // namespace pasr
