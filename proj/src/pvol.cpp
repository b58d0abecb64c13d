#include "pasr/pvol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

namespace pasr {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'O', 'L'};
constexpr std::uint16_t kVersion = 1;

template <typename U>
void put_le(std::vector<char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

struct Header {
  PvolType type = PvolType::Real32;
  Extent extent;
  Spacing spacing;
};

// magic(4) | version u16 | dtype u8 | rank u8 | dims 3 x u32 | spacing 3 x f32
std::vector<char> encode_header(PvolType type, const Extent& extent, const Spacing& spacing) {
  std::vector<char> out(kMagic, kMagic + 4);
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(type));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(extent.rank));
  for (auto d : extent.disk_dims()) put_le<std::uint32_t>(out, d);
  const bool r3 = extent.rank == 3;
  const float sp[3] = {r3 ? spacing.d : spacing.h, r3 ? spacing.h : spacing.w, r3 ? spacing.w : 1.0f};
  for (float s : sp) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(s));
  return out;
}

std::size_t element_bytes(PvolType t) {
  switch (t) {
    case PvolType::Real32: return 4;
    case PvolType::Label8: return 1;
    case PvolType::Real64: return 8;
  }
  return 0;
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Header decode_header(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  if (bytes.size() < kPvolHeaderBytes) throw FormatError(path.string() + ": truncated header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError(path.string() + ": bad magic");
  const unsigned char* p = bytes.data() + 4;
  auto version = get_le<std::uint16_t>(p);
  if (version != kVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  auto dtype = p[2];
  if (dtype > 2) throw FormatError(path.string() + ": unknown dtype " + std::to_string(dtype));
  int rank = p[3];
  if (rank != 2 && rank != 3) throw FormatError(path.string() + ": unsupported rank " + std::to_string(rank));
  p += 4;
  std::array<std::uint32_t, 3> dims{};
  for (auto& d : dims) {
    d = get_le<std::uint32_t>(p);
    p += 4;
    if (d == 0) throw FormatError(path.string() + ": zero extent");
  }
  if (rank == 2 && dims[2] != 1) throw FormatError(path.string() + ": rank-2 file with trailing dim != 1");
  float sp[3];
  for (auto& s : sp) {
    s = std::bit_cast<float>(get_le<std::uint32_t>(p));
    p += 4;
  }
  Header h;
  h.type = static_cast<PvolType>(dtype);
  h.extent = Extent::from_disk(rank, dims);
  h.spacing = rank == 3 ? Spacing{sp[0], sp[1], sp[2]} : Spacing{1.0f, sp[0], sp[1]};

  const std::size_t expected = kPvolHeaderBytes + h.extent.count() * element_bytes(h.type);
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": payload holds " + std::to_string(bytes.size() - kPvolHeaderBytes) +
                      " bytes, dims require " + std::to_string(expected - kPvolHeaderBytes));
  }
  return h;
}

std::vector<float> decode_f32(const std::vector<unsigned char>& bytes, std::size_t n) {
  std::vector<float> out(n);
  const unsigned char* p = bytes.data() + kPvolHeaderBytes;
  for (std::size_t i = 0; i < n; ++i, p += 4) out[i] = std::bit_cast<float>(get_le<std::uint32_t>(p));
  return out;
}

}  // namespace

void save_volume(const Volume& v, const std::filesystem::path& path) {
  auto bytes = encode_header(PvolType::Real32, v.extent(), v.spacing());
  bytes.reserve(bytes.size() + 4 * v.data().size());
  for (float x : v.data()) put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(x));
  write_file(path, bytes);
}

void save_volume(const LabelMap& v, const std::filesystem::path& path) {
  auto bytes = encode_header(PvolType::Label8, v.extent(), v.spacing());
  bytes.insert(bytes.end(), v.data().begin(), v.data().end());
  write_file(path, bytes);
}

std::variant<Volume, LabelMap> load_volume(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  auto h = decode_header(bytes, path);
  const std::size_t n = h.extent.count();
  switch (h.type) {
    case PvolType::Real32:
      return Volume(h.extent, decode_f32(bytes, n), h.spacing);
    case PvolType::Label8: {
      std::vector<std::uint8_t> data(bytes.begin() + kPvolHeaderBytes, bytes.end());
      int max_v = 0;
      for (auto v : data) max_v = std::max<int>(max_v, v);
      return LabelMap(h.extent, std::move(data), std::max(2, max_v + 1), h.spacing);
    }
    case PvolType::Real64:
      break;
  }
  throw FormatError(path.string() + ": f64 tensor file is not a raster volume");
}

Volume load_image(const std::filesystem::path& path) {
  auto any = load_volume(path);
  if (auto* v = std::get_if<Volume>(&any)) return std::move(*v);
  throw FormatError(path.string() + ": expected an intensity volume, found a label map");
}

LabelMap load_labels(const std::filesystem::path& path, int num_classes) {
  auto any = load_volume(path);
  auto* l = std::get_if<LabelMap>(&any);
  if (l == nullptr) throw FormatError(path.string() + ": expected a label map, found an intensity volume");
  std::vector<std::uint8_t> data = l->data();
  return LabelMap(l->extent(), std::move(data), num_classes, l->spacing());
}

void save_tensor(std::span<const double> values, const Extent& extent, const std::filesystem::path& path) {
  if (values.size() != extent.count()) throw ValidationError("tensor size does not match extent " + extent.str());
  auto bytes = encode_header(PvolType::Real64, extent, Spacing{});
  bytes.reserve(bytes.size() + 8 * values.size());
  for (double x : values) put_le<std::uint64_t>(bytes, std::bit_cast<std::uint64_t>(x));
  write_file(path, bytes);
}

RealTensorFile load_tensor(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  auto h = decode_header(bytes, path);
  if (h.type != PvolType::Real64) throw FormatError(path.string() + ": expected an f64 tensor");
  RealTensorFile out{h.extent, std::vector<double>(h.extent.count())};
  const unsigned char* p = bytes.data() + kPvolHeaderBytes;
  for (auto& v : out.values) {
    v = std::bit_cast<double>(get_le<std::uint64_t>(p));
    p += 8;
  }
  return out;
}

}  // namespace pasr
