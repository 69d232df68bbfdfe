// Copyright 2026 The darslab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dars/tensor_store.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "dars/errors.hpp"
#include "json.hpp"

namespace dars {
namespace {

constexpr char kMagic[8] = {'D', 'A', 'R', 'S', 'T', 'E', 'N', '1'};
constexpr std::size_t kFixedHeader = 8 + 4 + 4;

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::byte((v >> (8 * i)) & 0xFF));
}
void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::byte((v >> (8 * i)) & 0xFF));
}
std::uint32_t get_u32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

// Product of dims, throwing DimsError on u64 overflow or if the byte size
// would not fit in memory-addressable range.
std::uint64_t checked_count(std::span<const std::uint64_t> dims,
                            std::size_t elem_size) {
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      throw DimsError("tensor dims overflow");
    }
    n *= d;
  }
  if (n > std::numeric_limits<std::uint64_t>::max() / elem_size ||
      n * elem_size > std::numeric_limits<std::size_t>::max() / 2) {
    throw DimsError("tensor payload size overflow");
  }
  return n;
}

struct ParsedHeader {
  DType dtype;
  std::vector<std::uint64_t> dims;
  std::size_t header_bytes;
  std::uint64_t payload_bytes;
};

ParsedHeader parse_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kFixedHeader) {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kMagic, 8) != 0) {
      throw FormatError("bad tensor magic");
    }
    throw TruncationError("tensor header truncated");
  }
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("bad tensor magic");
  }
  const std::uint32_t code = get_u32(bytes.data() + 8);
  if (code > 2) throw FormatError("unknown dtype code " + std::to_string(code));
  const std::uint32_t rank = get_u32(bytes.data() + 12);
  if (rank != 2 && rank != 3) {
    throw FormatError("unsupported tensor rank " + std::to_string(rank));
  }
  const std::size_t header = kFixedHeader + 8 * std::size_t(rank);
  if (bytes.size() < header) throw TruncationError("tensor dims truncated");
  ParsedHeader h{static_cast<DType>(code), {}, header, 0};
  for (std::uint32_t i = 0; i < rank; ++i) {
    h.dims.push_back(get_u64(bytes.data() + kFixedHeader + 8 * i));
  }
  h.payload_bytes = checked_count(h.dims, dtype_size(h.dtype)) *
                    dtype_size(h.dtype);
  return h;
}

std::atomic<std::uint64_t> g_temp_counter{0};

fs::path temp_sibling(const fs::path& path) {
  std::ostringstream name;
  name << '.' << path.filename().string() << ".tmp." << ::getpid() << '.'
       << g_temp_counter.fetch_add(1);
  return path.parent_path() / name.str();
}

void check_planar(const char* what, std::size_t c, std::size_t h,
                  std::size_t w, std::size_t n) {
  if (c == 0 || h == 0 || w == 0) {
    throw ValidationError(std::string(what) + ": zero-sized dimension");
  }
  if (n != c * h * w) {
    throw ValidationError(std::string(what) + ": value count " +
                          std::to_string(n) + " does not match dims");
  }
}

template <typename Volume>
Volume planar_from_tensor(const TensorFile& t, const char* what) {
  if (t.dtype() != DType::kF32 || t.rank() != 3) {
    throw FormatError(std::string(what) + " must be a rank-3 f32 tensor");
  }
  return Volume(t.dims[0], t.dims[1], t.dims[2],
                std::get<std::vector<float>>(t.values));
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kU8: return 1;
    case DType::kU16: return 2;
    case DType::kF32: return 4;
  }
  throw FormatError("unknown dtype");
}

std::size_t TensorFile::value_count() const {
  return std::visit([](const auto& v) { return v.size(); }, values);
}

void TensorFile::validate() const {
  if (rank() != 2 && rank() != 3) {
    throw ValidationError("tensor rank must be 2 or 3");
  }
  if (checked_count(dims, dtype_size(dtype())) != value_count()) {
    throw ValidationError("tensor payload length does not match dims");
  }
}

bool TensorFile::operator==(const TensorFile& other) const {
  if (dims != other.dims || values.index() != other.values.index()) {
    return false;
  }
  return std::visit(
      [&](const auto& a) {
        const auto& b = std::get<std::decay_t<decltype(a)>>(other.values);
        return a.size() == b.size() &&
               (a.empty() ||
                std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0);
      },
      values);
}

std::vector<std::byte> encode_tensor(const TensorFile& tensor) {
  tensor.validate();
  std::vector<std::byte> out;
  out.reserve(kFixedHeader + 8 * tensor.rank() +
              tensor.value_count() * dtype_size(tensor.dtype()));
  for (char c : kMagic) out.push_back(std::byte(c));
  put_u32(out, static_cast<std::uint32_t>(tensor.dtype()));
  put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.dims) put_u64(out, d);
  std::visit(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        for (T x : v) {
          if constexpr (std::is_same_v<T, std::uint8_t>) {
            out.push_back(std::byte(x));
          } else if constexpr (std::is_same_v<T, std::uint16_t>) {
            out.push_back(std::byte(x & 0xFF));
            out.push_back(std::byte(x >> 8));
          } else {
            put_u32(out, std::bit_cast<std::uint32_t>(x));
          }
        }
      },
      tensor.values);
  return out;
}

TensorFile decode_tensor(std::span<const std::byte> bytes) {
  const ParsedHeader h = parse_header(bytes);
  const std::size_t available = bytes.size() - h.header_bytes;
  if (available < h.payload_bytes) {
    throw TruncationError("tensor payload truncated: expected " +
                          std::to_string(h.payload_bytes) + " bytes, found " +
                          std::to_string(available));
  }
  if (available > h.payload_bytes) {
    throw FormatError("trailing bytes after tensor payload");
  }
  const std::byte* p = bytes.data() + h.header_bytes;
  const std::size_t n = h.payload_bytes / dtype_size(h.dtype);
  TensorFile t;
  t.dims = h.dims;
  switch (h.dtype) {
    case DType::kU8: {
      std::vector<std::uint8_t> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = std::uint8_t(p[i]);
      t.values = std::move(v);
      break;
    }
    case DType::kU16: {
      std::vector<std::uint16_t> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = std::uint16_t(std::uint16_t(p[2 * i]) |
                             (std::uint16_t(p[2 * i + 1]) << 8));
      }
      t.values = std::move(v);
      break;
    }
    case DType::kF32: {
      std::vector<float> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      }
      t.values = std::move(v);
      break;
    }
  }
  return t;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

TensorFile read_tensor(const fs::path& path) {
  const std::string raw = read_file(path);
  return decode_tensor(std::as_bytes(std::span(raw.data(), raw.size())));
}

TensorHeader read_tensor_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::byte> buf(kFixedHeader + 8 * 3);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  buf.resize(static_cast<std::size_t>(in.gcount()));
  const ParsedHeader h = parse_header(buf);
  const auto file_size = fs::file_size(path);
  if (file_size < h.header_bytes + h.payload_bytes) {
    throw TruncationError("tensor payload truncated: " + path.string());
  }
  if (file_size > h.header_bytes + h.payload_bytes) {
    throw FormatError("trailing bytes after tensor payload: " + path.string());
  }
  return {h.dtype, h.dims};
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed: " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

void write_tensor(const TensorFile& tensor, const fs::path& path) {
  const auto bytes = encode_tensor(tensor);
  write_file_atomic(path,
                    std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                     bytes.size()));
}

// --- LabelMap ---------------------------------------------------------------

LabelMap::LabelMap(std::size_t height, std::size_t width, int num_classes,
                   std::vector<std::uint8_t> values)
    : height_(height),
      width_(width),
      num_classes_(num_classes),
      values_(std::move(values)) {
  if (num_classes < 1 || num_classes > 255) {
    throw ValidationError("label map class count must be in [1, 255]");
  }
  if (height == 0 || width == 0 || values_.size() != height * width) {
    throw ValidationError("label map size does not match H x W");
  }
  for (auto v : values_) {
    if (v != kIgnore && v >= num_classes) {
      throw ValidationError("label value " + std::to_string(v) +
                            " out of range for C=" +
                            std::to_string(num_classes));
    }
  }
}

LabelMap LabelMap::filled(std::size_t height, std::size_t width,
                          int num_classes, std::uint8_t value) {
  return LabelMap(height, width, num_classes,
                  std::vector<std::uint8_t>(height * width, value));
}

TensorFile LabelMap::to_tensor() const {
  return TensorFile{{height_, width_}, values_};
}

LabelMap LabelMap::from_tensor(const TensorFile& tensor, int num_classes) {
  if (tensor.dtype() != DType::kU8 || tensor.rank() != 2) {
    throw FormatError("label map must be a rank-2 u8 tensor");
  }
  return LabelMap(tensor.dims[0], tensor.dims[1], num_classes,
                  std::get<std::vector<std::uint8_t>>(tensor.values));
}

// --- planar volumes ---------------------------------------------------------

PlanarVolume::PlanarVolume(std::size_t channels, std::size_t height,
                           std::size_t width, std::vector<float> data)
    : channels_(channels), height_(height), width_(width),
      data_(std::move(data)) {}

TensorFile PlanarVolume::to_tensor() const {
  return TensorFile{{channels_, height_, width_}, data_};
}

ProbabilityVolume::ProbabilityVolume(std::size_t classes, std::size_t height,
                                     std::size_t width, std::vector<float> data)
    : PlanarVolume(classes, height, width, std::move(data)) {
  check_planar("probability volume", classes, height, width, data_.size());
  if (classes > 255) {
    throw ValidationError("probability volume has more than 255 classes");
  }
  const std::size_t n = pixel_count();
  std::vector<double> sums(n, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    const float* p = data_.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(p[i] >= 0.0f && p[i] <= 1.0f)) {
        throw ValidationError("probability outside [0,1]");
      }
      sums[i] += p[i];
    }
  }
  for (double s : sums) {
    if (std::abs(s - 1.0) > kSumTolerance) {
      throw ValidationError("probability channels do not sum to 1");
    }
  }
}

ProbabilityVolume ProbabilityVolume::from_tensor(const TensorFile& tensor) {
  return planar_from_tensor<ProbabilityVolume>(tensor, "probability volume");
}

LogitVolume::LogitVolume(std::size_t classes, std::size_t height,
                         std::size_t width, std::vector<float> data)
    : PlanarVolume(classes, height, width, std::move(data)) {
  check_planar("logit volume", classes, height, width, data_.size());
  for (float v : data_) {
    if (!std::isfinite(v)) throw ValidationError("non-finite logit");
  }
}

LogitVolume LogitVolume::from_tensor(const TensorFile& tensor) {
  return planar_from_tensor<LogitVolume>(tensor, "logit volume");
}

FeatureVolume::FeatureVolume(std::size_t channels, std::size_t height,
                             std::size_t width, std::vector<float> data)
    : PlanarVolume(channels, height, width, std::move(data)) {
  check_planar("feature volume", channels, height, width, data_.size());
  for (float v : data_) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ValidationError("feature value outside [0,1]");
    }
  }
}

FeatureVolume FeatureVolume::from_tensor(const TensorFile& tensor) {
  return planar_from_tensor<FeatureVolume>(tensor, "feature volume");
}

PixelPrediction argmax_pixel(const PlanarVolume& volume, std::size_t pixel) {
  const std::size_t n = volume.pixel_count();
  const auto data = volume.data();
  std::size_t best = 0;
  float best_value = data[pixel];
  for (std::size_t c = 1; c < volume.channels(); ++c) {
    const float v = data[c * n + pixel];
    if (v > best_value) {
      best = c;
      best_value = v;
    }
  }
  return {static_cast<std::uint8_t>(best), best_value};
}

void argmax_all(const PlanarVolume& volume, std::span<std::uint8_t> labels,
                std::span<float> confidence) {
  const std::size_t n = volume.pixel_count();
  if (labels.size() != n || confidence.size() != n) {
    throw ShapeError("argmax output size does not match the volume");
  }
  const auto first = volume.plane(0);
  std::fill(labels.begin(), labels.end(), std::uint8_t{0});
  std::copy(first.begin(), first.end(), confidence.begin());
  for (std::size_t c = 1; c < volume.channels(); ++c) {
    const auto plane = volume.plane(c);
    for (std::size_t i = 0; i < n; ++i) {
      if (plane[i] > confidence[i]) {
        confidence[i] = plane[i];
        labels[i] = static_cast<std::uint8_t>(c);
      }
    }
  }
}

LabelMap argmax_map(const PlanarVolume& volume) {
  std::vector<std::uint8_t> out(volume.pixel_count());
  std::vector<float> conf(volume.pixel_count());
  argmax_all(volume, out, conf);
  return LabelMap(volume.height(), volume.width(),
                  static_cast<int>(volume.channels()), std::move(out));
}

LabelMap load_label_map(const fs::path& path, int num_classes) {
  return LabelMap::from_tensor(read_tensor(path), num_classes);
}
ProbabilityVolume load_probabilities(const fs::path& path) {
  return ProbabilityVolume::from_tensor(read_tensor(path));
}
LogitVolume load_logits(const fs::path& path) {
  return LogitVolume::from_tensor(read_tensor(path));
}
FeatureVolume load_features(const fs::path& path) {
  return FeatureVolume::from_tensor(read_tensor(path));
}

// --- manifests --------------------------------------------------------------

namespace {

TensorHeader manifest_header(const fs::path& path, const std::string& id) {
  if (!fs::exists(path)) {
    throw ManifestError("entry '" + id + "' references missing file " +
                        path.string());
  }
  try {
    return read_tensor_header(path);
  } catch (const Error& e) {
    throw ManifestError("entry '" + id + "': " + e.what());
  }
}

}  // namespace

void validate_manifest(const DatasetManifest& m) {
  if (m.num_classes < 1 || m.num_classes > 255) {
    throw ManifestError("num_classes must be in [1, 255]");
  }
  if (m.ignore_value != kIgnore) {
    throw ManifestError("ignore_value must be 255");
  }
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (e.image_id.empty()) throw ManifestError("empty image_id");
    if (!ids.insert(e.image_id).second) {
      throw ManifestError("duplicate image_id '" + e.image_id + "'");
    }
    std::optional<std::pair<std::uint64_t, std::uint64_t>> hw;
    auto check_hw = [&](std::uint64_t h, std::uint64_t w) {
      if (hw && (hw->first != h || hw->second != w)) {
        throw ManifestError("entry '" + e.image_id +
                            "' has inconsistent spatial shapes");
      }
      hw = std::pair(h, w);
    };
    if (e.label_path) {
      const auto h = manifest_header(*e.label_path, e.image_id);
      if (h.dtype != DType::kU8 || h.dims.size() != 2) {
        throw ManifestError("entry '" + e.image_id +
                            "' label is not a rank-2 u8 tensor");
      }
      check_hw(h.dims[0], h.dims[1]);
    }
    for (const auto* p : {&e.prob_path, &e.logit_path}) {
      if (!*p) continue;
      const auto h = manifest_header(**p, e.image_id);
      if (h.dtype != DType::kF32 || h.dims.size() != 3) {
        throw ManifestError("entry '" + e.image_id +
                            "' volume is not a rank-3 f32 tensor");
      }
      if (h.dims[0] != static_cast<std::uint64_t>(m.num_classes)) {
        throw ManifestError("entry '" + e.image_id + "' has C=" +
                            std::to_string(h.dims[0]) + ", manifest C=" +
                            std::to_string(m.num_classes));
      }
      check_hw(h.dims[1], h.dims[2]);
    }
    if (e.image_path) {
      const auto h = manifest_header(*e.image_path, e.image_id);
      if (h.dtype != DType::kF32 || h.dims.size() != 3) {
        throw ManifestError("entry '" + e.image_id +
                            "' image is not a rank-3 f32 tensor");
      }
      check_hw(h.dims[1], h.dims[2]);
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ManifestError("manifest " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw ManifestError(e.what());
  }
  const fs::path base = path.parent_path();
  DatasetManifest m;
  try {
    m.num_classes = doc.at("num_classes").get<int>();
    m.ignore_value = doc.value("ignore_value", int{kIgnore});
    for (const auto& item : doc.at("entries")) {
      ManifestEntry e;
      e.image_id = item.at("image_id").get<std::string>();
      auto opt_path = [&](const char* key) -> std::optional<fs::path> {
        if (!item.contains(key) || item[key].is_null()) return std::nullopt;
        fs::path p = item[key].get<std::string>();
        return p.is_absolute() ? p : base / p;
      };
      e.label_path = opt_path("label_path");
      e.prob_path = opt_path("prob_path");
      e.logit_path = opt_path("logit_path");
      e.image_path = opt_path("image_path");
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ManifestError("manifest " + path.string() + ": " + e.what());
  }
  validate_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  using nlohmann::json;
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) {
    const fs::path abs = fs::absolute(p).lexically_normal();
    const fs::path r = abs.lexically_relative(base);
    if (!r.empty() && *r.begin() != "..") return r.generic_string();
    return abs.generic_string();
  };
  json entries = json::array();
  for (const auto& e : m.entries) {
    json item = {{"image_id", e.image_id}};
    if (e.label_path) item["label_path"] = rel(*e.label_path);
    if (e.prob_path) item["prob_path"] = rel(*e.prob_path);
    if (e.logit_path) item["logit_path"] = rel(*e.logit_path);
    if (e.image_path) item["image_path"] = rel(*e.image_path);
    entries.push_back(std::move(item));
  }
  const json doc = {{"num_classes", m.num_classes},
                    {"ignore_value", m.ignore_value},
                    {"entries", std::move(entries)}};
  write_file_atomic(path, doc.dump(2) + "\n");
}

}  // namespace dars
