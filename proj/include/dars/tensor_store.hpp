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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dars {

namespace fs = std::filesystem;

/// Label value excluded from every count, loss and metric.
inline constexpr std::uint8_t kIgnore = 255;

// ---------------------------------------------------------------------------
// Raw tensor files
//
// Layout (all integers little-endian):
//   "DARSTEN1" | dtype u32 | rank u32 | dims u64 x rank | row-major payload
// ---------------------------------------------------------------------------

enum class DType : std::uint32_t { kU8 = 0, kU16 = 1, kF32 = 2 };

std::size_t dtype_size(DType dtype);

struct TensorFile {
  using Values = std::variant<std::vector<std::uint8_t>,
                              std::vector<std::uint16_t>, std::vector<float>>;

  std::vector<std::uint64_t> dims;
  Values values;

  DType dtype() const { return static_cast<DType>(values.index()); }
  std::size_t rank() const { return dims.size(); }
  std::size_t value_count() const;

  /// Throws DimsError / ValidationError if rank or payload length is off.
  void validate() const;

  /// Bit-exact comparison (f32 payloads are compared by representation).
  bool operator==(const TensorFile& other) const;
};

struct TensorHeader {
  DType dtype;
  std::vector<std::uint64_t> dims;
};

std::vector<std::byte> encode_tensor(const TensorFile& tensor);
TensorFile decode_tensor(std::span<const std::byte> bytes);

TensorFile read_tensor(const fs::path& path);
/// Parses the header and checks the file length against it without reading
/// the payload.
TensorHeader read_tensor_header(const fs::path& path);
/// Writes through a temporary sibling and renames into place.
void write_tensor(const TensorFile& tensor, const fs::path& path);

/// Atomic whole-file write (temp file + rename). Throws IoError.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

// ---------------------------------------------------------------------------
// Validated in-memory volumes
// ---------------------------------------------------------------------------

/// H x W class-index map; every value is < num_classes or kIgnore.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, int num_classes,
           std::vector<std::uint8_t> values);
  /// Map filled with a single value.
  static LabelMap filled(std::size_t height, std::size_t width,
                         int num_classes, std::uint8_t value);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixel_count() const { return values_.size(); }
  int num_classes() const { return num_classes_; }
  std::uint8_t at(std::size_t y, std::size_t x) const {
    return values_[y * width_ + x];
  }
  std::span<const std::uint8_t> values() const { return values_; }

  TensorFile to_tensor() const;
  static LabelMap from_tensor(const TensorFile& tensor, int num_classes);

  bool operator==(const LabelMap&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  int num_classes_ = 0;
  std::vector<std::uint8_t> values_;
};

/// Common C x H x W f32 storage; the derived types add invariants.
class PlanarVolume {
 public:
  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixel_count() const { return height_ * width_; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }
  /// Channel plane c, length H*W.
  std::span<const float> plane(std::size_t c) const {
    return std::span<const float>(data_).subspan(c * pixel_count(),
                                                 pixel_count());
  }
  std::span<const float> data() const { return data_; }

  TensorFile to_tensor() const;

 protected:
  PlanarVolume() = default;
  PlanarVolume(std::size_t channels, std::size_t height, std::size_t width,
               std::vector<float> data);

  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

/// Per-pixel softmax output. Values in [0,1]; channel sums within 1e-4 of 1.
class ProbabilityVolume : public PlanarVolume {
 public:
  static constexpr double kSumTolerance = 1e-4;

  ProbabilityVolume() = default;
  ProbabilityVolume(std::size_t classes, std::size_t height, std::size_t width,
                    std::vector<float> data);
  static ProbabilityVolume from_tensor(const TensorFile& tensor);

  std::size_t num_classes() const { return channels_; }

  bool operator==(const ProbabilityVolume& o) const {
    return to_tensor() == o.to_tensor();
  }
};

/// Unnormalized scores; all values finite.
class LogitVolume : public PlanarVolume {
 public:
  LogitVolume() = default;
  LogitVolume(std::size_t classes, std::size_t height, std::size_t width,
              std::vector<float> data);
  static LogitVolume from_tensor(const TensorFile& tensor);

  std::size_t num_classes() const { return channels_; }
};

/// Image features, values in [0,1].
class FeatureVolume : public PlanarVolume {
 public:
  FeatureVolume() = default;
  FeatureVolume(std::size_t channels, std::size_t height, std::size_t width,
                std::vector<float> data);
  static FeatureVolume from_tensor(const TensorFile& tensor);
};

/// Argmax over channels with ties toward the lower class index, plus the
/// winning probability (the pixel's confidence).
struct PixelPrediction {
  std::uint8_t label;
  float confidence;
};
PixelPrediction argmax_pixel(const PlanarVolume& volume, std::size_t pixel);

/// Plane-order argmax of every pixel: labels[i] and confidence[i] (both
/// sized H*W). Same tie rule as argmax_pixel.
void argmax_all(const PlanarVolume& volume, std::span<std::uint8_t> labels,
                std::span<float> confidence);

/// Argmax map of any planar score volume (no IGNORE pixels).
LabelMap argmax_map(const PlanarVolume& volume);

LabelMap load_label_map(const fs::path& path, int num_classes);
ProbabilityVolume load_probabilities(const fs::path& path);
LogitVolume load_logits(const fs::path& path);
FeatureVolume load_features(const fs::path& path);

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string image_id;
  std::optional<fs::path> label_path;
  std::optional<fs::path> prob_path;
  std::optional<fs::path> logit_path;
  std::optional<fs::path> image_path;
};

struct DatasetManifest {
  int num_classes = 0;
  int ignore_value = kIgnore;
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
};

/// Loads and eagerly validates a manifest. Relative paths resolve against
/// the manifest's directory. Throws ManifestError.
DatasetManifest load_manifest(const fs::path& path);
/// Validates an in-memory manifest (unique ids, files exist and parse,
/// consistent class count).
void validate_manifest(const DatasetManifest& manifest);
/// Writes a manifest; paths under the manifest's directory are stored
/// relative to it.
void save_manifest(const DatasetManifest& manifest, const fs::path& path);

}  // namespace dars
