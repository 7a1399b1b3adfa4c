#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sasav/vec3.hpp"

namespace sasav {

enum class ScalarKind { kUnsigned8, kUnsigned16, kFloat32 };
enum class ValueKind { kContinuous, kLabel };
enum class ByteOrder { kLittle, kBig };

std::size_t bytes_per_scalar(ScalarKind kind);

/// Grid description of a regular-grid scalar field. Voxel (i, j, k) sits at
/// origin + (i, j, k) * spacing; storage is x-fastest, then y, then z.
struct VolumeMeta {
  std::array<std::int64_t, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  ScalarKind scalar_kind = ScalarKind::kFloat32;
  ValueKind value_kind = ValueKind::kContinuous;
  ByteOrder byte_order = ByteOrder::kLittle;

  std::size_t voxel_count() const;
  std::size_t byte_length() const;
  /// Throws Error(kInvalidMetadata) when dims < 1 or spacing <= 0.
  void validate() const;

  friend bool operator==(const VolumeMeta&, const VolumeMeta&) = default;
};

/// Sidecar document: keys dims, spacing, origin, scalar_kind, value_kind,
/// byte_order. Unknown keys are rejected; dims and scalar_kind are required.
VolumeMeta meta_from_json(const nlohmann::json& doc);
nlohmann::json meta_to_json(const VolumeMeta& meta);
VolumeMeta read_meta(const std::filesystem::path& sidecar);

class Volume {
 public:
  Volume() = default;
  /// Computes v_min / v_max from the values. values.size() must match meta.
  Volume(VolumeMeta meta, std::vector<float> values);

  const VolumeMeta& meta() const { return meta_; }
  std::span<const float> values() const { return values_; }
  float v_min() const { return v_min_; }
  float v_max() const { return v_max_; }

  std::int64_t nx() const { return meta_.dims[0]; }
  std::int64_t ny() const { return meta_.dims[1]; }
  std::int64_t nz() const { return meta_.dims[2]; }

  std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return static_cast<std::size_t>((k * ny() + j) * nx() + i);
  }
  float at(std::int64_t i, std::int64_t j, std::int64_t k) const { return values_[index(i, j, k)]; }

  /// World-space bounding box spanned by voxel centers.
  Vec3 world_min() const;
  Vec3 world_max() const;
  Vec3 centroid() const;
  /// Length of the world box diagonal; falls back to the smallest spacing for
  /// single-voxel volumes so cameras keep a positive standoff.
  double world_diagonal() const;
  double min_spacing() const;

 private:
  VolumeMeta meta_;
  std::vector<float> values_;
  float v_min_ = 0.0f;
  float v_max_ = 0.0f;
};

Volume decode_raw(std::span<const std::byte> bytes, const VolumeMeta& meta);
std::vector<std::byte> encode_raw(const Volume& volume);

/// Reads a headerless raw file. Errors: kIoFailure, kFileSizeMismatch,
/// kInvalidMetadata.
Volume load_raw(const std::filesystem::path& path, const VolumeMeta& meta);
void save_raw(const std::filesystem::path& path, const Volume& volume);

/// Box-mean pooling with per-axis stride ceil(dim / target). Label volumes use
/// a majority vote (ties resolved to the smaller label).
Volume downsample(const Volume& volume, std::int64_t target);

/// Affine map of [v_min, v_max] onto [0, 1]; constant volumes map to zero.
Volume normalize(const Volume& volume);

std::pair<double, double> value_range(const Volume& volume);

}  // namespace sasav
