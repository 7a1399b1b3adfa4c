#include "sasav/volume.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "sasav/error.hpp"
#include "sasav/parallel.hpp"

namespace sasav {

namespace {

template <typename T>
T byteswap_value(T value) {
  std::array<std::byte, sizeof(T)> raw;
  std::memcpy(raw.data(), &value, sizeof(T));
  std::reverse(raw.begin(), raw.end());
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

template <typename T>
T read_scalar(const std::byte* p, bool swap) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return swap ? byteswap_value(value) : value;
}

template <typename T>
void write_scalar(std::byte* p, T value, bool swap) {
  if (swap) value = byteswap_value(value);
  std::memcpy(p, &value, sizeof(T));
}

bool needs_swap(ByteOrder order) {
  return (order == ByteOrder::kBig) != (std::endian::native == std::endian::big);
}

ScalarKind parse_scalar_kind(const std::string& s) {
  if (s == "unsigned8" || s == "uint8") return ScalarKind::kUnsigned8;
  if (s == "unsigned16" || s == "uint16") return ScalarKind::kUnsigned16;
  if (s == "float32") return ScalarKind::kFloat32;
  throw Error(Errc::kUnsupportedScalarKind, "scalar_kind '" + s + "'");
}

std::string scalar_kind_name(ScalarKind kind) {
  switch (kind) {
    case ScalarKind::kUnsigned8: return "unsigned8";
    case ScalarKind::kUnsigned16: return "unsigned16";
    case ScalarKind::kFloat32: return "float32";
  }
  return "float32";
}

template <std::size_t N>
std::array<double, N> read_triple(const nlohmann::json& doc, const char* key) {
  const auto& arr = doc.at(key);
  if (!arr.is_array() || arr.size() != N) {
    throw Error(Errc::kInvalidMetadata, std::string(key) + " must be an array of 3 numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = arr[i].get<double>();
  return out;
}

}  // namespace

std::size_t bytes_per_scalar(ScalarKind kind) {
  switch (kind) {
    case ScalarKind::kUnsigned8: return 1;
    case ScalarKind::kUnsigned16: return 2;
    case ScalarKind::kFloat32: return 4;
  }
  throw Error(Errc::kUnsupportedScalarKind, "unknown scalar kind");
}

std::size_t VolumeMeta::voxel_count() const {
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
         static_cast<std::size_t>(dims[2]);
}

std::size_t VolumeMeta::byte_length() const { return voxel_count() * bytes_per_scalar(scalar_kind); }

void VolumeMeta::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (dims[i] < 1) throw Error(Errc::kInvalidMetadata, "dims must be >= 1");
    if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i])) {
      throw Error(Errc::kInvalidMetadata, "spacing must be > 0");
    }
    if (!std::isfinite(origin[i])) throw Error(Errc::kInvalidMetadata, "origin must be finite");
  }
}

VolumeMeta meta_from_json(const nlohmann::json& doc) {
  static const std::array<std::string_view, 6> kKeys = {"dims",       "spacing",    "origin",
                                                        "scalar_kind", "value_kind", "byte_order"};
  if (!doc.is_object()) throw Error(Errc::kInvalidMetadata, "sidecar must be an object");
  for (const auto& [key, _] : doc.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw Error(Errc::kInvalidMetadata, "unknown key '" + key + "'");
    }
  }
  if (!doc.contains("dims") || !doc.contains("scalar_kind")) {
    throw Error(Errc::kInvalidMetadata, "dims and scalar_kind are required");
  }
  VolumeMeta meta;
  try {
    const auto dims = read_triple<3>(doc, "dims");
    for (int i = 0; i < 3; ++i) {
      if (dims[i] != std::floor(dims[i])) throw Error(Errc::kInvalidMetadata, "dims must be integers");
      meta.dims[i] = static_cast<std::int64_t>(dims[i]);
    }
    if (doc.contains("spacing")) meta.spacing = read_triple<3>(doc, "spacing");
    if (doc.contains("origin")) meta.origin = read_triple<3>(doc, "origin");
    meta.scalar_kind = parse_scalar_kind(doc.at("scalar_kind").get<std::string>());
    if (doc.contains("value_kind")) {
      const auto s = doc.at("value_kind").get<std::string>();
      if (s == "continuous") meta.value_kind = ValueKind::kContinuous;
      else if (s == "label") meta.value_kind = ValueKind::kLabel;
      else throw Error(Errc::kInvalidMetadata, "value_kind '" + s + "'");
    }
    if (doc.contains("byte_order")) {
      const auto s = doc.at("byte_order").get<std::string>();
      if (s == "little") meta.byte_order = ByteOrder::kLittle;
      else if (s == "big") meta.byte_order = ByteOrder::kBig;
      else throw Error(Errc::kInvalidMetadata, "byte_order '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kInvalidMetadata, e.what());
  }
  meta.validate();
  return meta;
}

nlohmann::json meta_to_json(const VolumeMeta& meta) {
  return {
      {"dims", meta.dims},
      {"spacing", meta.spacing},
      {"origin", meta.origin},
      {"scalar_kind", scalar_kind_name(meta.scalar_kind)},
      {"value_kind", meta.value_kind == ValueKind::kLabel ? "label" : "continuous"},
      {"byte_order", meta.byte_order == ByteOrder::kBig ? "big" : "little"},
  };
}

VolumeMeta read_meta(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw Error(Errc::kIoFailure, "cannot open " + sidecar.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kInvalidMetadata, sidecar.string() + ": " + e.what());
  }
  return meta_from_json(doc);
}

Volume::Volume(VolumeMeta meta, std::vector<float> values) : meta_(meta), values_(std::move(values)) {
  meta_.validate();
  if (values_.size() != meta_.voxel_count()) {
    throw Error(Errc::kInvalidArgument, "value count does not match dims");
  }
  auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
  v_min_ = *lo;
  v_max_ = *hi;
}

Vec3 Volume::world_min() const { return from_array(meta_.origin); }

Vec3 Volume::world_max() const {
  Vec3 hi = world_min();
  for (int i = 0; i < 3; ++i) hi[i] += static_cast<double>(meta_.dims[i] - 1) * meta_.spacing[i];
  return hi;
}

Vec3 Volume::centroid() const { return (world_min() + world_max()) * 0.5; }

double Volume::world_diagonal() const {
  const double d = norm(world_max() - world_min());
  return d > 0.0 ? d : min_spacing();
}

double Volume::min_spacing() const {
  return std::min({meta_.spacing[0], meta_.spacing[1], meta_.spacing[2]});
}

Volume decode_raw(std::span<const std::byte> bytes, const VolumeMeta& meta) {
  meta.validate();
  if (bytes.size() != meta.byte_length()) {
    throw Error(Errc::kFileSizeMismatch, "expected " + std::to_string(meta.byte_length()) +
                                             " bytes, got " + std::to_string(bytes.size()));
  }
  const bool swap = needs_swap(meta.byte_order);
  const std::size_t n = meta.voxel_count();
  std::vector<float> values(n);
  const std::byte* src = bytes.data();
  switch (meta.scalar_kind) {
    case ScalarKind::kUnsigned8:
      for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<float>(std::to_integer<std::uint8_t>(src[i]));
      break;
    case ScalarKind::kUnsigned16:
      for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<float>(read_scalar<std::uint16_t>(src + 2 * i, swap));
      break;
    case ScalarKind::kFloat32:
      for (std::size_t i = 0; i < n; ++i) values[i] = read_scalar<float>(src + 4 * i, swap);
      break;
  }
  return Volume(meta, std::move(values));
}

std::vector<std::byte> encode_raw(const Volume& volume) {
  const auto& meta = volume.meta();
  const bool swap = needs_swap(meta.byte_order);
  const auto values = volume.values();
  std::vector<std::byte> out(meta.byte_length());
  for (std::size_t i = 0; i < values.size(); ++i) {
    switch (meta.scalar_kind) {
      case ScalarKind::kUnsigned8:
        out[i] = static_cast<std::byte>(static_cast<std::uint8_t>(values[i]));
        break;
      case ScalarKind::kUnsigned16:
        write_scalar(out.data() + 2 * i, static_cast<std::uint16_t>(values[i]), swap);
        break;
      case ScalarKind::kFloat32:
        write_scalar(out.data() + 4 * i, values[i], swap);
        break;
    }
  }
  return out;
}

Volume load_raw(const std::filesystem::path& path, const VolumeMeta& meta) {
  meta.validate();
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw Error(Errc::kIoFailure, "cannot stat " + path.string() + ": " + ec.message());
  if (size != meta.byte_length()) {
    throw Error(Errc::kFileSizeMismatch, path.string() + ": expected " + std::to_string(meta.byte_length()) +
                                             " bytes, got " + std::to_string(size));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoFailure, "cannot open " + path.string());
  std::vector<std::byte> bytes(size);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw Error(Errc::kIoFailure, "short read on " + path.string());
  }
  return decode_raw(bytes, meta);
}

void save_raw(const std::filesystem::path& path, const Volume& volume) {
  const auto bytes = encode_raw(volume);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::kIoFailure, "write failed for " + path.string());
}

Volume downsample(const Volume& volume, std::int64_t target) {
  if (target < 1) throw Error(Errc::kInvalidArgument, "downsample target must be >= 1");
  const VolumeMeta& in_meta = volume.meta();
  std::array<std::int64_t, 3> stride{};
  bool identity = true;
  for (int a = 0; a < 3; ++a) {
    stride[a] = (in_meta.dims[a] + target - 1) / target;
    identity = identity && stride[a] == 1;
  }
  if (identity) return volume;

  VolumeMeta out_meta = in_meta;
  for (int a = 0; a < 3; ++a) {
    out_meta.dims[a] = (in_meta.dims[a] + stride[a] - 1) / stride[a];
    out_meta.origin[a] += 0.5 * static_cast<double>(stride[a] - 1) * in_meta.spacing[a];
    out_meta.spacing[a] *= static_cast<double>(stride[a]);
  }
  const bool label = in_meta.value_kind == ValueKind::kLabel;
  std::vector<float> out(out_meta.voxel_count());
  const auto onx = out_meta.dims[0], ony = out_meta.dims[1];

  parallel_for(static_cast<std::size_t>(out_meta.dims[2]), default_thread_count(), [&](std::size_t oz) {
    std::map<float, std::int64_t> votes;
    const auto z0 = static_cast<std::int64_t>(oz) * stride[2];
    const auto z1 = std::min(z0 + stride[2], volume.nz());
    for (std::int64_t oy = 0; oy < ony; ++oy) {
      const auto y0 = oy * stride[1];
      const auto y1 = std::min(y0 + stride[1], volume.ny());
      for (std::int64_t ox = 0; ox < onx; ++ox) {
        const auto x0 = ox * stride[0];
        const auto x1 = std::min(x0 + stride[0], volume.nx());
        float result = 0.0f;
        if (label) {
          votes.clear();
          for (auto z = z0; z < z1; ++z)
            for (auto y = y0; y < y1; ++y)
              for (auto x = x0; x < x1; ++x) ++votes[volume.at(x, y, z)];
          std::int64_t best = -1;
          for (const auto& [value, count] : votes) {
            if (count > best) {
              best = count;
              result = value;
            }
          }
        } else {
          double sum = 0.0;
          std::int64_t count = 0;
          for (auto z = z0; z < z1; ++z)
            for (auto y = y0; y < y1; ++y)
              for (auto x = x0; x < x1; ++x) {
                sum += volume.at(x, y, z);
                ++count;
              }
          result = static_cast<float>(sum / static_cast<double>(count));
        }
        out[static_cast<std::size_t>((static_cast<std::int64_t>(oz) * ony + oy) * onx + ox)] = result;
      }
    }
  });
  return Volume(out_meta, std::move(out));
}

Volume normalize(const Volume& volume) {
  const double lo = volume.v_min();
  const double hi = volume.v_max();
  std::vector<float> out(volume.values().size(), 0.0f);
  if (hi > lo) {
    const double range = hi - lo;
    const auto values = volume.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      out[i] = static_cast<float>((static_cast<double>(values[i]) - lo) / range);
    }
  }
  VolumeMeta meta = volume.meta();
  meta.scalar_kind = ScalarKind::kFloat32;
  return Volume(meta, std::move(out));
}

std::pair<double, double> value_range(const Volume& volume) { return {volume.v_min(), volume.v_max()}; }

}  // namespace sasav
