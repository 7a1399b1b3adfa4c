#include "sasav/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sasav::synthetic {

namespace {

template <typename F>
Volume generate(std::int64_t n, ValueKind kind, F&& f) {
  VolumeMeta meta;
  meta.dims = {n, n, n};
  meta.scalar_kind = ScalarKind::kFloat32;
  meta.value_kind = kind;
  std::vector<float> values(static_cast<std::size_t>(n * n * n));
  const double c = 0.5 * static_cast<double>(n - 1);
  std::size_t idx = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t i = 0; i < n; ++i) {
        values[idx] = static_cast<float>(f(static_cast<double>(i) - c, static_cast<double>(j) - c, static_cast<double>(k) - c));
        ++idx;
      }
    }
  }
  return Volume(meta, std::move(values));
}

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Volume sphere_distance(std::int64_t n) {
  return generate(n, ValueKind::kContinuous, [](double x, double y, double z) { return std::sqrt(x * x + y * y + z * z); });
}

Volume nested_shells(std::int64_t n) {
  std::mt19937 gen(1234);
  std::uniform_real_distribution<double> noise(-0.02, 0.02);
  const double scale = static_cast<double>(n) / 64.0;
  return generate(n, ValueKind::kContinuous, [&](double x, double y, double z) {
    const double r = std::sqrt(x * x + 1.2 * y * y + 0.9 * z * z) / scale;
    // Outer skin at r~28, middle layer at r~18, dense core below r~8.
    double v = 0.25 * (1.0 - smoothstep(26.0, 28.0, r)) + 0.30 * (1.0 - smoothstep(16.0, 18.0, r)) +
               0.40 * (1.0 - smoothstep(7.0, 9.0, r));
    return std::max(0.0, v + noise(gen));
  });
}

Volume gaussian_blob(std::int64_t n) {
  const double s = static_cast<double>(n) / 64.0;
  return generate(n, ValueKind::kContinuous, [&](double x, double y, double z) {
    const double main = std::exp(-((x * x) / (2 * 12.0 * 12.0) + (y * y) / (2 * 8.0 * 8.0) + (z * z) / (2 * 10.0 * 10.0)) / (s * s));
    const double ox = x - 14.0 * s, oy = y + 10.0 * s, oz = z - 6.0 * s;
    const double lobe = 0.5 * std::exp(-(ox * ox + oy * oy + oz * oz) / (2 * 5.0 * 5.0 * s * s));
    return main + lobe;
  });
}

Volume label_shells(std::int64_t n) {
  const double scale = static_cast<double>(n) / 64.0;
  return generate(n, ValueKind::kLabel, [&](double x, double y, double z) {
    const double r = std::sqrt(x * x + y * y + z * z) / scale;
    if (r < 8.0) return 3.0;
    if (r < 18.0) return 2.0;
    if (r < 28.0) return 1.0;
    return 0.0;
  });
}

}  // namespace sasav::synthetic
