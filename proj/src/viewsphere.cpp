#include "sasav/viewsphere.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "sasav/error.hpp"

namespace sasav {

void to_json(nlohmann::json& j, const Viewpoint& vp) {
  j = {{"index", vp.index}, {"direction", to_array(vp.direction)}, {"position", to_array(vp.position)}};
}

void from_json(const nlohmann::json& j, Viewpoint& vp) {
  vp.index = j.at("index").get<int>();
  vp.direction = from_array(j.at("direction").get<std::array<double, 3>>());
  vp.position = from_array(j.at("position").get<std::array<double, 3>>());
}

double view_sphere_radius(const Volume& volume) { return 1.5 * volume.world_diagonal() / 2.0; }

std::vector<Viewpoint> fibonacci_lattice(int k, Vec3 center, double radius) {
  if (k < 1) throw Error(Errc::kInvalidArgument, "lattice size must be >= 1");
  if (!(radius > 0.0)) throw Error(Errc::kInvalidArgument, "radius must be > 0");
  const double phi = std::numbers::phi;
  std::vector<Viewpoint> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / k;
    const double azimuth = 2.0 * std::numbers::pi * i / phi;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    auto& vp = out[static_cast<std::size_t>(i)];
    vp.index = i;
    vp.direction = {r * std::cos(azimuth), r * std::sin(azimuth), z};
    vp.position = center + vp.direction * radius;
  }
  return out;
}

Camera camera_for(const Viewpoint& vp, Vec3 center, double vertical_fov) {
  const Vec3 dir = normalized(vp.position - center);
  const Vec3 up = std::abs(dir.z) > 0.99 ? Vec3{0.0, 1.0, 0.0} : Vec3{0.0, 0.0, 1.0};
  return {vp.position, center, up, vertical_fov};
}

Vec3 centripetal_catmull_rom(Vec3 p0, Vec3 p1, Vec3 p2, Vec3 p3, double u) {
  auto interval = [](Vec3 a, Vec3 b) {
    const double d = std::sqrt(norm(b - a));
    return d > 1e-12 ? d : 1.0;
  };
  const double t0 = 0.0;
  const double t1 = t0 + interval(p0, p1);
  const double t2 = t1 + interval(p1, p2);
  const double t3 = t2 + interval(p2, p3);
  const double t = t1 + u * (t2 - t1);
  // Barry-Goldman pyramid.
  const Vec3 a1 = p0 * ((t1 - t) / (t1 - t0)) + p1 * ((t - t0) / (t1 - t0));
  const Vec3 a2 = p1 * ((t2 - t) / (t2 - t1)) + p2 * ((t - t1) / (t2 - t1));
  const Vec3 a3 = p2 * ((t3 - t) / (t3 - t2)) + p3 * ((t - t2) / (t3 - t2));
  const Vec3 b1 = a1 * ((t2 - t) / (t2 - t0)) + a2 * ((t - t0) / (t2 - t0));
  const Vec3 b2 = a2 * ((t3 - t) / (t3 - t1)) + a3 * ((t - t1) / (t3 - t1));
  return b1 * ((t2 - t) / (t2 - t1)) + b2 * ((t - t1) / (t2 - t1));
}

Trajectory catmull_rom_path(std::span<const Viewpoint> anchors, int samples_per_segment, Vec3 center, double radius,
                            bool closed, double vertical_fov) {
  if (anchors.size() < 2) throw Error(Errc::kTooFewAnchors, "trajectory needs at least 2 anchors");
  if (samples_per_segment < 1) throw Error(Errc::kInvalidArgument, "samples_per_segment must be >= 1");
  Trajectory out;
  out.anchors.assign(anchors.begin(), anchors.end());
  out.samples_per_segment = samples_per_segment;
  out.closed = closed;

  const auto n = static_cast<std::ptrdiff_t>(anchors.size());
  auto point = [&](std::ptrdiff_t i) -> Vec3 {
    if (closed) return anchors[static_cast<std::size_t>(((i % n) + n) % n)].position;
    if (i < 0) return anchors[0].position * 2.0 - anchors[1].position;
    if (i >= n) return anchors[static_cast<std::size_t>(n - 1)].position * 2.0 - anchors[static_cast<std::size_t>(n - 2)].position;
    return anchors[static_cast<std::size_t>(i)].position;
  };

  Vec3 last_dir = normalized(anchors[0].position - center);
  auto push = [&](Vec3 p) {
    Vec3 rel = p - center;
    // Re-project onto the sphere; a sample through the center keeps the previous direction.
    const Vec3 dir = norm(rel) > 1e-12 * radius ? normalized(rel) : last_dir;
    last_dir = dir;
    Viewpoint vp{0, dir, center + dir * radius};
    out.dense_path.push_back(camera_for(vp, center, vertical_fov));
  };

  const std::ptrdiff_t segments = closed ? n : n - 1;
  for (std::ptrdiff_t s = 0; s < segments; ++s) {
    for (int j = 0; j < samples_per_segment; ++j) {
      if (j == 0) {
        push(point(s));
        continue;
      }
      const double u = static_cast<double>(j) / samples_per_segment;
      push(centripetal_catmull_rom(point(s - 1), point(s), point(s + 1), point(s + 2), u));
    }
  }
  push(point(segments));
  return out;
}

}  // namespace sasav
