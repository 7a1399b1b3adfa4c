#pragma once

#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sasav/render.hpp"
#include "sasav/vec3.hpp"
#include "sasav/volume.hpp"

namespace sasav {

struct Viewpoint {
  int index = 0;
  Vec3 direction;  // unit vector from the sphere center
  Vec3 position;   // center + radius * direction
};

void to_json(nlohmann::json& j, const Viewpoint& vp);
void from_json(const nlohmann::json& j, Viewpoint& vp);

struct Trajectory {
  std::vector<Viewpoint> anchors;
  std::vector<Camera> dense_path;
  int samples_per_segment = 1;
  bool closed = false;
};

/// The view sphere radius is 0.75 of the world diagonal (1.5x the half
/// diagonal); at this distance a 90 degree field of view frames the whole
/// bounding sphere.
inline constexpr double kViewSphereFov = 90.0;
double view_sphere_radius(const Volume& volume);

/// z_i = 1 - 2 (i + 0.5) / k, azimuth_i = 2 pi i / golden_ratio.
std::vector<Viewpoint> fibonacci_lattice(int k, Vec3 center, double radius);

/// Looks at the center; up is +z unless the view is within ~8 degrees of the
/// poles, then +y.
Camera camera_for(const Viewpoint& vp, Vec3 center, double vertical_fov = kViewSphereFov);

/// Centripetal Catmull-Rom through the anchor positions with reflected phantom
/// endpoints (or wrap-around when closed), re-projected onto the sphere. An
/// open path has samples_per_segment * (anchors - 1) + 1 poses; a closed path
/// samples_per_segment * anchors + 1 and ends where it started.
Trajectory catmull_rom_path(std::span<const Viewpoint> anchors, int samples_per_segment, Vec3 center, double radius,
                            bool closed = false, double vertical_fov = kViewSphereFov);

/// Raw centripetal Catmull-Rom point on the segment p1 -> p2, u in [0, 1].
Vec3 centripetal_catmull_rom(Vec3 p0, Vec3 p1, Vec3 p2, Vec3 p3, double u);

}  // namespace sasav
