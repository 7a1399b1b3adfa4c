#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sasav/image.hpp"
#include "sasav/parallel.hpp"
#include "sasav/transfer.hpp"
#include "sasav/vec3.hpp"
#include "sasav/volume.hpp"

namespace sasav {

struct Camera {
  Vec3 position;
  Vec3 look_at;
  Vec3 up{0.0, 0.0, 1.0};
  double vertical_fov = 45.0;  // degrees

  /// Throws kInvalidArgument when position == look_at, up is parallel to the
  /// view direction, or the fov is outside (0, 180).
  void validate() const;
  friend bool operator==(const Camera&, const Camera&) = default;
};

void to_json(nlohmann::json& j, const Camera& c);
void from_json(const nlohmann::json& j, Camera& c);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

struct RenderOptions {
  unsigned threads = default_thread_count();
  /// Ray-march step as a fraction of the smallest voxel spacing.
  double step_fraction = 0.5;
  double termination_alpha = 0.99;
};

inline constexpr double kAmbient = 0.2;
inline constexpr double kDiffuse = 0.8;

/// One step-corrected sample along a ray.
struct RaySample {
  Rgb color;
  double alpha = 0.0;
};

struct CompositeResult {
  Rgb color;     // premultiplied accumulated color
  double alpha = 0.0;
  std::size_t samples_used = 0;
};

/// Front-to-back "under" compositing: C += (1 - A) a c, A += (1 - A) a, stopping
/// once A reaches the termination threshold.
class FrontToBack {
 public:
  explicit FrontToBack(double termination = 0.99) : termination_(termination) {}

  /// Returns false once the ray is saturated.
  bool add(const Rgb& color, double alpha) {
    const double w = (1.0 - acc_.alpha) * alpha;
    acc_.color.r += w * color.r;
    acc_.color.g += w * color.g;
    acc_.color.b += w * color.b;
    acc_.alpha += w;
    ++acc_.samples_used;
    return acc_.alpha < termination_;
  }
  bool saturated() const { return acc_.alpha >= termination_; }
  const CompositeResult& result() const { return acc_; }

 private:
  double termination_;
  CompositeResult acc_;
};

CompositeResult composite_ray(std::span<const RaySample> samples, double termination = 0.99);

/// Opacity correction for a step of `step` world units when the transfer
/// function opacity is defined per `reference_step`.
double correct_opacity(double alpha, double step, double reference_step);

/// Trilinear sample at a world position, clamped to the grid.
double sample_trilinear(const Volume& volume, Vec3 world);

/// Composited color of the ray through pixel (x, y) before quantization and
/// before blending with the background.
CompositeResult trace_dvr_pixel(const Volume& volume, const TransferFunction& tf, const Camera& camera, int width,
                                int height, int x, int y, const RenderOptions& options = {});

/// Ray-cast direct volume rendering against a white background.
Image render_dvr(const Volume& volume, const TransferFunction& tf, const Camera& camera, int width, int height,
                 const RenderOptions& options = {});

/// Marching cubes over the cell grid; "inside" means value < isovalue. Normals
/// point toward decreasing scalar value.
Mesh extract_isosurface(const Volume& volume, double isovalue, unsigned threads = default_thread_count());

/// A mesh with a flat color and opacity for layered rendering.
struct MeshLayer {
  const Mesh* mesh = nullptr;
  Rgb color{1.0, 1.0, 1.0};
  double opacity = 1.0;
};

/// Z-buffered, headlight-shaded rasterization of a single opaque mesh.
Image render_mesh(const Mesh& mesh, const Rgb& color, const Camera& camera, int width, int height,
                  const RenderOptions& options = {});

/// Per-layer nearest surface, then opacity-weighted front-to-back blending of
/// the layers sorted by depth per pixel.
Image render_layers(std::span<const MeshLayer> layers, const Camera& camera, int width, int height,
                    const RenderOptions& options = {});

/// Cameras on +x, -x, +y, -y, +z, -z at twice the world diagonal from the centroid.
std::vector<Camera> orthogonal_cameras(const Volume& volume);
/// Front (+z), side (+x), top (+y) and diagonal (1,1,1) at the same standoff.
std::vector<Camera> four_view_cameras(const Volume& volume);

/// White at v_min to black at v_max; opacity follows the ramp.
TransferFunction grayscale_xray_tf(const RampOpacity& ramp);

}  // namespace sasav
