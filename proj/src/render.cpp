#include "sasav/render.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "sasav/error.hpp"

namespace sasav {

namespace {

constexpr int kBandRows = 16;

std::uint8_t quantize(double c) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

struct CameraFrame {
  Vec3 origin;
  Vec3 forward;
  Vec3 right;
  Vec3 up;
  double tan_half = 0.0;
  double aspect = 1.0;
  int width = 0;
  int height = 0;

  CameraFrame(const Camera& camera, int w, int h) : origin(camera.position), width(w), height(h) {
    camera.validate();
    if (w < 1 || h < 1) throw Error(Errc::kInvalidArgument, "image size must be positive");
    forward = normalized(camera.look_at - camera.position);
    right = normalized(cross(forward, camera.up));
    up = cross(right, forward);
    tan_half = std::tan(camera.vertical_fov * std::numbers::pi / 360.0);
    aspect = static_cast<double>(w) / static_cast<double>(h);
  }

  Vec3 ray_direction(int x, int y) const {
    const double sx = (2.0 * (x + 0.5) / width - 1.0) * tan_half * aspect;
    const double sy = (1.0 - 2.0 * (y + 0.5) / height) * tan_half;
    return normalized(forward + right * sx + up * sy);
  }
};

bool intersect_box(Vec3 origin, Vec3 dir, Vec3 lo, Vec3 hi, double& t_near, double& t_far) {
  t_near = 0.0;
  t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - origin[a]) / dir[a];
    double t1 = (hi[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  return t_near <= t_far;
}

}  // namespace

void Camera::validate() const {
  for (const Vec3& v : {position, look_at, up}) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) {
      throw Error(Errc::kInvalidArgument, "camera has a non-finite coordinate");
    }
  }
  const Vec3 view = look_at - position;
  if (norm(view) <= 0.0) throw Error(Errc::kInvalidArgument, "camera position equals look_at");
  if (!(vertical_fov > 0.0 && vertical_fov < 180.0)) throw Error(Errc::kInvalidArgument, "fov outside (0, 180)");
  if (norm(cross(normalized(view), up)) < 1e-9) throw Error(Errc::kInvalidArgument, "up parallel to view direction");
}

void to_json(nlohmann::json& j, const Camera& c) {
  j = {{"position", to_array(c.position)},
       {"look_at", to_array(c.look_at)},
       {"up", to_array(c.up)},
       {"vertical_fov", c.vertical_fov}};
}

void from_json(const nlohmann::json& j, Camera& c) {
  c.position = from_array(j.at("position").get<std::array<double, 3>>());
  c.look_at = from_array(j.at("look_at").get<std::array<double, 3>>());
  c.up = from_array(j.value("up", std::array<double, 3>{0.0, 0.0, 1.0}));
  c.vertical_fov = j.value("vertical_fov", 45.0);
}

CompositeResult composite_ray(std::span<const RaySample> samples, double termination) {
  FrontToBack acc(termination);
  for (const auto& s : samples) {
    if (!acc.add(s.color, s.alpha)) break;
  }
  return acc.result();
}

double correct_opacity(double alpha, double step, double reference_step) {
  if (alpha <= 0.0) return 0.0;
  if (alpha >= 1.0) return 1.0;
  return 1.0 - std::pow(1.0 - alpha, step / reference_step);
}

double sample_trilinear(const Volume& volume, Vec3 world) {
  const auto& meta = volume.meta();
  const auto values = volume.values();
  std::int64_t i0[3];
  double f[3];
  std::int64_t stride[3] = {1, volume.nx(), volume.nx() * volume.ny()};
  bool flat[3];
  for (int a = 0; a < 3; ++a) {
    const std::int64_t n = meta.dims[a];
    double g = (world[a] - meta.origin[a]) / meta.spacing[a];
    g = std::clamp(g, 0.0, static_cast<double>(n - 1));
    flat[a] = n == 1;
    i0[a] = flat[a] ? 0 : std::min<std::int64_t>(static_cast<std::int64_t>(g), n - 2);
    f[a] = flat[a] ? 0.0 : g - static_cast<double>(i0[a]);
  }
  const std::size_t base = static_cast<std::size_t>(i0[0] + i0[1] * stride[1] + i0[2] * stride[2]);
  const std::size_t dx = flat[0] ? 0 : 1;
  const std::size_t dy = flat[1] ? 0 : static_cast<std::size_t>(stride[1]);
  const std::size_t dz = flat[2] ? 0 : static_cast<std::size_t>(stride[2]);
  const double c000 = values[base], c100 = values[base + dx];
  const double c010 = values[base + dy], c110 = values[base + dx + dy];
  const double c001 = values[base + dz], c101 = values[base + dx + dz];
  const double c011 = values[base + dy + dz], c111 = values[base + dx + dy + dz];
  const double c00 = c000 + (c100 - c000) * f[0];
  const double c10 = c010 + (c110 - c010) * f[0];
  const double c01 = c001 + (c101 - c001) * f[0];
  const double c11 = c011 + (c111 - c011) * f[0];
  const double c0 = c00 + (c10 - c00) * f[1];
  const double c1 = c01 + (c11 - c01) * f[1];
  return c0 + (c1 - c0) * f[2];
}

namespace {

CompositeResult trace(const Volume& volume, const TransferFunction& tf, const CameraFrame& frame, int x, int y,
                      const RenderOptions& options) {
  FrontToBack acc(options.termination_alpha);
  const Vec3 dir = frame.ray_direction(x, y);
  double t_near = 0.0, t_far = 0.0;
  if (!intersect_box(frame.origin, dir, volume.world_min(), volume.world_max(), t_near, t_far)) {
    return acc.result();
  }
  const double reference = volume.min_spacing();
  const double step = options.step_fraction * reference;
  const double exponent = step / reference;
  [[maybe_unused]] double previous_alpha = 0.0;
  for (std::int64_t k = 0;; ++k) {
    const double t = t_near + static_cast<double>(k) * step;
    if (t > t_far) break;
    const double v = sample_trilinear(volume, frame.origin + dir * t);
    const TfSample s = tf.evaluate(v);
    if (s.opacity <= 0.0) continue;
    const double alpha = s.opacity >= 1.0 ? 1.0 : 1.0 - std::pow(1.0 - s.opacity, exponent);
    const bool more = acc.add(s.color, alpha);
    assert(acc.result().alpha >= previous_alpha && acc.result().alpha <= 1.0 + 1e-12);
    previous_alpha = acc.result().alpha;
    if (!more) break;
  }
  return acc.result();
}

}  // namespace

CompositeResult trace_dvr_pixel(const Volume& volume, const TransferFunction& tf, const Camera& camera, int width,
                                int height, int x, int y, const RenderOptions& options) {
  return trace(volume, tf, CameraFrame(camera, width, height), x, y, options);
}

Image render_dvr(const Volume& volume, const TransferFunction& tf, const Camera& camera, int width, int height,
                 const RenderOptions& options) {
  const CameraFrame frame(camera, width, height);
  Image image(width, height);
  parallel_for(static_cast<std::size_t>(height), options.threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < width; ++x) {
      const CompositeResult r = trace(volume, tf, frame, x, y, options);
      const double background = 1.0 - r.alpha;
      std::uint8_t* px = image.pixel(x, y);
      px[0] = quantize(r.color.r + background);
      px[1] = quantize(r.color.g + background);
      px[2] = quantize(r.color.b + background);
      px[3] = 255;
    }
  });
  return image;
}

namespace {

struct ProjectedVertex {
  double sx = 0.0;
  double sy = 0.0;
  double inv_z = 0.0;
  bool valid = false;
};

struct ProjectedMesh {
  std::vector<ProjectedVertex> vertices;
  std::vector<std::vector<std::uint32_t>> band_triangles;
};

ProjectedMesh project(const Mesh& mesh, const CameraFrame& frame, int bands) {
  ProjectedMesh out;
  out.vertices.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 rel = mesh.vertices[i] - frame.origin;
    const double z = dot(rel, frame.forward);
    auto& pv = out.vertices[i];
    if (z <= 1e-9) continue;
    const double nx = dot(rel, frame.right) / (z * frame.tan_half * frame.aspect);
    const double ny = dot(rel, frame.up) / (z * frame.tan_half);
    pv.sx = (nx + 1.0) * 0.5 * frame.width;
    pv.sy = (1.0 - ny) * 0.5 * frame.height;
    pv.inv_z = 1.0 / z;
    pv.valid = true;
  }
  out.band_triangles.resize(static_cast<std::size_t>(bands));
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const auto& a = out.vertices[tri[0]];
    const auto& b = out.vertices[tri[1]];
    const auto& c = out.vertices[tri[2]];
    if (!a.valid || !b.valid || !c.valid) continue;
    const double lo = std::min({a.sy, b.sy, c.sy});
    const double hi = std::max({a.sy, b.sy, c.sy});
    const int y0 = std::max(0, static_cast<int>(std::ceil(lo - 0.5)));
    const int y1 = std::min(frame.height - 1, static_cast<int>(std::floor(hi - 0.5)));
    if (y0 > y1) continue;
    for (int band = y0 / kBandRows; band <= y1 / kBandRows; ++band) {
      out.band_triangles[static_cast<std::size_t>(band)].push_back(static_cast<std::uint32_t>(t));
    }
  }
  return out;
}

struct Fragment {
  double depth = std::numeric_limits<double>::infinity();
  Rgb color;
};

// Nearest shaded fragment of one mesh for every pixel of rows [y0, y1).
void rasterize_band(const Mesh& mesh, const ProjectedMesh& projected, std::size_t band, const Rgb& base,
                    const CameraFrame& frame, int y0, int y1, std::vector<Fragment>& out) {
  const int width = frame.width;
  for (auto t : projected.band_triangles[band]) {
    const auto& tri = mesh.triangles[t];
    const ProjectedVertex* v[3] = {&projected.vertices[tri[0]], &projected.vertices[tri[1]],
                                   &projected.vertices[tri[2]]};
    const double area = (v[1]->sx - v[0]->sx) * (v[2]->sy - v[0]->sy) - (v[2]->sx - v[0]->sx) * (v[1]->sy - v[0]->sy);
    if (std::abs(area) < 1e-12) continue;
    const int x_lo = std::max(0, static_cast<int>(std::ceil(std::min({v[0]->sx, v[1]->sx, v[2]->sx}) - 0.5)));
    const int x_hi =
        std::min(width - 1, static_cast<int>(std::floor(std::max({v[0]->sx, v[1]->sx, v[2]->sx}) - 0.5)));
    const int ry0 = std::max(y0, static_cast<int>(std::ceil(std::min({v[0]->sy, v[1]->sy, v[2]->sy}) - 0.5)));
    const int ry1 =
        std::min(y1 - 1, static_cast<int>(std::floor(std::max({v[0]->sy, v[1]->sy, v[2]->sy}) - 0.5)));
    for (int y = ry0; y <= ry1; ++y) {
      const double py = y + 0.5;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double px = x + 0.5;
        double w[3];
        for (int e = 0; e < 3; ++e) {
          const auto* a = v[(e + 1) % 3];
          const auto* b = v[(e + 2) % 3];
          w[e] = ((b->sx - a->sx) * (py - a->sy) - (px - a->sx) * (b->sy - a->sy)) / area;
        }
        if (w[0] < 0.0 || w[1] < 0.0 || w[2] < 0.0) continue;
        const double inv_z = w[0] * v[0]->inv_z + w[1] * v[1]->inv_z + w[2] * v[2]->inv_z;
        const double depth = 1.0 / inv_z;
        Fragment& frag = out[static_cast<std::size_t>(y - y0) * width + x];
        if (!(depth < frag.depth)) continue;
        Vec3 n;
        for (int e = 0; e < 3; ++e) n += mesh.normals[tri[e]] * (w[e] * v[e]->inv_z * depth);
        n = normalized(n);
        const double lambert = std::abs(dot(n, frame.ray_direction(x, y)));
        const double shade = kAmbient + kDiffuse * lambert;
        frag.depth = depth;
        frag.color = {base.r * shade, base.g * shade, base.b * shade};
      }
    }
  }
}

}  // namespace

Image render_layers(std::span<const MeshLayer> layers, const Camera& camera, int width, int height,
                    const RenderOptions& options) {
  const CameraFrame frame(camera, width, height);
  const int bands = (height + kBandRows - 1) / kBandRows;
  std::vector<ProjectedMesh> projected;
  projected.reserve(layers.size());
  for (const auto& layer : layers) projected.push_back(project(*layer.mesh, frame, bands));

  Image image(width, height);
  parallel_for(static_cast<std::size_t>(bands), options.threads, [&](std::size_t band) {
    const int y0 = static_cast<int>(band) * kBandRows;
    const int y1 = std::min(height, y0 + kBandRows);
    const std::size_t pixels = static_cast<std::size_t>(y1 - y0) * width;
    std::vector<std::vector<Fragment>> buffers(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].opacity <= 0.0) continue;
      buffers[l].assign(pixels, Fragment{});
      rasterize_band(*layers[l].mesh, projected[l], band, layers[l].color, frame, y0, y1, buffers[l]);
    }
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t p = 0; p < pixels; ++p) {
      order.clear();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!buffers[l].empty() && std::isfinite(buffers[l][p].depth)) order.emplace_back(buffers[l][p].depth, l);
      }
      std::sort(order.begin(), order.end());
      FrontToBack acc(1.0);
      for (const auto& [depth, l] : order) {
        if (!acc.add(buffers[l][p].color, layers[l].opacity)) break;
      }
      const auto& r = acc.result();
      const double background = 1.0 - r.alpha;
      std::uint8_t* px = image.pixel(static_cast<int>(p % width), y0 + static_cast<int>(p / width));
      px[0] = quantize(r.color.r + background);
      px[1] = quantize(r.color.g + background);
      px[2] = quantize(r.color.b + background);
      px[3] = 255;
    }
  });
  return image;
}

Image render_mesh(const Mesh& mesh, const Rgb& color, const Camera& camera, int width, int height,
                  const RenderOptions& options) {
  const MeshLayer layer{&mesh, color, 1.0};
  return render_layers(std::span(&layer, 1), camera, width, height, options);
}

std::vector<Camera> orthogonal_cameras(const Volume& volume) {
  const Vec3 c = volume.centroid();
  const double d = 2.0 * volume.world_diagonal();
  const Vec3 y{0.0, 1.0, 0.0};
  const Vec3 z{0.0, 0.0, 1.0};
  return {
      {c + Vec3{d, 0.0, 0.0}, c, y, 45.0}, {c + Vec3{-d, 0.0, 0.0}, c, y, 45.0},
      {c + Vec3{0.0, d, 0.0}, c, z, 45.0}, {c + Vec3{0.0, -d, 0.0}, c, z, 45.0},
      {c + Vec3{0.0, 0.0, d}, c, y, 45.0}, {c + Vec3{0.0, 0.0, -d}, c, y, 45.0},
  };
}

std::vector<Camera> four_view_cameras(const Volume& volume) {
  const Vec3 c = volume.centroid();
  const double d = 2.0 * volume.world_diagonal();
  const Vec3 diagonal = normalized(Vec3{1.0, 1.0, 1.0});
  return {
      {c + Vec3{0.0, 0.0, d}, c, {0.0, 1.0, 0.0}, 45.0},
      {c + Vec3{d, 0.0, 0.0}, c, {0.0, 1.0, 0.0}, 45.0},
      {c + Vec3{0.0, d, 0.0}, c, {0.0, 0.0, 1.0}, 45.0},
      {c + diagonal * d, c, {0.0, 0.0, 1.0}, 45.0},
  };
}

TransferFunction grayscale_xray_tf(const RampOpacity& ramp) {
  ramp.validate();
  const double span = ramp.v_max - ramp.v_min;
  auto gray = [&](double v) {
    const double g = 1.0 - (v - ramp.v_min) / span;
    return Rgb{g, g, g};
  };
  std::vector<ControlPoint> points;
  points.push_back({ramp.v_min, gray(ramp.v_min), 0.0});
  if (ramp.rsv > ramp.v_min) points.push_back({ramp.rsv, gray(ramp.rsv), 0.0});
  points.push_back({ramp.v_max, {0.0, 0.0, 0.0}, 1.0});
  return TransferFunction::continuous(std::move(points));
}

}  // namespace sasav
