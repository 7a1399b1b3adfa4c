#include <algorithm>
#include <array>
#include <unordered_map>

#include "sasav/render.hpp"

namespace sasav {

namespace {

constexpr std::array<std::array<int, 3>, 8> kCorner = {{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};

constexpr std::array<std::array<int, 2>, 12> kEdge = {{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

// Corners of each face, counter-clockwise seen from outside the cell.
constexpr std::array<std::array<int, 4>, 6> kFace = {{
    {0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5},
}};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    if ((kEdge[e][0] == a && kEdge[e][1] == b) || (kEdge[e][0] == b && kEdge[e][1] == a)) return e;
  }
  return -1;
}

using TriangleList = std::vector<std::array<int, 3>>;

// Triangulation per corner configuration. On every face each run of inside
// corners is cut off by one directed segment; the segments chain into closed
// polygons around the cell, which are fanned into triangles. Face ambiguities
// are resolved from the face corners alone, so neighbouring cells agree and
// the surface stays closed.
std::array<TriangleList, 256> build_table() {
  std::array<TriangleList, 256> table;
  for (int mask = 1; mask < 255; ++mask) {
    auto inside = [mask](int corner) { return ((mask >> corner) & 1) != 0; };
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& face : kFace) {
      for (int i = 0; i < 4; ++i) {
        const int a = face[i];
        const int b = face[(i + 1) % 4];
        if (inside(a) || !inside(b)) continue;
        int k = (i + 1) % 4;
        while (inside(face[(k + 1) % 4])) k = (k + 1) % 4;
        next[edge_between(a, b)] = edge_between(face[k], face[(k + 1) % 4]);
      }
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || used[start]) continue;
      std::vector<int> polygon;
      for (int e = start; !used[e]; e = next[e]) {
        used[e] = true;
        polygon.push_back(e);
      }
      for (std::size_t i = 1; i + 1 < polygon.size(); ++i) {
        table[mask].push_back({polygon[0], polygon[i], polygon[i + 1]});
      }
    }
  }
  return table;
}

const std::array<TriangleList, 256>& triangle_table() {
  static const auto table = build_table();
  return table;
}

Vec3 gradient_at(const Volume& v, std::int64_t i, std::int64_t j, std::int64_t k) {
  const auto& s = v.meta().spacing;
  auto diff = [&](std::int64_t lo_i, std::int64_t lo_j, std::int64_t lo_k, std::int64_t hi_i, std::int64_t hi_j,
                  std::int64_t hi_k, double h) {
    return (static_cast<double>(v.at(hi_i, hi_j, hi_k)) - static_cast<double>(v.at(lo_i, lo_j, lo_k))) / h;
  };
  Vec3 g;
  {
    const auto lo = std::max<std::int64_t>(i - 1, 0), hi = std::min<std::int64_t>(i + 1, v.nx() - 1);
    g.x = hi > lo ? diff(lo, j, k, hi, j, k, static_cast<double>(hi - lo) * s[0]) : 0.0;
  }
  {
    const auto lo = std::max<std::int64_t>(j - 1, 0), hi = std::min<std::int64_t>(j + 1, v.ny() - 1);
    g.y = hi > lo ? diff(i, lo, k, i, hi, k, static_cast<double>(hi - lo) * s[1]) : 0.0;
  }
  {
    const auto lo = std::max<std::int64_t>(k - 1, 0), hi = std::min<std::int64_t>(k + 1, v.nz() - 1);
    g.z = hi > lo ? diff(i, j, lo, i, j, hi, static_cast<double>(hi - lo) * s[2]) : 0.0;
  }
  return g;
}

}  // namespace

Mesh extract_isosurface(const Volume& volume, double isovalue, unsigned threads) {
  Mesh mesh;
  const auto nx = volume.nx(), ny = volume.ny(), nz = volume.nz();
  if (nx < 2 || ny < 2 || nz < 2) return mesh;
  if (!(isovalue > volume.v_min() && isovalue <= volume.v_max())) return mesh;

  const auto& table = triangle_table();
  const std::int64_t points = static_cast<std::int64_t>(volume.values().size());
  auto point_id = [&](std::int64_t i, std::int64_t j, std::int64_t k) { return (k * ny + j) * nx + i; };

  // Vertex keys: 3 * point + axis for an edge crossing; 3 * points + point when
  // the crossing lands exactly on the upper grid point.
  auto edge_key = [&](std::int64_t ci, std::int64_t cj, std::int64_t ck, int edge) -> std::int64_t {
    const auto& ca = kCorner[kEdge[edge][0]];
    const auto& cb = kCorner[kEdge[edge][1]];
    std::int64_t p[3] = {ci + std::min(ca[0], cb[0]), cj + std::min(ca[1], cb[1]), ck + std::min(ca[2], cb[2])};
    const int axis = ca[0] != cb[0] ? 0 : (ca[1] != cb[1] ? 1 : 2);
    std::int64_t q[3] = {p[0], p[1], p[2]};
    ++q[axis];
    const double vp = volume.at(p[0], p[1], p[2]);
    const double vq = volume.at(q[0], q[1], q[2]);
    if (vp == isovalue) return 3 * points + point_id(p[0], p[1], p[2]);
    if (vq == isovalue) return 3 * points + point_id(q[0], q[1], q[2]);
    return 3 * point_id(p[0], p[1], p[2]) + axis;
  };

  std::vector<std::vector<std::array<std::int64_t, 3>>> slabs(static_cast<std::size_t>(nz - 1));
  parallel_for(slabs.size(), threads, [&](std::size_t slab) {
    const auto k = static_cast<std::int64_t>(slab);
    auto& out = slabs[slab];
    for (std::int64_t j = 0; j + 1 < ny; ++j) {
      for (std::int64_t i = 0; i + 1 < nx; ++i) {
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          if (volume.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < isovalue) mask |= 1 << c;
        }
        for (const auto& tri : table[mask]) {
          std::array<std::int64_t, 3> keys = {edge_key(i, j, k, tri[0]), edge_key(i, j, k, tri[1]),
                                              edge_key(i, j, k, tri[2])};
          if (keys[0] == keys[1] || keys[1] == keys[2] || keys[0] == keys[2]) continue;
          out.push_back(keys);
        }
      }
    }
  });

  const Vec3 origin = volume.world_min();
  const auto& spacing = volume.meta().spacing;
  auto world = [&](double i, double j, double k) {
    return Vec3{origin.x + i * spacing[0], origin.y + j * spacing[1], origin.z + k * spacing[2]};
  };
  auto decode_point = [&](std::int64_t id) {
    return std::array<std::int64_t, 3>{id % nx, (id / nx) % ny, id / (nx * ny)};
  };

  std::unordered_map<std::int64_t, std::uint32_t> index_of;
  auto vertex_for = [&](std::int64_t key) -> std::uint32_t {
    auto [it, inserted] = index_of.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (!inserted) return it->second;
    Vec3 position;
    Vec3 gradient;
    if (key >= 3 * points) {
      const auto p = decode_point(key - 3 * points);
      position = world(static_cast<double>(p[0]), static_cast<double>(p[1]), static_cast<double>(p[2]));
      gradient = gradient_at(volume, p[0], p[1], p[2]);
    } else {
      const int axis = static_cast<int>(key % 3);
      const auto p = decode_point(key / 3);
      auto q = p;
      ++q[axis];
      const double vp = volume.at(p[0], p[1], p[2]);
      const double vq = volume.at(q[0], q[1], q[2]);
      const double t = (isovalue - vp) / (vq - vp);
      double g[3] = {static_cast<double>(p[0]), static_cast<double>(p[1]), static_cast<double>(p[2])};
      g[axis] += t;
      position = world(g[0], g[1], g[2]);
      const Vec3 ga = gradient_at(volume, p[0], p[1], p[2]);
      const Vec3 gb = gradient_at(volume, q[0], q[1], q[2]);
      gradient = ga + (gb - ga) * t;
    }
    mesh.vertices.push_back(position);
    mesh.normals.push_back(-gradient);
    return it->second;
  };

  for (const auto& slab : slabs) {
    for (const auto& keys : slab) {
      mesh.triangles.push_back({vertex_for(keys[0]), vertex_for(keys[1]), vertex_for(keys[2])});
    }
  }

  // Zero gradients (flat plateaus) fall back to the accumulated face normals.
  std::vector<Vec3> face_sum;
  for (std::size_t v = 0; v < mesh.normals.size(); ++v) {
    if (norm(mesh.normals[v]) > 1e-12) continue;
    if (face_sum.empty()) {
      face_sum.assign(mesh.vertices.size(), Vec3{});
      for (const auto& t : mesh.triangles) {
        const Vec3 n = cross(mesh.vertices[t[1]] - mesh.vertices[t[0]], mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        for (auto idx : t) face_sum[idx] += n;
      }
    }
    mesh.normals[v] = norm(face_sum[v]) > 0.0 ? face_sum[v] : Vec3{0.0, 0.0, 1.0};
  }
  for (auto& n : mesh.normals) n = normalized(n);
  return mesh;
}

}  // namespace sasav
