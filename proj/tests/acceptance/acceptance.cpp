// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails, except for throughput budgets that need more
// hardware threads than the host has; those still print FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasav/error.hpp"
#include "sasav/image.hpp"
#include "sasav/knowledge.hpp"
#include "sasav/pipeline.hpp"
#include "sasav/render.hpp"
#include "sasav/synthetic.hpp"
#include "sasav/transfer.hpp"
#include "sasav/viewsphere.hpp"
#include "support.hpp"

using namespace sasav;
using nlohmann::json;
using sasav::testing::TempDir;

namespace {

// Pinned tolerances and budgets.
constexpr double kRampTol = 1e-12;
constexpr double kSampleTol = 1e-12;
constexpr double kRayTol = 1e-6;
constexpr double kAnchorTol = 1e-6;
constexpr double kSphereTol = 1e-9;  // relative to the radius
constexpr double kRadiusTol = 0.5;   // voxels
constexpr double kRoundTripTol = 1e-6;
constexpr double kRampBudget = 1.0;
constexpr double kMarchingCubesBudget = 5.0;
constexpr double kDvrSerialBudget = 5.0;
constexpr double kDvrParallelBudget = 1.5;
constexpr unsigned kDvrParallelWorkers = 8;
constexpr double kEndToEndBudget = 60.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

struct Outcome {
  bool pass = true;
  std::string detail;
  bool hardware_bound = false;  // only a throughput budget failed, on a host with too few threads

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

ProviderConfig mock_provider(const std::filesystem::path& dir) {
  ProviderConfig c;
  c.fixtures_dir = dir;
  c.retry.base_backoff = std::chrono::milliseconds(0);
  return c;
}

// ---- ramp opacity ----------------------------------------------------------

Outcome ramp_suite() {
  Outcome out;
  std::mt19937_64 gen(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double lo = -5.0 + 10.0 * u(gen);
    const double hi = lo + 0.01 + 10.0 * u(gen);
    const double rsv = lo + (hi - lo) * 0.999 * u(gen);
    const double v = lo + (hi - lo) * u(gen);
    const RampOpacity ramp{rsv, lo, hi};
    const double want = v < rsv ? 0.0 : (v - rsv) / (hi - rsv);
    const double got = ramp_opacity(ramp, v);
    worst = std::max(worst, std::abs(got - want));
    if (v < rsv) out.check(got == 0.0, "nonzero below the ramp start");
    out.check(ramp_opacity(ramp, hi) == 1.0, "not exactly 1 at the maximum");
    const double v2 = std::min(hi, v + 0.1 * u(gen));
    out.check(ramp_opacity(ramp, v2) >= got, "not monotone");
    if (!out.pass) break;
  }
  const double elapsed = seconds_since(t0);
  out.check(worst <= kRampTol, "max error " + fmt(worst));
  out.check(elapsed < kRampBudget, "took " + fmt(elapsed) + " s");
  if (out.pass) out.detail = "1e4 pairs, max error " + fmt(worst) + ", " + fmt(elapsed * 1e3) + " ms";
  return out;
}

// ---- isovalue sampling -----------------------------------------------------

Outcome sampling_suite() {
  Outcome out;
  std::mt19937_64 gen(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 100 && out.pass; ++c) {
    const double lo = -100.0 + 200.0 * u(gen);
    const double hi = lo + 1e-3 + 100.0 * u(gen);
    const int m = 1 + static_cast<int>(u(gen) * 30);
    const auto s = sample_isovalues(lo, hi, m);
    out.check(static_cast<int>(s.size()) == m, "wrong count");
    if (!out.pass) break;
    const double d = (hi - lo) / (m + 1);
    const double tol = kSampleTol * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
    for (int i = 0; i < m; ++i) {
      out.check(std::abs(s[static_cast<std::size_t>(i)] - (lo + (i + 1) * d)) <= tol, "sample off the grid");
      out.check(s[static_cast<std::size_t>(i)] > lo && s[static_cast<std::size_t>(i)] < hi, "endpoint included");
    }
  }
  const auto nine = sample_isovalues(0.0, 1.0, 9);
  for (int i = 0; i < 9; ++i) out.check(std::abs(nine[static_cast<std::size_t>(i)] - (i + 1) / 10.0) <= kSampleTol, "M=9 on [0,1]");
  if (out.pass) out.detail = "100 random cases, M=9 on [0,1] gives 0.1..0.9";
  return out;
}

// ---- isovalue fine tuning --------------------------------------------------

// Hand replay of the comparative climb over a fixed script of verdicts.
struct Replay {
  double value;
  int used;
};

Replay replay_climb(double start, double lo, double hi, const std::vector<Judgment>& script) {
  const double span = hi - lo;
  double step = span / 8.0;
  double at = start;
  int sign = +1;
  int used = 0;
  bool progressed = false;
  bool reversed = false;
  for (;;) {
    if (used == 6 || step < span / 64.0) break;
    double next = at + sign * step;
    next = next < lo ? lo : (next > hi ? hi : next);
    bool better = false;
    if (next != at) {
      const Judgment verdict = script[static_cast<std::size_t>(used++)];
      if (verdict == Judgment::kFailed) return {start, used};
      better = verdict == Judgment::kNew;
    }
    if (better) {
      at = next;
      progressed = true;
      continue;
    }
    if (progressed) {
      step /= 2.0;
      continue;
    }
    if (reversed) break;
    sign = -sign;
    reversed = true;
  }
  return {at, used};
}

Outcome ift_suite() {
  Outcome out;
  std::mt19937_64 gen(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const IftConfig params;
  for (int t = 0; t < 50; ++t) {
    const double lo = u(gen);
    const double hi = lo + 0.05 + u(gen);
    // a few transcripts start on a bound to exercise clamping
    const double start = t % 10 == 0 ? hi : (t % 10 == 1 ? lo : lo + (hi - lo) * u(gen));
    std::vector<Judgment> script(6);
    for (auto& j : script) {
      const double r = u(gen);
      j = r < 0.45 ? Judgment::kNew : (r < 0.95 || t < 40 ? Judgment::kPrior : Judgment::kFailed);
    }
    const auto got = hill_climb(start, lo, hi, params,
                                [&](double, double, int i) { return script[static_cast<std::size_t>(i)]; });
    const auto want = replay_climb(start, lo, hi, script);
    out.check(got.value >= lo && got.value <= hi, "transcript " + std::to_string(t) + " left its bounds");
    out.check(got.value == want.value, "transcript " + std::to_string(t) + " differs from the replay");
    out.check(got.judgments == want.used, "transcript " + std::to_string(t) + " judgment count");
  }
  if (out.pass) out.detail = "50 scripted transcripts contained and equal to replay";
  return out;
}

// ---- marching cubes --------------------------------------------------------

Outcome marching_cubes_suite() {
  Outcome out;
  const auto volume = synthetic::sphere_distance(64);
  const auto t0 = Clock::now();
  const auto mesh = extract_isosurface(volume, 20.0);
  const double elapsed = seconds_since(t0);
  out.check(!mesh.empty(), "empty mesh");
  const Vec3 c = volume.centroid();
  double worst = 0.0;
  for (const auto& p : mesh.vertices) worst = std::max(worst, std::abs(norm(p - c) - 20.0));
  out.check(worst <= kRadiusTol, "radius error " + fmt(worst));
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      auto a = t[static_cast<std::size_t>(e)];
      auto b = t[static_cast<std::size_t>((e + 1) % 3)];
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  }
  std::size_t open = 0;
  for (const auto& [_, n] : edges) open += n != 2;
  out.check(open == 0, std::to_string(open) + " edges without degree 2");
  out.check(elapsed < kMarchingCubesBudget, "took " + fmt(elapsed) + " s");
  if (out.pass) {
    out.detail = std::to_string(mesh.triangles.size()) + " triangles, radius error " + fmt(worst) + ", closed, " +
                 fmt(elapsed) + " s";
  }
  return out;
}

// ---- direct volume rendering -----------------------------------------------

double reference_sample(const Volume& v, Vec3 p) {
  const auto& m = v.meta();
  double g[3];
  std::int64_t base[3];
  for (int a = 0; a < 3; ++a) {
    const double n = static_cast<double>(m.dims[static_cast<std::size_t>(a)]);
    g[a] = std::clamp((p[a] - m.origin[static_cast<std::size_t>(a)]) / m.spacing[static_cast<std::size_t>(a)], 0.0, n - 1.0);
    base[a] = std::min<std::int64_t>(static_cast<std::int64_t>(g[a]), static_cast<std::int64_t>(n) - 2);
    g[a] -= static_cast<double>(base[a]);
  }
  double sum = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    std::int64_t idx[3];
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? g[a] : 1.0 - g[a];
      idx[a] = base[a] + bit;
    }
    sum += w * v.at(idx[0], idx[1], idx[2]);
  }
  return sum;
}

// Scalar ray march with the plain under-operator recurrence.
CompositeResult reference_ray(const Volume& v, const TransferFunction& tf, const Camera& cam, int w, int h, int x, int y,
                              const RenderOptions& opt) {
  const Vec3 fwd = normalized(cam.look_at - cam.position);
  const Vec3 right = normalized(cross(fwd, cam.up));
  const Vec3 up = cross(right, fwd);
  const double th = std::tan(cam.vertical_fov * std::numbers::pi / 360.0);
  const double aspect = static_cast<double>(w) / h;
  const Vec3 dir = normalized(fwd + right * ((2.0 * (x + 0.5) / w - 1.0) * th * aspect) + up * ((1.0 - 2.0 * (y + 0.5) / h) * th));
  double enter = 0.0, leave = std::numeric_limits<double>::infinity();
  const Vec3 lo = v.world_min(), hi = v.world_max();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (cam.position[a] < lo[a] || cam.position[a] > hi[a]) return {};
      continue;
    }
    double t0 = (lo[a] - cam.position[a]) / dir[a];
    double t1 = (hi[a] - cam.position[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    enter = std::max(enter, t0);
    leave = std::min(leave, t1);
  }
  CompositeResult acc;
  if (enter > leave) return acc;
  const double ref = v.min_spacing();
  const double step = opt.step_fraction * ref;
  for (std::int64_t k = 0;; ++k) {
    const double t = enter + static_cast<double>(k) * step;
    if (t > leave) break;
    const auto s = tf.evaluate(reference_sample(v, cam.position + dir * t));
    if (s.opacity <= 0.0) continue;
    const double a = s.opacity >= 1.0 ? 1.0 : 1.0 - std::pow(1.0 - s.opacity, step / ref);
    const double remaining = 1.0 - acc.alpha;
    acc.color.r += remaining * a * s.color.r;
    acc.color.g += remaining * a * s.color.g;
    acc.color.b += remaining * a * s.color.b;
    acc.alpha += remaining * a;
    ++acc.samples_used;
    if (acc.alpha >= opt.termination_alpha) break;
  }
  return acc;
}

TransferFunction layered_tf() {
  const auto iso = sample_isovalues(0.0, 1.0, 9);
  std::vector<ControlPoint> points;
  for (std::size_t i = 0; i < iso.size(); ++i) {
    const double f = static_cast<double>(i) / 8.0;
    points.push_back({iso[i], {f, 0.3 + 0.4 * (1.0 - f), 1.0 - f}, i == 0 ? 0.0 : 0.05 + 0.6 * f});
  }
  return TransferFunction::continuous(points);
}

Outcome dvr_suite() {
  Outcome out;
  const auto tf = layered_tf();
  {
    const auto small = synthetic::nested_shells(40);
    const Vec3 c = small.centroid();
    const auto lattice = fibonacci_lattice(32, c, view_sphere_radius(small));
    std::mt19937_64 gen(404);
    std::uniform_int_distribution<int> pick(0, 31), px(0, 63);
    RenderOptions opt;
    opt.threads = 1;
    double worst = 0.0;
    std::size_t mismatched = 0;
    for (int r = 0; r < 1000; ++r) {
      const auto cam = camera_for(lattice[static_cast<std::size_t>(pick(gen))], c);
      const int x = px(gen), y = px(gen);
      const auto got = trace_dvr_pixel(small, tf, cam, 64, 64, x, y, opt);
      const auto want = reference_ray(small, tf, cam, 64, 64, x, y, opt);
      const double e = std::max({std::abs(got.color.r - want.color.r), std::abs(got.color.g - want.color.g),
                                 std::abs(got.color.b - want.color.b), std::abs(got.alpha - want.alpha)});
      worst = std::max(worst, e);
      mismatched += e > kRayTol;
    }
    out.check(mismatched == 0, std::to_string(mismatched) + " rays off the reference, max " + fmt(worst));

    const auto cam = camera_for(lattice[5], c);
    RenderOptions many;
    many.threads = kDvrParallelWorkers;
    out.check(render_dvr(small, tf, cam, 96, 96, opt) == render_dvr(small, tf, cam, 96, 96, many),
              "multi-threaded frame differs");
    if (out.pass) out.detail = "1000 rays max error " + fmt(worst) + ", MT frame identical";
  }

  const auto big = synthetic::nested_shells(256);
  const Vec3 c = big.centroid();
  const auto cam = camera_for(fibonacci_lattice(32, c, view_sphere_radius(big))[3], c);
  RenderOptions serial;
  serial.threads = 1;
  auto t0 = Clock::now();
  const auto one = render_dvr(big, tf, cam, 256, 256, serial);
  const double serial_s = seconds_since(t0);
  RenderOptions parallel;
  parallel.threads = kDvrParallelWorkers;
  t0 = Clock::now();
  const auto eight = render_dvr(big, tf, cam, 256, 256, parallel);
  const double parallel_s = seconds_since(t0);
  out.check(one == eight, "256^3 multi-threaded frame differs");
  out.check(serial_s < kDvrSerialBudget, "256^3 at 256^2 single-threaded took " + fmt(serial_s) + " s");
  const bool parallel_ok = parallel_s < kDvrParallelBudget;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (!parallel_ok) {
    const bool others_ok = out.pass;
    out.check(false, "256^3 at 256^2 with " + std::to_string(kDvrParallelWorkers) + " workers took " + fmt(parallel_s) +
                         " s on " + std::to_string(hw) + " hardware thread(s)");
    out.hardware_bound = others_ok && hw < kDvrParallelWorkers;
  }
  const std::string timing = "; 256^3 at 256^2: " + fmt(serial_s) + " s serial, " + fmt(parallel_s) + " s with " +
                             std::to_string(kDvrParallelWorkers) + " workers";
  if (out.pass) out.detail += timing;
  return out;
}

// ---- view sphere -----------------------------------------------------------

Outcome lattice_suite() {
  Outcome out;
  const Vec3 c{3.0, -2.0, 7.5};
  const double r = 41.0;
  const auto a = fibonacci_lattice(32, c, r);
  out.check(a.size() == 32, "wrong size");
  double worst = 0.0;
  for (const auto& p : a) worst = std::max(worst, std::abs(norm(p.position - c) - r));
  out.check(worst <= kSphereTol * r, "off sphere by " + fmt(worst));
  double min_angle = std::numbers::pi;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double d = std::clamp(dot(a[i].direction, a[j].direction), -1.0, 1.0);
      min_angle = std::min(min_angle, std::acos(d));
    }
  }
  const double bound = 0.6 * std::sqrt(4.0 * std::numbers::pi / 32.0);
  out.check(min_angle >= bound, "min angle " + fmt(min_angle) + " < " + fmt(bound));
  const auto b = fibonacci_lattice(32, c, r);
  bool same = true;
  for (std::size_t i = 0; i < a.size(); ++i) same = same && a[i].position == b[i].position;
  out.check(same, "not deterministic");
  if (out.pass) out.detail = "K=32, min angle " + fmt(min_angle) + " rad (bound " + fmt(bound) + ")";
  return out;
}

Outcome trajectory_suite() {
  Outcome out;
  const Vec3 c{0.0, 0.0, 0.0};
  const double r = 100.0;
  const auto lattice = fibonacci_lattice(32, c, r);
  std::vector<Viewpoint> anchors;
  for (int i : {0, 4, 9, 13, 17, 21, 26, 29, 31}) anchors.push_back(lattice[static_cast<std::size_t>(i)]);
  const auto path = catmull_rom_path(anchors, 120, c, r);
  out.check(path.dense_path.size() == 961, std::to_string(path.dense_path.size()) + " poses");
  if (!out.pass) return out;
  double anchor_err = 0.0, sphere_err = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    anchor_err = std::max(anchor_err, norm(path.dense_path[i * 120].position - anchors[i].position));
  }
  for (const auto& cam : path.dense_path) sphere_err = std::max(sphere_err, std::abs(norm(cam.position - c) - r));
  out.check(anchor_err <= kAnchorTol, "anchor error " + fmt(anchor_err));
  out.check(sphere_err <= kSphereTol * r, "off sphere by " + fmt(sphere_err));
  if (out.pass) out.detail = "9 anchors x 120 -> 961 poses, anchor error " + fmt(anchor_err);
  return out;
}

// ---- knowledge -------------------------------------------------------------

Outcome knowledge_suite() {
  Outcome out;
  std::mt19937_64 gen(505);
  std::uniform_int_distribution<int> letter('a', 'z');
  std::string doc(1800, ' ');
  for (auto& ch : doc) ch = static_cast<char>(letter(gen));
  const auto chunks = chunk_document("doc.md", doc, 1000, 200);
  out.check(chunks.size() == 2, std::to_string(chunks.size()) + " chunks for 1800 chars");
  if (chunks.size() == 2) {
    out.check(chunks[0].text.substr(800) == chunks[1].text.substr(0, 200) && chunks[1].text == doc.substr(800),
              "overlap is not exactly 200 chars");
  }

  // retrieval versus brute force on 1e4 chunks, with deliberate duplicates for ties
  constexpr int kDim = 32;
  std::normal_distribution<float> n01;
  std::vector<Chunk> corpus;
  for (int i = 0; i < 10000; ++i) {
    Chunk ch;
    ch.doc_id = "d" + std::to_string(i % 97) + ".md";
    ch.ordinal = i / 97;
    if (i % 10 == 9) {
      ch.embedding = corpus[static_cast<std::size_t>(i - 9)].embedding;
    } else {
      for (int d = 0; d < kDim; ++d) ch.embedding.push_back(n01(gen));
    }
    ch.text = "chunk " + std::to_string(i);
    corpus.push_back(std::move(ch));
  }
  const auto index = KnowledgeIndex::from_embedded(corpus);
  int bad_queries = 0;
  for (int q = 0; q < 20; ++q) {
    std::vector<float> query;
    if (q % 4 == 0) {
      query = corpus[static_cast<std::size_t>(q * 37)].embedding;
    } else {
      for (int d = 0; d < kDim; ++d) query.push_back(n01(gen));
    }
    double qn = 0.0;
    for (float f : query) qn += double(f) * f;
    qn = std::sqrt(qn);
    struct Hit {
      double score;
      const Chunk* chunk;
    };
    std::vector<Hit> all;
    for (const auto& ch : corpus) {
      double dotp = 0.0, cn = 0.0;
      for (int d = 0; d < kDim; ++d) {
        dotp += double(ch.embedding[static_cast<std::size_t>(d)]) * query[static_cast<std::size_t>(d)];
        cn += double(ch.embedding[static_cast<std::size_t>(d)]) * ch.embedding[static_cast<std::size_t>(d)];
      }
      all.push_back({dotp / (qn * std::sqrt(cn)), &ch});
    }
    std::stable_sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
      if (std::abs(a.score - b.score) > 1e-6) return a.score > b.score;
      return std::tie(a.chunk->doc_id, a.chunk->ordinal) < std::tie(b.chunk->doc_id, b.chunk->ordinal);
    });
    const auto got = index.retrieve_by_vector(query, 10);
    bool ok = got.size() == 10;
    for (std::size_t i = 0; ok && i < got.size(); ++i) {
      ok = got[i].chunk->doc_id == all[i].chunk->doc_id && got[i].chunk->ordinal == all[i].chunk->ordinal &&
           std::abs(got[i].score - all[i].score) < 1e-5;
    }
    bad_queries += !ok;
  }
  out.check(bad_queries == 0, std::to_string(bad_queries) + " of 20 queries differ from brute force");

  TempDir fixtures;
  std::vector<std::string> many;
  for (int i = 0; i < 15; ++i) many.push_back("region " + std::to_string(i));
  sasav::testing::write_file(fixtures / "forager_summary/default.json", json{{"reply", {{"keywords", many}}}}.dump());
  const std::vector<std::string> object = {"chameleon", "reptile"};
  {
    ChatClient client(make_provider(mock_provider(fixtures.path())), mock_provider(fixtures.path()));
    const auto capped = forage(object, nullptr, nullptr, client);
    out.check(capped.roi.keywords.size() == 10, std::to_string(capped.roi.keywords.size()) + " keywords after the cap");
  }
  sasav::testing::write_file(fixtures / "forager_summary/default.json", json{{"reply", "failed"}}.dump());
  {
    ChatClient client(make_provider(mock_provider(fixtures.path())), mock_provider(fixtures.path()));
    const auto fallback = forage(object, nullptr, nullptr, client);
    out.check(fallback.fallback && fallback.roi.texts() == object, "failed summary does not echo the input");
  }
  if (out.pass) out.detail = "2 chunks / 200-char overlap, top-10 equals brute force on 1e4 chunks, cap 10, identity fallback";
  return out;
}

// ---- end-to-end mock runs --------------------------------------------------

RunRequest fixture_request(const std::filesystem::path& input, const Volume& volume, const std::string& scenario,
                           const std::filesystem::path& out) {
  RunRequest r;
  r.input = input;
  r.meta = volume.meta();
  r.out_dir = out;
  merge_config(r.config, json::parse(sasav::testing::read_file(sasav::testing::fixtures_dir() / "configs" / (scenario + ".json"))));
  r.config.provider.fixtures_dir = sasav::testing::fixtures_dir() / "mock" / scenario;
  return r;
}

bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b, std::string& why) {
  const auto files = sasav::testing::list_files(a);
  if (files != sasav::testing::list_files(b)) {
    why = "file lists differ";
    return false;
  }
  for (const auto& f : files) {
    const bool same = f == "run_log.jsonl"
                          ? sasav::testing::log_without_timing(a / f) == sasav::testing::log_without_timing(b / f)
                          : sasav::testing::read_file(a / f) == sasav::testing::read_file(b / f);
    if (!same) {
      why = f + " differs";
      return false;
    }
  }
  return true;
}

Outcome end_to_end_suite(TempDir& work) {
  Outcome out;
  std::string detail;
  const std::vector<std::string> expected = {"final.png", "keywords.json", "profile.json", "run.json", "run_log.jsonl",
                                             "tf.ct", "tf.json", "trajectory.json", "views.json"};
  for (const auto& [scenario, make] : std::vector<std::pair<std::string, std::function<Volume()>>>{
           {"empirical", [] { return synthetic::nested_shells(64); }},
           {"simulated", [] { return synthetic::gaussian_blob(64); }}}) {
    const auto volume = make();
    const auto input = sasav::testing::write_volume(volume, work / scenario);
    std::vector<RunOutcome> runs;
    double slowest = 0.0;
    for (const char* tag : {"first", "second"}) {
      const auto req = fixture_request(input, volume, scenario, work / (scenario + "_" + tag));
      const auto t0 = Clock::now();
      runs.push_back(run_pipeline(req, make_provider(req.config.provider)));
      slowest = std::max(slowest, seconds_since(t0));
    }
    const auto& first = runs[0];
    out.check(first.ok && first.exit_code() == 0, scenario + " run did not finish cleanly: " + first.error);
    if (!first.ok) continue;
    out.check(sasav::testing::list_files(first.dir) == expected, scenario + " artifact set incomplete");
    std::string why;
    out.check(same_tree(runs[0].dir, runs[1].dir, why), scenario + " runs not identical: " + why);
    const int judgments = json::parse(sasav::testing::read_file(first.dir / "tf.json")).value("ift_judgments", 0);
    const auto census = first.census.total_chats();
    out.check(census == 19 + judgments, scenario + " census " + std::to_string(census));
    if (scenario == "simulated") out.check(judgments == 0 && census == 19, "simulated census is not 19");
    out.check(slowest < kEndToEndBudget, scenario + " took " + fmt(slowest) + " s");
    detail += (detail.empty() ? "" : ", ") + scenario + " " + std::to_string(census) + " chats in " + fmt(slowest) + " s";
  }
  if (out.pass) out.detail = detail + ", byte-identical twice";
  return out;
}

Outcome robustness_suite(TempDir& work) {
  Outcome out;
  const auto volume = synthetic::gaussian_blob(48);
  const auto input = sasav::testing::write_volume(volume, work / "adversarial");
  auto req = fixture_request(input, volume, "adversarial", work / "adversarial_run");
  req.config.output_resolution = 128;
  RunOutcome r;
  try {
    r = run_pipeline(req, make_provider(req.config.provider));
  } catch (const std::exception& e) {
    out.check(false, std::string("threw: ") + e.what());
    return out;
  }
  out.check(r.ok, "run aborted: " + r.error);
  out.check(r.exit_code() == 2, "exit code " + std::to_string(r.exit_code()));
  if (!r.ok) return out;
  const auto profile = json::parse(sasav::testing::read_file(r.dir / "profile.json"));
  for (const auto& s : profile.at("rsv_scores")) {
    if (!s.is_null()) out.check(s.get<int>() >= 1 && s.get<int>() <= 10, "score out of range kept");
  }
  const int best = profile.at("best_initial_view").get<int>();
  out.check(best >= 0 && best < 6, "best view out of range");
  const auto views = json::parse(sasav::testing::read_file(r.dir / "views.json"));
  const auto anchors = views.at("selection").at("anchors").get<std::vector<int>>();
  const auto avoid = views.at("selection").at("avoid").get<std::vector<int>>();
  for (int a : anchors) {
    out.check(a >= 0 && a < 32, "anchor out of range");
    out.check(std::find(avoid.begin(), avoid.end(), a) == avoid.end(), "anchor also avoided");
  }
  out.check(std::filesystem::exists(r.dir / "final.png"), "no final image");
  if (out.pass) out.detail = "exit 2, " + std::to_string(r.warnings.size()) + " repairs/fallbacks recorded";
  return out;
}

Outcome export_suite(TempDir& work) {
  Outcome out;
  const auto run_dir = work / "empirical_first";
  if (!std::filesystem::exists(run_dir / "tf.json")) {
    out.check(false, "no empirical run to export from");
    return out;
  }
  const auto saved = tf_from_json(json::parse(sasav::testing::read_file(run_dir / "tf.json")));
  const auto from_ct = import_ct(sasav::testing::read_file(run_dir / "tf.ct"));
  const auto from_json_doc = tf_from_json(json::parse(export_tf(saved, TfFormat::kStructured)));
  double worst = 0.0;
  for (const auto* other : {&from_ct, &from_json_doc}) {
    out.check(other->mode() == saved.mode() && other->control_points().size() == saved.control_points().size(),
              "re-imported shape differs");
    if (!out.pass) return out;
    for (std::size_t i = 0; i < saved.control_points().size(); ++i) {
      const auto& a = saved.control_points()[i];
      const auto& b = other->control_points()[i];
      worst = std::max({worst, std::abs(a.value - b.value), std::abs(a.opacity - b.opacity), std::abs(a.color.r - b.color.r),
                        std::abs(a.color.g - b.color.g), std::abs(a.color.b - b.color.b)});
    }
    worst = std::max(worst, std::abs(other->width() - saved.width()));
  }
  out.check(worst <= kRoundTripTol, "round-trip error " + fmt(worst));

  const auto image = work / "rerender.png";
  const int status = sasav::testing::run_cli("render --run \"" + run_dir.string() + "\" --out \"" + image.string() + "\"");
  out.check(status == 0, "render exited " + std::to_string(status));
  if (status == 0) {
    out.check(sasav::testing::read_file(image) == sasav::testing::read_file(run_dir / "final.png"),
              "re-render differs from final.png");
  }
  if (out.pass) out.detail = "tf.ct/tf.json error " + fmt(worst) + ", render reproduces final.png";
  return out;
}

}  // namespace

int main() {
  TempDir work("sasav-acceptance");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"ramp opacity closed form", ramp_suite},
      {"uniform isovalue sampling", sampling_suite},
      {"fine-tuning containment and replay", ift_suite},
      {"marching cubes sphere", marching_cubes_suite},
      {"volume rendering oracle", dvr_suite},
      {"fibonacci lattice", lattice_suite},
      {"catmull-rom trajectory", trajectory_suite},
      {"knowledge chunking, retrieval, foraging", knowledge_suite},
      {"end-to-end mock determinism", [&] { return end_to_end_suite(work); }},
      {"schema robustness", [&] { return robustness_suite(work); }},
      {"export round-trips", [&] { return export_suite(work); }},
  };
  int failed = 0, hardware_bound = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  " << o.detail << std::endl;
    if (o.pass) continue;
    if (o.hardware_bound) {
      ++hardware_bound;
    } else {
      ++failed;
    }
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failed + hardware_bound) << "/" << criteria.size() << " passed";
  if (hardware_bound > 0) {
    std::cout << "; " << hardware_bound << " failed only on a multi-worker budget this host cannot run in parallel"
              << " (not counted in the exit status)";
  }
  std::cout << std::endl;
  return failed == 0 ? 0 : 1;
}
