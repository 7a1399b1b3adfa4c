#include "sasav/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "sasav/error.hpp"
#include "sasav/parallel.hpp"
#include "sasav/prompts.hpp"

namespace sasav {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string join(std::span<const std::string> items, std::string_view sep = ", ") {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

std::vector<std::string> roi_texts(const RegionsOfInterest& roi) {
  auto texts = roi.texts();
  if (texts.empty()) texts.push_back("none identified");
  return texts;
}

struct Asked {
  std::optional<nlohmann::json> parsed;
  std::string problem;  // empty on success
};

// A ParseFailure after the re-ask is handled like a Failed reply by callers;
// other errors abort the stage.
Asked ask(ChatClient& client, const ChatRequest& request) {
  try {
    auto reply = client.chat(request);
    if (reply.failed()) return {std::nullopt, "reply was 'failed'"};
    return {std::move(reply.parsed), {}};
  } catch (const Error& e) {
    if (e.code() != Errc::kParseFailure) throw;
    return {std::nullopt, std::string("unparseable reply: ") + e.what()};
  }
}

ChatRequest make_request(RoleTag role, const RenderedPrompt& prompt, std::vector<Image> images, std::string schema,
                         std::string fixture_key, const RunConfig& config) {
  ChatRequest r;
  r.role = role;
  r.system_prompt = prompt.system;
  r.user_prompt = prompt.user;
  r.images = std::move(images);
  r.temperature = config.temperature_for(role);
  r.schema_id = std::move(schema);
  r.fixture_key = std::move(fixture_key);
  return r;
}

unsigned chat_fanout(const PipelineContext& ctx) {
  return static_cast<unsigned>(std::max(1, ctx.client.config().max_concurrency));
}

std::vector<Image> render_xray_views(const Volume& volume, double rsv, int resolution, const RenderOptions& options) {
  const auto tf = grayscale_xray_tf({rsv, volume.v_min(), volume.v_max()});
  std::vector<Image> out;
  for (const auto& camera : orthogonal_cameras(volume)) out.push_back(render_dvr(volume, tf, camera, resolution, resolution, options));
  return out;
}

std::vector<Image> render_surface_views(const Volume& volume, double isovalue, int resolution, const RenderOptions& options) {
  const auto mesh = extract_isosurface(volume, isovalue, options.threads);
  std::vector<Image> out;
  for (const auto& camera : four_view_cameras(volume)) {
    out.push_back(render_mesh(mesh, {1.0, 1.0, 1.0}, camera, resolution, resolution, options));
  }
  return out;
}

Rgb fallback_color(double t) {
  static constexpr Rgb kStops[] = {{0.23, 0.30, 0.75}, {0.25, 0.70, 0.85}, {0.35, 0.75, 0.35}, {0.95, 0.80, 0.25}, {0.85, 0.20, 0.15}};
  const double x = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(x));
  const double f = x - i;
  const auto& a = kStops[i];
  const auto& b = kStops[i + 1];
  return {a.r + f * (b.r - a.r), a.g + f * (b.g - a.g), a.b + f * (b.b - a.b)};
}

// In continuous mode the lowest entry also covers everything below it, which
// is mostly empty space, so it stays transparent.
void assign_fallback_mapping(IsovalueRecord& r, std::size_t index, std::size_t count, bool continuous) {
  const double t = count > 1 ? static_cast<double>(index) / static_cast<double>(count - 1) : 0.5;
  r.assigned_color = fallback_color(t);
  r.assigned_opacity = std::clamp(r.scientific_salience / 10.0 * (11 - r.occlusion_risk) / 10.0, 0.05, 1.0);
  if (continuous && index == 0 && count > 1) r.assigned_opacity = 0.0;
}

}  // namespace

std::string_view to_string(ObjectType type) { return type == ObjectType::kEmpirical ? "empirical" : "simulated"; }

ObjectType object_type_from_string(std::string_view name) {
  if (name == "empirical") return ObjectType::kEmpirical;
  if (name == "simulated") return ObjectType::kSimulated;
  throw Error(Errc::kParseFailure, "unknown object type '" + std::string(name) + "'");
}

bool repair_view_selection(ViewSelection& s, int k) {
  bool changed = false;
  const auto clean = [&](std::vector<int>& list) {
    std::vector<int> out;
    std::set<int> seen;
    for (int i : list) {
      if (i < 0 || i >= k || !seen.insert(i).second) {
        changed = true;
        continue;
      }
      out.push_back(i);
    }
    list = std::move(out);
  };
  clean(s.ranked);
  clean(s.anchors);
  clean(s.avoid);
  const std::set<int> avoid(s.avoid.begin(), s.avoid.end());
  const auto before = s.anchors.size();
  std::erase_if(s.anchors, [&](int i) { return avoid.contains(i); });
  changed = changed || s.anchors.size() != before;
  return changed;
}

ViewSelection fallback_view_selection(int k) {
  ViewSelection s;
  for (int i = 0; i < k; ++i) s.ranked.push_back(i);
  const int count = std::min(8, k);
  for (int i = 0; i < count; ++i) s.anchors.push_back(i * k / count);
  return s;
}

RenderOptions PipelineContext::render_options() const {
  RenderOptions o;
  if (config.render_threads > 0) o.threads = static_cast<unsigned>(config.render_threads);
  return o;
}

void PipelineContext::degrade(std::string_view stage, const std::string& message) {
  degraded = true;
  warnings.push_back(std::string(stage) + ": " + message);
  if (log) log->emit(stage, "fallback", {{"message", message}});
}

void PipelineContext::note(std::string_view stage, std::string_view event, nlohmann::json detail) {
  if (log) log->emit(stage, event, std::move(detail));
}

DataProfile profile_and_recognize(const Volume& volume, PipelineContext& ctx) {
  const auto& cfg = ctx.config;
  const auto options = ctx.render_options();
  DataProfile profile;
  profile.rsvs = sample_rsvs(volume.v_min(), volume.v_max(), cfg.n_rsv);
  const std::size_t n = profile.rsvs.size();

  std::vector<std::vector<Image>> views(n);
  std::vector<Asked> replies(n);
  parallel_for(n, chat_fanout(ctx), [&](std::size_t i) {
    views[i] = render_xray_views(volume, profile.rsvs[i], cfg.intermediate_resolution, options);
    const auto prompt = render_prompt("evaluator", {{"view_count", "6"}, {"rsv", num(profile.rsvs[i])}});
    replies[i] = ask(ctx.client, make_request(RoleTag::kEvaluator, prompt, views[i], "evaluator_score",
                                              "rsv_" + std::to_string(i), cfg));
  });

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < n; ++i) {
    if (replies[i].parsed) {
      const int score = replies[i].parsed->at("score").get<int>();
      profile.rsv_scores.push_back(score);
      if (!best || score > *profile.rsv_scores[*best]) best = i;
    } else {
      profile.rsv_scores.push_back(std::nullopt);
      ctx.degrade("profile", "evaluator for rsv " + num(profile.rsvs[i]) + ": " + replies[i].problem);
    }
  }
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& s : profile.rsv_scores) scores.push_back(s ? nlohmann::json(*s) : nlohmann::json());
  ctx.note("profile", "rsv_scores", {{"rsvs", profile.rsvs}, {"scores", scores}});
  if (!best) throw Error(Errc::kAllEvaluationsFailed, "every evaluator reply failed");
  profile.best_rsv = profile.rsvs[*best];
  profile.best_rsv_score = *profile.rsv_scores[*best];
  const auto& winning = views[*best];

  const auto recognize = ask(ctx.client, make_request(RoleTag::kRecognizer, render_prompt("recognizer", {{"view_count", "6"}}),
                                                      winning, "recognition", "default", cfg));
  if (recognize.parsed) {
    profile.object_keywords = dedupe_keywords(recognize.parsed->at("keywords").get<std::vector<std::string>>());
    profile.object_type = object_type_from_string(recognize.parsed->at("object_type").get<std::string>());
  }
  if (profile.object_keywords.empty()) {
    profile.object_keywords = {std::string(kUnknownObject)};
    profile.object_type = ObjectType::kSimulated;
    ctx.degrade("profile", "recognizer: " + (recognize.problem.empty() ? "no keywords" : recognize.problem));
  }

  const auto pick = ask(ctx.client, make_request(RoleTag::kEvaluator, render_prompt("evaluator_best_view", {{"view_count", "6"}}),
                                                 winning, "best_view", "best_view", cfg));
  if (pick.parsed) {
    profile.best_initial_view = pick.parsed->at("best_view").get<int>();
  } else {
    const auto& first = replies[*best].parsed;
    if (first && first->contains("view_scores") && !first->at("view_scores").empty()) {
      const auto vs = first->at("view_scores").get<std::vector<int>>();
      profile.best_initial_view = static_cast<int>(std::max_element(vs.begin(), vs.end()) - vs.begin()) % 6;
    }
    ctx.degrade("profile", "best view pick: " + pick.problem);
  }
  ctx.note("profile", "recognized",
           {{"object_keywords", profile.object_keywords},
            {"object_type", to_string(profile.object_type)},
            {"best_rsv", profile.best_rsv},
            {"best_initial_view", profile.best_initial_view}});
  return profile;
}

ForageResult run_forage(const DataProfile& profile, PipelineContext& ctx) {
  std::optional<KnowledgeIndex> index;
  if (ctx.config.kb_path) index = KnowledgeIndex::load(*ctx.config.kb_path);
  std::unique_ptr<WebSearchAdapter> adapter;
  if (ctx.config.web_adapter) adapter = make_search_adapter(*ctx.config.web_adapter);
  ForageOptions options;
  options.temperature = ctx.config.temperature_for(RoleTag::kForagerSummary);
  auto result = forage(profile.object_keywords, index ? &*index : nullptr, adapter.get(), ctx.client, options);
  for (const auto& w : result.warnings) ctx.note("forage", "warning", {{"message", w}});
  if (result.fallback) ctx.degrade("forage", "summarizer gave no keywords; using object keywords");
  ctx.note("forage", "keywords", {{"keywords", result.roi.texts()}});
  return result;
}

HillClimbResult hill_climb(double start, double lower, double upper, const IftConfig& params, const Judge& judge) {
  HillClimbResult out;
  out.value = start;
  const double span = upper - lower;
  if (!(span > 0.0)) return out;
  double step = span / params.initial_step_divisor;
  const double min_step = span / params.min_step_divisor;
  double current = start;
  double direction = 1.0;
  bool moved = false;
  bool turned = false;
  while (out.judgments < params.max_judgments && step >= min_step) {
    const double candidate = std::clamp(current + direction * step, lower, upper);
    bool won = false;
    if (candidate != current) {
      const Judgment j = judge(current, candidate, out.judgments);
      ++out.judgments;
      out.transcript.push_back({current, candidate, j});
      if (j == Judgment::kFailed) {
        out.value = start;
        out.judge_failed = true;
        return out;
      }
      won = j == Judgment::kNew;
    }
    if (won) {
      current = candidate;
      moved = true;
    } else if (!moved) {
      if (turned) break;
      direction = -direction;
      turned = true;
    } else {
      step *= 0.5;
    }
  }
  out.value = std::clamp(current, lower, upper);
  return out;
}

std::pair<double, double> neighbor_bounds(std::span<const double> isovalues, std::size_t i, double v_min, double v_max) {
  const double lo = i == 0 ? v_min : isovalues[i - 1];
  const double hi = i + 1 >= isovalues.size() ? v_max : isovalues[i + 1];
  return {lo, hi};
}

HillClimbResult fine_tune_isovalue(const Volume& volume, const IsovalueRecord& record, std::size_t index,
                                   std::pair<double, double> neighbors, const DataProfile& profile,
                                   PipelineContext& ctx) {
  const auto options = ctx.render_options();
  const int res = ctx.config.intermediate_resolution;
  std::map<double, std::vector<Image>> cache;
  const auto views_at = [&](double v) -> const std::vector<Image>& {
    auto it = cache.find(v);
    if (it == cache.end()) it = cache.emplace(v, render_surface_views(volume, v, res, options)).first;
    return it->second;
  };
  const auto judge = [&](double current, double candidate, int n) {
    std::vector<Image> images = views_at(current);
    const auto& next = views_at(candidate);
    images.insert(images.end(), next.begin(), next.end());
    const auto prompt = render_prompt("ift_judge", {{"object_keywords", join(profile.object_keywords)},
                                                    {"shape_summary", record.shape_summary},
                                                    {"half_count", "4"},
                                                    {"prior", num(current)},
                                                    {"candidate", num(candidate)}});
    const auto reply = ask(ctx.client, make_request(RoleTag::kIftJudge, prompt, std::move(images), "ift_compare",
                                                    "iso_" + std::to_string(index) + "_j" + std::to_string(n), ctx.config));
    if (!reply.parsed) return Judgment::kFailed;
    return reply.parsed->at("better").get<std::string>() == "new" ? Judgment::kNew : Judgment::kPrior;
  };
  return hill_climb(record.isovalue, neighbors.first, neighbors.second, ctx.config.ift, judge);
}

TfSuggestion suggest_tf(const Volume& volume, const DataProfile& profile, const RegionsOfInterest& roi,
                        PipelineContext& ctx) {
  const auto& cfg = ctx.config;
  const auto options = ctx.render_options();
  const bool label = volume.meta().value_kind == ValueKind::kLabel;
  const auto isovalues = label ? label_isovalues(volume) : sample_isovalues(volume.v_min(), volume.v_max(), cfg.m_isovalues);
  if (isovalues.empty()) throw Error(Errc::kEmptyRecords, "volume has no isovalues to analyze");
  const std::size_t n = isovalues.size();
  const auto keywords = join(profile.object_keywords);
  const auto roi_list = roi_texts(roi);

  TfSuggestion out;
  out.records.resize(n);
  std::vector<std::string> problems(n);
  parallel_for(n, chat_fanout(ctx), [&](std::size_t i) {
    auto images = render_surface_views(volume, isovalues[i], cfg.intermediate_resolution, options);
    const auto prompt = render_prompt("semantic_analyzer", {{"object_keywords", keywords},
                                                            {"object_type", std::string(to_string(profile.object_type))},
                                                            {"roi_keywords", join(roi_list)},
                                                            {"view_count", "4"},
                                                            {"isovalue", num(isovalues[i])}});
    const auto reply = ask(ctx.client, make_request(RoleTag::kSemanticAnalyzer, prompt, std::move(images), "semantic_analysis",
                                                    "iso_" + std::to_string(i), cfg));
    auto& r = out.records[i];
    r.isovalue = isovalues[i];
    if (reply.parsed) {
      const auto& p = *reply.parsed;
      r.geometric_role = p.at("geometric_role").get<std::string>();
      r.scientific_salience = p.at("scientific_salience").get<int>();
      r.occlusion_risk = p.at("occlusion_risk").get<int>();
      r.confidence = p.at("confidence").get<int>();
      r.shape_summary = p.at("shape_summary").get<std::string>();
      r.explanation = p.at("explanation").get<std::string>();
    } else {
      r.confidence = 1;
      r.shape_summary = "failed";
      problems[i] = reply.problem;
    }
  });
  std::stable_sort(out.records.begin(), out.records.end(),
                   [](const IsovalueRecord& a, const IsovalueRecord& b) { return a.isovalue < b.isovalue; });
  for (std::size_t i = 0; i < n; ++i) {
    if (!problems[i].empty()) ctx.degrade("tf", "semantic analyzer for isovalue " + num(isovalues[i]) + ": " + problems[i]);
  }
  ctx.note("tf", "analyzed", {{"isovalues", isovalues}, {"chats", n}});

  std::string listing;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = out.records[i];
    listing += std::to_string(i) + ". isovalue " + num(r.isovalue) + ", role: " + r.geometric_role + ", salience " +
               std::to_string(r.scientific_salience) + ", occlusion risk " + std::to_string(r.occlusion_risk) +
               ", confidence " + std::to_string(r.confidence) + ", shape: " + r.shape_summary + "\n";
  }
  const auto prompt = render_prompt("tf_designer", {{"object_keywords", keywords},
                                                    {"object_type", std::string(to_string(profile.object_type))},
                                                    {"roi_keywords", join(roi_list)},
                                                    {"records", listing}});
  const auto design = ask(ctx.client, make_request(RoleTag::kTfDesigner, prompt, {}, "tf_design", "default", cfg));
  std::vector<bool> mapped(n, false);
  if (design.parsed) {
    for (const auto& m : design.parsed->at("mappings")) {
      const auto i = m.at("isovalue_index").get<std::size_t>();
      if (i >= n || mapped[i]) continue;
      const auto c = m.at("color").get<std::vector<double>>();
      out.records[i].assigned_color = {c[0], c[1], c[2]};
      out.records[i].assigned_opacity = m.at("opacity").get<double>();
      mapped[i] = true;
    }
    const auto missing = static_cast<std::size_t>(std::count(mapped.begin(), mapped.end(), false));
    if (missing > 0) ctx.degrade("tf", "designer left " + std::to_string(missing) + " isovalue(s) unmapped; using defaults");
  } else {
    ctx.degrade("tf", "tf designer: " + design.problem + "; using default color map");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!mapped[i]) assign_fallback_mapping(out.records[i], i, n, profile.object_type == ObjectType::kSimulated);
  }

  if (profile.object_type == ObjectType::kSimulated) {
    out.tf = build_continuous_tf(out.records);
  } else {
    std::vector<double> rejected;
    for (auto& r : out.records) {
      if (r.confidence < cfg.confidence_threshold) {
        r.accepted = false;
        r.assigned_opacity = 0.0;
        rejected.push_back(r.isovalue);
      }
    }
    ctx.note("tf", "rejected", {{"isovalues", rejected}, {"threshold", cfg.confidence_threshold}});

    if (cfg.ift.enabled && !label) {
      std::vector<std::size_t> tuned;
      for (std::size_t i = 0; i < n; ++i) {
        if (out.records[i].accepted) tuned.push_back(i);
      }
      std::vector<HillClimbResult> results(tuned.size());
      parallel_for(tuned.size(), chat_fanout(ctx), [&](std::size_t t) {
        const auto i = tuned[t];
        results[t] = fine_tune_isovalue(volume, out.records[i], i,
                                        neighbor_bounds(isovalues, i, volume.v_min(), volume.v_max()), profile, ctx);
      });
      for (std::size_t t = 0; t < tuned.size(); ++t) {
        auto& r = out.records[tuned[t]];
        r.tuned_isovalue = results[t].value;
        out.ift_judgments += results[t].judgments;
        if (results[t].judge_failed) ctx.degrade("tf", "fine-tuning judge failed for isovalue " + num(r.isovalue));
        ctx.note("tf", "fine_tuned", {{"isovalue", r.isovalue}, {"tuned", results[t].value}, {"judgments", results[t].judgments}});
      }
    }
    double width = default_band_width(volume.v_min(), volume.v_max(), cfg.m_isovalues);
    if (label && n > 1) {
      double gap = isovalues[1] - isovalues[0];
      for (std::size_t i = 2; i < n; ++i) gap = std::min(gap, isovalues[i] - isovalues[i - 1]);
      width = gap / 4.0;
    } else if (label) {
      width = (volume.v_max() - volume.v_min()) / 8.0;
    }
    if (!(width > 0.0)) width = 1e-3;
    out.tf = build_discrete_tf(out.records, width);
    if (out.tf.control_points().empty()) ctx.degrade("tf", "every isovalue was rejected; final image is empty");
  }
  ctx.note("tf", "designed", {{"mode", out.tf.mode() == TfMode::kDiscrete ? "discrete" : "continuous"},
                              {"control_points", out.tf.control_points().size()}});
  return out;
}

SceneRenderer::SceneRenderer(const Volume& volume, TransferFunction tf, RenderOptions options)
    : volume_(&volume), tf_(std::move(tf)), options_(options) {
  if (tf_.mode() == TfMode::kDiscrete) {
    for (const auto& p : tf_.control_points()) meshes_.push_back(extract_isosurface(volume, p.value, options_.threads));
  }
}

Image SceneRenderer::render(const Camera& camera, int width, int height) const {
  if (tf_.mode() == TfMode::kContinuous) return render_dvr(*volume_, tf_, camera, width, height, options_);
  std::vector<MeshLayer> layers;
  const auto points = tf_.control_points();
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].opacity > 0.0 && !meshes_[i].empty()) layers.push_back({&meshes_[i], points[i].color, points[i].opacity});
  }
  return render_layers(layers, camera, width, height, options_);
}

ViewPlan select_views(const Volume& volume, const SceneRenderer& renderer, const DataProfile& profile,
                      const RegionsOfInterest& roi, PipelineContext& ctx) {
  const auto& cfg = ctx.config;
  ViewPlan plan;
  plan.center = volume.centroid();
  plan.radius = view_sphere_radius(volume);
  plan.lattice = fibonacci_lattice(cfg.k_viewpoints, plan.center, plan.radius);
  const std::size_t k = plan.lattice.size();

  std::vector<Image> images(k);
  for (std::size_t i = 0; i < k; ++i) {
    images[i] = renderer.render(camera_for(plan.lattice[i], plan.center), cfg.intermediate_resolution,
                                cfg.intermediate_resolution);
  }
  const auto prompt = render_prompt("view_selector", {{"object_keywords", join(profile.object_keywords)},
                                                      {"roi_keywords", join(roi_texts(roi))},
                                                      {"k", std::to_string(k)},
                                                      {"k_last", std::to_string(k - 1)}});
  const auto reply = ask(ctx.client, make_request(RoleTag::kViewSelector, prompt, std::move(images), "view_selection", "default", cfg));
  const int kk = static_cast<int>(k);
  if (reply.parsed) {
    plan.selection.ranked = reply.parsed->at("ranked").get<std::vector<int>>();
    plan.selection.anchors = reply.parsed->at("anchors").get<std::vector<int>>();
    plan.selection.avoid = reply.parsed->at("avoid").get<std::vector<int>>();
    if (repair_view_selection(plan.selection, kk)) ctx.degrade("views", "view selection repaired");
    if (plan.selection.anchors.size() < 2) {
      ctx.degrade("views", "fewer than two usable anchors; using evenly strided viewpoints");
      plan.selection = fallback_view_selection(kk);
      plan.fallback = true;
    }
  } else {
    ctx.degrade("views", "view selector: " + reply.problem + "; using evenly strided viewpoints");
    plan.selection = fallback_view_selection(kk);
    plan.fallback = true;
  }
  if (plan.selection.ranked.empty()) plan.selection.ranked.push_back(plan.selection.anchors.front());

  std::vector<Viewpoint> anchors;
  for (int i : plan.selection.anchors) anchors.push_back(plan.lattice[static_cast<std::size_t>(i)]);
  plan.trajectory = catmull_rom_path(anchors, cfg.samples_per_segment, plan.center, plan.radius, cfg.closed_trajectory);
  ctx.note("views", "selected", {{"ranked", plan.selection.ranked},
                                 {"anchors", plan.selection.anchors},
                                 {"avoid", plan.selection.avoid},
                                 {"poses", plan.trajectory.dense_path.size()}});
  return plan;
}

Volume prepare_volume(const std::filesystem::path& input, const VolumeMeta& meta, int downsample_target) {
  return normalize(downsample(load_raw(input, meta), downsample_target));
}

}  // namespace sasav
