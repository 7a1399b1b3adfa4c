#include <cstdio>
#include <fstream>

#include "sasav/error.hpp"
#include "sasav/pipeline.hpp"

namespace sasav {

namespace {

constexpr int kSchemaVersion = 1;

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error(Errc::kIoFailure, "cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoFailure, "cannot open " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::kIoFailure, path.string() + " is not valid JSON");
  return doc;
}

void write_png_atomic(const std::filesystem::path& path, const Image& image) {
  const auto tmp = path.string() + ".tmp";
  write_png(tmp, image);
  std::filesystem::rename(tmp, path);
}

}  // namespace

// ---- run log ---------------------------------------------------------------

RunLog::RunLog(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    auto doc = nlohmann::json::parse(line, nullptr, false);
    if (!doc.is_discarded() && doc.contains("seq")) next_seq_ = doc["seq"].get<std::int64_t>() + 1;
  }
}

void RunLog::emit(std::string_view stage, std::string_view event, nlohmann::json detail) {
  Listener listener;
  nlohmann::json doc;
  {
    std::lock_guard lock(mutex_);
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_);
    doc = {{"seq", next_seq_++}, {"stage", stage}, {"event", event}, {"detail", std::move(detail)}, {"wall_ms", elapsed.count()}};
    events_.push_back(doc);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app | std::ios::binary);
      out << doc.dump() << '\n';
    }
    listener = listener_;
  }
  if (listener) listener(doc);
}

void RunLog::set_listener(Listener listener) {
  std::lock_guard lock(mutex_);
  listener_ = std::move(listener);
}

std::vector<nlohmann::json> RunLog::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

// ---- stage documents -------------------------------------------------------

nlohmann::json profile_to_json(const DataProfile& p) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& s : p.rsv_scores) scores.push_back(s ? nlohmann::json(*s) : nlohmann::json());
  return {{"schema_version", kSchemaVersion},
          {"rsvs", p.rsvs},
          {"rsv_scores", scores},
          {"object_keywords", p.object_keywords},
          {"object_type", to_string(p.object_type)},
          {"best_rsv", p.best_rsv},
          {"best_rsv_score", p.best_rsv_score},
          {"best_initial_view", p.best_initial_view}};
}

DataProfile profile_from_json(const nlohmann::json& doc) {
  DataProfile p;
  p.rsvs = doc.at("rsvs").get<std::vector<double>>();
  for (const auto& s : doc.at("rsv_scores")) p.rsv_scores.push_back(s.is_null() ? std::nullopt : std::optional<int>(s.get<int>()));
  p.object_keywords = doc.at("object_keywords").get<std::vector<std::string>>();
  p.object_type = object_type_from_string(doc.at("object_type").get<std::string>());
  p.best_rsv = doc.at("best_rsv").get<double>();
  p.best_rsv_score = doc.at("best_rsv_score").get<int>();
  p.best_initial_view = doc.at("best_initial_view").get<int>();
  return p;
}

nlohmann::json suggestion_to_json(const TfSuggestion& s) {
  auto doc = tf_to_json(s.tf);
  doc["schema_version"] = kSchemaVersion;
  doc["records"] = s.records;
  doc["ift_judgments"] = s.ift_judgments;
  return doc;
}

TfSuggestion suggestion_from_json(const nlohmann::json& doc) {
  TfSuggestion s;
  s.tf = tf_from_json(doc);
  s.records = doc.at("records").get<std::vector<IsovalueRecord>>();
  s.ift_judgments = doc.value("ift_judgments", 0);
  return s;
}

nlohmann::json views_to_json(const ViewPlan& plan) {
  return {{"schema_version", kSchemaVersion},
          {"k", plan.lattice.size()},
          {"center", to_array(plan.center)},
          {"radius", plan.radius},
          {"vertical_fov", kViewSphereFov},
          {"lattice", plan.lattice},
          {"selection", {{"ranked", plan.selection.ranked}, {"anchors", plan.selection.anchors}, {"avoid", plan.selection.avoid}}},
          {"fallback", plan.fallback},
          {"final_view", plan.final_view()},
          {"final_camera", camera_for(plan.lattice.at(static_cast<std::size_t>(plan.final_view())), plan.center)}};
}

nlohmann::json trajectory_to_json(const ViewPlan& plan) {
  return {{"schema_version", kSchemaVersion},
          {"anchors", plan.selection.anchors},
          {"samples_per_segment", plan.trajectory.samples_per_segment},
          {"closed", plan.trajectory.closed},
          {"poses", plan.trajectory.dense_path}};
}

ViewPlan view_plan_from_json(const nlohmann::json& views, const nlohmann::json& trajectory) {
  ViewPlan plan;
  plan.center = from_array(views.at("center").get<std::array<double, 3>>());
  plan.radius = views.at("radius").get<double>();
  plan.lattice = views.at("lattice").get<std::vector<Viewpoint>>();
  const auto& sel = views.at("selection");
  plan.selection = {sel.at("ranked").get<std::vector<int>>(), sel.at("anchors").get<std::vector<int>>(),
                    sel.at("avoid").get<std::vector<int>>()};
  plan.fallback = views.value("fallback", false);
  for (int i : plan.selection.anchors) plan.trajectory.anchors.push_back(plan.lattice.at(static_cast<std::size_t>(i)));
  plan.trajectory.dense_path = trajectory.at("poses").get<std::vector<Camera>>();
  plan.trajectory.samples_per_segment = trajectory.at("samples_per_segment").get<int>();
  plan.trajectory.closed = trajectory.at("closed").get<bool>();
  return plan;
}

// ---- run -------------------------------------------------------------------

RunOutcome run_pipeline(const RunRequest& request, std::shared_ptr<Provider> provider, const RunObserver& observer) {
  namespace fs = std::filesystem;
  RunOutcome outcome;
  outcome.dir = request.out_dir;
  const auto& cfg = request.config;
  cfg.validate();
  fs::create_directories(request.out_dir);
  const auto path = [&](const char* name) { return request.out_dir / name; };

  if (!request.resume) {
    for (const char* stale : {"run_log.jsonl", "failure.json", "profile.json", "keywords.json", "tf.json", "tf.ct",
                              "views.json", "trajectory.json", "final.png"}) {
      fs::remove(path(stale));
    }
    fs::remove_all(path("frames"));
  }
  write_json(path("run.json"), {{"schema_version", kSchemaVersion},
                                {"input", fs::absolute(request.input).lexically_normal().string()},
                                {"meta", meta_to_json(request.meta)},
                                {"config", config_to_json(cfg)}});

  RunLog log(path("run_log.jsonl"));
  if (observer.on_event) log.set_listener(observer.on_event);
  ChatClient client(std::move(provider), cfg.provider);
  PipelineContext ctx{client, cfg, &log, {}, false};
  const auto have = [&](const char* name) { return request.resume && fs::exists(path(name)); };

  std::string stage = "load";
  const auto begin = [&](std::string_view name) {
    stage = std::string(name);
    if (observer.on_stage) observer.on_stage(name);
    log.emit(name, "start");
  };
  try {
    begin("load");
    const Volume volume = prepare_volume(request.input, request.meta, cfg.downsample_target);
    log.emit("load", "done", {{"dims", volume.meta().dims},
                              {"value_kind", volume.meta().value_kind == ValueKind::kLabel ? "label" : "continuous"}});
    if (!(volume.v_max() > volume.v_min())) throw Error(Errc::kEmptyContent, "volume is constant; nothing to visualize");

    begin("profile");
    DataProfile profile;
    if (have("profile.json")) {
      profile = profile_from_json(read_json(path("profile.json")));
      log.emit("profile", "resumed");
    } else {
      profile = profile_and_recognize(volume, ctx);
      write_json(path("profile.json"), profile_to_json(profile));
    }

    begin("forage");
    RegionsOfInterest roi;
    if (have("keywords.json")) {
      roi = roi_from_json(read_json(path("keywords.json")).at("regions_of_interest"));
      log.emit("forage", "resumed");
    } else {
      const auto foraged = run_forage(profile, ctx);
      roi = foraged.roi;
      write_json(path("keywords.json"), {{"schema_version", kSchemaVersion},
                                         {"object_keywords", profile.object_keywords},
                                         {"regions_of_interest", roi_to_json(roi)},
                                         {"fallback", foraged.fallback}});
    }

    begin("tf");
    TfSuggestion suggestion;
    if (have("tf.json")) {
      suggestion = suggestion_from_json(read_json(path("tf.json")));
      log.emit("tf", "resumed");
    } else {
      suggestion = suggest_tf(volume, profile, roi, ctx);
      write_text(path("tf.ct"), export_ct(suggestion.tf));
      write_json(path("tf.json"), suggestion_to_json(suggestion));
    }
    const SceneRenderer renderer(volume, suggestion.tf, ctx.render_options());

    begin("views");
    ViewPlan plan;
    if (have("views.json") && have("trajectory.json")) {
      plan = view_plan_from_json(read_json(path("views.json")), read_json(path("trajectory.json")));
      log.emit("views", "resumed");
    } else {
      plan = select_views(volume, renderer, profile, roi, ctx);
      write_json(path("trajectory.json"), trajectory_to_json(plan));
      write_json(path("views.json"), views_to_json(plan));
    }

    begin("final");
    if (!have("final.png")) {
      const auto camera = camera_for(plan.lattice.at(static_cast<std::size_t>(plan.final_view())), plan.center);
      write_png_atomic(path("final.png"), renderer.render(camera, cfg.output_resolution, cfg.output_resolution));
    }
    log.emit("final", "done", {{"view", plan.final_view()}, {"resolution", cfg.output_resolution}});

    if (cfg.animate) {
      begin("frames");
      fs::create_directories(path("frames"));
      const auto& poses = plan.trajectory.dense_path;
      for (std::size_t i = 0; i < poses.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", i);
        const auto frame = path("frames") / name;
        if (request.resume && fs::exists(frame)) continue;
        write_png_atomic(frame, renderer.render(poses[i], cfg.intermediate_resolution, cfg.intermediate_resolution));
      }
      log.emit("frames", "done", {{"count", poses.size()}});
    }
    outcome.ok = true;
    fs::remove(path("failure.json"));
  } catch (const Error& e) {
    outcome.failed_stage = stage;
    outcome.error = e.what();
    write_json(path("failure.json"), {{"schema_version", kSchemaVersion},
                                      {"stage", stage},
                                      {"code", to_string(e.code())},
                                      {"message", e.what()}});
    log.emit(stage, "failed", {{"code", to_string(e.code())}, {"message", e.what()}});
  }

  outcome.census = client.census();
  outcome.degraded = ctx.degraded;
  outcome.warnings = ctx.warnings;
  log.emit("run", outcome.ok ? "done" : "aborted", {{"census", outcome.census.to_json()}, {"degraded", outcome.degraded}});
  return outcome;
}

// ---- reopening a run -------------------------------------------------------

RunArtifacts RunArtifacts::open(const std::filesystem::path& dir) {
  for (const char* name : {"run.json", "tf.json", "views.json"}) {
    if (!std::filesystem::is_regular_file(dir / name)) throw Error(Errc::kIoFailure, dir.string() + " has no " + name);
  }
  RunArtifacts a;
  a.dir_ = dir;
  try {
    const auto run = read_json(dir / "run.json");
    RunConfig config;
    merge_config(config, run.at("config"));
    const auto meta = meta_from_json(run.at("meta"));
    a.output_resolution_ = config.output_resolution;
    if (config.render_threads > 0) a.options_.threads = static_cast<unsigned>(config.render_threads);
    a.volume_ = std::make_shared<const Volume>(
        prepare_volume(run.at("input").get<std::string>(), meta, config.downsample_target));
    a.renderer_ = std::make_shared<const SceneRenderer>(*a.volume_, tf_from_json(read_json(dir / "tf.json")), a.options_);
    a.final_camera_ = read_json(dir / "views.json").at("final_camera").get<Camera>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kIoFailure, dir.string() + ": " + e.what());
  }
  return a;
}

Image RunArtifacts::render(const RenderOverrides& overrides) const {
  const Camera camera = overrides.camera.value_or(final_camera_);
  camera.validate();
  const int res = overrides.resolution.value_or(output_resolution_);
  if (res < 1) throw Error(Errc::kInvalidArgument, "resolution must be >= 1");
  if (overrides.tf) return SceneRenderer(*volume_, *overrides.tf, options_).render(camera, res, res);
  return renderer_->render(camera, res, res);
}

}  // namespace sasav
