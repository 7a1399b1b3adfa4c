#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasav/config.hpp"
#include "sasav/isovalue_record.hpp"
#include "sasav/knowledge.hpp"
#include "sasav/mllm.hpp"
#include "sasav/render.hpp"
#include "sasav/transfer.hpp"
#include "sasav/viewsphere.hpp"
#include "sasav/volume.hpp"

namespace sasav {

enum class ObjectType { kEmpirical, kSimulated };
std::string_view to_string(ObjectType type);
ObjectType object_type_from_string(std::string_view name);

inline constexpr std::string_view kUnknownObject = "unknown volumetric structure";

struct DataProfile {
  std::vector<double> rsvs;
  std::vector<std::optional<int>> rsv_scores;  // nullopt where the evaluator failed
  std::vector<std::string> object_keywords;
  ObjectType object_type = ObjectType::kSimulated;
  double best_rsv = 0.0;
  int best_rsv_score = 1;
  int best_initial_view = 0;
};

nlohmann::json profile_to_json(const DataProfile& profile);
DataProfile profile_from_json(const nlohmann::json& doc);

struct ViewSelection {
  std::vector<int> ranked;
  std::vector<int> anchors;
  std::vector<int> avoid;

  friend bool operator==(const ViewSelection&, const ViewSelection&) = default;
};

/// Drops out-of-range and duplicate indices, then anchors that also appear in
/// avoid. Returns true when anything was removed.
bool repair_view_selection(ViewSelection& selection, int k);
/// ranked = 0..k-1, anchors = min(8, k) evenly strided indices, avoid empty.
ViewSelection fallback_view_selection(int k);

/// Coordinator-side event sink. Events are numbered in emission order; the
/// wall_ms field is the only non-deterministic value.
class RunLog {
 public:
  using Listener = std::function<void(const nlohmann::json&)>;

  RunLog() = default;
  /// Appends to path (continuing the sequence of an existing log).
  explicit RunLog(const std::filesystem::path& path);

  void emit(std::string_view stage, std::string_view event, nlohmann::json detail = nlohmann::json::object());
  void set_listener(Listener listener);
  std::vector<nlohmann::json> events() const;

 private:
  mutable std::mutex mutex_;
  std::filesystem::path path_;
  std::int64_t next_seq_ = 0;
  std::vector<nlohmann::json> events_;
  Listener listener_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Shared state for the stages of one run.
struct PipelineContext {
  ChatClient& client;
  const RunConfig& config;
  RunLog* log = nullptr;
  std::vector<std::string> warnings;
  bool degraded = false;

  RenderOptions render_options() const;
  /// Records a fallback or repair; the run then ends with exit status 2.
  void degrade(std::string_view stage, const std::string& message);
  void note(std::string_view stage, std::string_view event, nlohmann::json detail = nlohmann::json::object());
};

/// Throws Error(kAllEvaluationsFailed) when every evaluator reply failed.
DataProfile profile_and_recognize(const Volume& volume, PipelineContext& ctx);

ForageResult run_forage(const DataProfile& profile, PipelineContext& ctx);

enum class Judgment { kPrior, kNew, kFailed };

struct HillClimbStep {
  double current = 0.0;
  double candidate = 0.0;
  Judgment judgment = Judgment::kPrior;
};

struct HillClimbResult {
  double value = 0.0;
  int judgments = 0;
  bool judge_failed = false;
  std::vector<HillClimbStep> transcript;
};

using Judge = std::function<Judgment(double current, double candidate, int judgment_index)>;

/// Comparative hill climb inside [lower, upper]: start upward with step
/// span/initial_step_divisor, move while the candidate wins, turn around once
/// if the very first direction loses, halve the step on later losses. Stops
/// after max_judgments or when the step drops below span/min_step_divisor.
/// A failed judgment returns start unchanged.
HillClimbResult hill_climb(double start, double lower, double upper, const IftConfig& params, const Judge& judge);

/// Neighbouring sampled values around index i, falling back to the value range at the ends.
std::pair<double, double> neighbor_bounds(std::span<const double> isovalues, std::size_t i, double v_min, double v_max);

HillClimbResult fine_tune_isovalue(const Volume& volume, const IsovalueRecord& record, std::size_t index,
                                   std::pair<double, double> neighbors, const DataProfile& profile,
                                   PipelineContext& ctx);

struct TfSuggestion {
  std::vector<IsovalueRecord> records;
  TransferFunction tf;
  int ift_judgments = 0;
};

nlohmann::json suggestion_to_json(const TfSuggestion& suggestion);
TfSuggestion suggestion_from_json(const nlohmann::json& doc);

TfSuggestion suggest_tf(const Volume& volume, const DataProfile& profile, const RegionsOfInterest& roi,
                        PipelineContext& ctx);

/// Renders a volume with a transfer function: DVR for continuous mode, a
/// composite of per-band isosurfaces for discrete mode. Meshes are extracted
/// once, so repeated renders are cheap and identical.
class SceneRenderer {
 public:
  SceneRenderer(const Volume& volume, TransferFunction tf, RenderOptions options = {});
  SceneRenderer(const SceneRenderer&) = delete;
  SceneRenderer& operator=(const SceneRenderer&) = delete;

  Image render(const Camera& camera, int width, int height) const;
  const TransferFunction& tf() const { return tf_; }

 private:
  const Volume* volume_;
  TransferFunction tf_;
  RenderOptions options_;
  std::vector<Mesh> meshes_;  // one per band, discrete mode only
};

struct ViewPlan {
  Vec3 center;
  double radius = 0.0;
  std::vector<Viewpoint> lattice;
  ViewSelection selection;
  Trajectory trajectory;
  bool fallback = false;

  int final_view() const { return selection.ranked.empty() ? 0 : selection.ranked.front(); }
};

nlohmann::json views_to_json(const ViewPlan& plan);
nlohmann::json trajectory_to_json(const ViewPlan& plan);
/// Reads views.json and trajectory.json written by views_to_json / trajectory_to_json.
ViewPlan view_plan_from_json(const nlohmann::json& views, const nlohmann::json& trajectory);

ViewPlan select_views(const Volume& volume, const SceneRenderer& renderer, const DataProfile& profile,
                      const RegionsOfInterest& roi, PipelineContext& ctx);

/// The volume exactly as the pipeline sees it: loaded, downsampled and normalized.
Volume prepare_volume(const std::filesystem::path& input, const VolumeMeta& meta, int downsample_target);

struct RunRequest {
  std::filesystem::path input;
  VolumeMeta meta;
  std::filesystem::path out_dir;
  RunConfig config;
  bool resume = false;
};

struct RunOutcome {
  std::filesystem::path dir;
  bool ok = false;
  bool degraded = false;
  std::string failed_stage;
  std::string error;
  Census census;
  std::vector<std::string> warnings;

  int exit_code() const { return !ok ? 1 : degraded ? 2 : 0; }
};

struct RunObserver {
  std::function<void(std::string_view stage)> on_stage;
  RunLog::Listener on_event;
};

inline constexpr std::string_view kStages[] = {"load", "profile", "forage", "tf", "views", "final", "frames"};

/// Runs every stage and persists artifacts as each stage finishes. With
/// request.resume, stages whose artifacts already exist are loaded instead.
/// Unrecoverable errors are reported in the outcome and in failure.json.
RunOutcome run_pipeline(const RunRequest& request, std::shared_ptr<Provider> provider,
                        const RunObserver& observer = {});

/// Re-render from a finished run directory. Camera, transfer function and
/// resolution default to the saved final view, tf.json and output resolution.
struct RenderOverrides {
  std::optional<Camera> camera;
  std::optional<TransferFunction> tf;
  std::optional<int> resolution;
};

class RunArtifacts {
 public:
  /// Throws Error(kIoFailure) when the directory is not a usable run directory.
  static RunArtifacts open(const std::filesystem::path& dir);

  Image render(const RenderOverrides& overrides = {}) const;
  const Volume& volume() const { return *volume_; }
  const TransferFunction& tf() const { return renderer_->tf(); }
  const Camera& final_camera() const { return final_camera_; }
  int output_resolution() const { return output_resolution_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::shared_ptr<const Volume> volume_;
  std::shared_ptr<const SceneRenderer> renderer_;
  Camera final_camera_;
  int output_resolution_ = 0;
  RenderOptions options_;
};

}  // namespace sasav
