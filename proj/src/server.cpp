#include "sasav/server.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>

#include "sasav/error.hpp"

namespace sasav {

struct Service::Entry {
  mutable std::mutex mutex;
  RunHandle handle;
  bool finished = false;
  std::shared_ptr<const RunArtifacts> artifacts;  // loaded on first rerender
  std::mutex artifacts_mutex;
};

namespace {

bool valid_run_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
  }
  return true;
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".json") return "application/json";
  if (ext == ".jsonl") return "application/x-ndjson";
  if (ext == ".ct") return "application/xml";
  return "application/octet-stream";
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
}

void send_json(httplib::Response& res, int status, const nlohmann::json& doc) {
  res.status = status;
  res.set_content(doc.dump(2), "application/json");
}

RunHandle handle_from_disk(const std::string& id, const std::filesystem::path& dir) {
  RunHandle h;
  h.run_id = id;
  h.dir = dir;
  std::ifstream log(dir / "run_log.jsonl");
  nlohmann::json last;
  for (std::string line; std::getline(log, line);) {
    auto doc = nlohmann::json::parse(line, nullptr, false);
    if (!doc.is_discarded()) last = std::move(doc);
  }
  if (std::filesystem::exists(dir / "failure.json")) {
    h.state = RunState::kFailed;
    h.exit_code = 1;
  } else if (last.is_object() && last.value("event", "") == "done" && last.value("stage", "") == "run") {
    h.state = RunState::kDone;
    h.exit_code = last["detail"].value("degraded", false) ? 2 : 0;
  } else {
    h.state = RunState::kFailed;
    h.error = "run did not finish";
  }
  return h;
}

}  // namespace

std::string_view to_string(RunState state) {
  switch (state) {
    case RunState::kPending: return "pending";
    case RunState::kStage: return "stage";
    case RunState::kDone: return "done";
    case RunState::kFailed: return "failed";
  }
  return "pending";
}

nlohmann::json handle_to_json(const RunHandle& h, const std::vector<std::string>& artifacts) {
  nlohmann::json doc = {{"run_id", h.run_id}, {"state", to_string(h.state)}, {"artifacts", artifacts}};
  if (h.state == RunState::kStage) doc["stage"] = h.stage;
  if (h.exit_code) doc["exit_code"] = *h.exit_code;
  if (!h.error.empty()) doc["error"] = h.error;
  return doc;
}

Service::Service(ServerOptions options)
    : options_(std::move(options)), render_slots_(std::clamp(options_.render_workers, 1, 64)) {
  if (!options_.provider_factory) {
    options_.provider_factory = [](const RunConfig& c) { return make_provider(c.provider); };
  }
  std::filesystem::create_directories(options_.runs_root);
  load_existing_runs();
}

Service::~Service() {
  stop();
  wait_for_runs();
}

void Service::load_existing_runs() {
  for (const auto& entry : std::filesystem::directory_iterator(options_.runs_root)) {
    if (!entry.is_directory() || !std::filesystem::exists(entry.path() / "run.json")) continue;
    const auto id = entry.path().filename().string();
    if (!valid_run_id(id)) continue;
    auto e = std::make_shared<Entry>();
    e->handle = handle_from_disk(id, entry.path());
    e->finished = true;
    runs_.emplace(id, std::move(e));
  }
}

std::shared_ptr<Service::Entry> Service::find(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  const auto it = runs_.find(run_id);
  return it == runs_.end() ? nullptr : it->second;
}

RunHandle Service::start_run(const nlohmann::json& request) {
  if (!request.is_object()) throw Error(Errc::kInvalidConfig, "request must be a JSON object");
  for (const auto& [key, _] : request.items()) {
    if (key != "input" && key != "meta" && key != "config") throw Error(Errc::kInvalidConfig, "unknown request key '" + key + "'");
  }
  if (!request.contains("input") || !request["input"].is_string()) throw Error(Errc::kInvalidConfig, "request needs 'input'");
  if (!request.contains("meta")) throw Error(Errc::kInvalidConfig, "request needs 'meta'");

  RunRequest run;
  run.input = request["input"].get<std::string>();
  if (!std::filesystem::is_regular_file(run.input)) throw Error(Errc::kInvalidConfig, "input " + run.input.string() + " not found");
  try {
    run.meta = request["meta"].is_string() ? read_meta(request["meta"].get<std::string>()) : meta_from_json(request["meta"]);
  } catch (const Error& e) {
    throw Error(Errc::kInvalidConfig, e.what());
  }
  merge_config(run.config, options_.base_config);
  if (request.contains("config")) merge_config(run.config, request["config"]);
  run.config.validate();

  auto entry = std::make_shared<Entry>();
  {
    std::lock_guard lock(mutex_);
    static thread_local std::mt19937 gen(std::random_device{}());
    std::string id;
    do {
      char buf[48];
      std::snprintf(buf, sizeof buf, "run-%04llu-%06x", static_cast<unsigned long long>(next_id_++),
                    static_cast<unsigned>(gen() & 0xffffff));
      id = buf;
    } while (runs_.contains(id) || std::filesystem::exists(options_.runs_root / id));
    entry->handle.run_id = id;
    entry->handle.dir = options_.runs_root / id;
    run.out_dir = entry->handle.dir;
    runs_.emplace(id, entry);
  }

  auto provider = options_.provider_factory(run.config);
  workers_.emplace_back([entry, run = std::move(run), provider = std::move(provider)]() mutable {
    RunObserver observer;
    observer.on_stage = [&](std::string_view stage) {
      std::lock_guard lock(entry->mutex);
      entry->handle.state = RunState::kStage;
      entry->handle.stage = std::string(stage);
    };
    RunOutcome outcome;
    try {
      outcome = run_pipeline(run, provider, observer);
    } catch (const std::exception& e) {
      outcome.error = e.what();
    }
    std::lock_guard lock(entry->mutex);
    entry->handle.state = outcome.ok ? RunState::kDone : RunState::kFailed;
    entry->handle.exit_code = outcome.exit_code();
    entry->handle.error = outcome.error;
    entry->finished = true;
  });
  std::lock_guard lock(entry->mutex);
  return entry->handle;
}

std::optional<RunHandle> Service::status(const std::string& run_id) const {
  const auto entry = find(run_id);
  if (!entry) return std::nullopt;
  std::lock_guard lock(entry->mutex);
  return entry->handle;
}

std::vector<RunHandle> Service::list() const {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [_, e] : runs_) entries.push_back(e);
  }
  std::vector<RunHandle> out;
  for (const auto& e : entries) {
    std::lock_guard lock(e->mutex);
    out.push_back(e->handle);
  }
  return out;
}

std::vector<std::string> Service::artifacts(const std::string& run_id) const {
  const auto entry = find(run_id);
  if (!entry) return {};
  std::vector<std::string> out;
  const auto dir = entry->handle.dir;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& f : std::filesystem::recursive_directory_iterator(dir)) {
    if (f.is_regular_file() && f.path().extension() != ".tmp") out.push_back(f.path().lexically_relative(dir).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::shared_ptr<const RunArtifacts> Service::artifacts_for(Entry& entry) {
  std::lock_guard lock(entry.artifacts_mutex);
  if (!entry.artifacts) entry.artifacts = std::make_shared<const RunArtifacts>(RunArtifacts::open(entry.handle.dir));
  return entry.artifacts;
}

Image Service::rerender(const std::string& run_id, const nlohmann::json& request) {
  const auto entry = find(run_id);
  if (!entry) throw Error(Errc::kIoFailure, "unknown run " + run_id);
  {
    std::lock_guard lock(entry->mutex);
    if (entry->handle.state != RunState::kDone) throw Error(Errc::kIoFailure, "run " + run_id + " has no finished artifacts");
  }
  if (!request.is_object()) throw Error(Errc::kInvalidArgument, "render request must be a JSON object");
  const auto artifacts = artifacts_for(*entry);

  RenderOverrides overrides;
  try {
    for (const auto& [key, value] : request.items()) {
      if (key == "camera") {
        overrides.camera = value.get<Camera>();
        overrides.camera->validate();
      } else if (key == "resolution") {
        if (!value.is_number_integer() || value.get<int>() < 1 || value.get<int>() > 4096) {
          throw Error(Errc::kInvalidArgument, "resolution must be an integer in [1, 4096]");
        }
        overrides.resolution = value.get<int>();
      } else if (key == "tf") {
        overrides.tf = tf_from_json(value);
      } else if (key == "tf_edits") {
        std::vector<ControlPoint> points(artifacts->tf().control_points().begin(), artifacts->tf().control_points().end());
        for (const auto& edit : value) {
          const auto i = edit.at("index").get<std::size_t>();
          if (i >= points.size()) throw Error(Errc::kInvalidArgument, "tf edit index out of range");
          if (edit.contains("value")) points[i].value = edit["value"].get<double>();
          if (edit.contains("color")) points[i].color = edit["color"].get<Rgb>();
          if (edit.contains("opacity")) points[i].opacity = edit["opacity"].get<double>();
        }
        const auto& base = artifacts->tf();
        overrides.tf = base.mode() == TfMode::kDiscrete ? TransferFunction::discrete(points, base.width())
                                                         : TransferFunction::continuous(points);
      } else {
        throw Error(Errc::kInvalidArgument, "unknown render key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kInvalidArgument, std::string("malformed render request: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::kParseFailure) throw Error(Errc::kInvalidArgument, e.what());
    throw;
  }
  render_slots_.acquire();
  struct Release {
    std::counting_semaphore<64>& s;
    ~Release() { s.release(); }
  } release{render_slots_};
  return artifacts->render(overrides);
}

void Service::wait_for_runs() {
  std::vector<std::jthread> workers;
  {
    std::lock_guard lock(mutex_);
    workers.swap(workers_);
  }
  for (auto& w : workers) {
    if (w.joinable()) w.join();
  }
}

void Service::install_routes() {
  auto& s = *http_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  s.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded()) return send_error(res, 422, "body is not JSON");
    try {
      const auto handle = start_run(body);
      send_json(res, 202, handle_to_json(handle, {}));
    } catch (const Error& e) {
      send_error(res, 422, e.what());
    }
  });

  s.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& h : list()) out.push_back(handle_to_json(h, {}));
    send_json(res, 200, {{"runs", out}});
  });

  s.Get(R"(/runs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    const auto h = status(id);
    if (!h) return send_error(res, 404, "unknown run " + id);
    send_json(res, 200, handle_to_json(*h, artifacts(id)));
  });

  s.Get(R"(/runs/([^/]+)/artifacts)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    if (!status(id)) return send_error(res, 404, "unknown run " + id);
    send_json(res, 200, {{"run_id", id}, {"artifacts", artifacts(id)}});
  });

  s.Get(R"(/runs/([^/]+)/artifacts/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    const auto h = status(id);
    if (!h) return send_error(res, 404, "unknown run " + id);
    const std::filesystem::path name(req.matches[2].str());
    const auto path = (h->dir / name).lexically_normal();
    const auto rel = path.lexically_relative(h->dir);
    if (rel.empty() || rel.native().starts_with("..") || name.is_absolute() || !std::filesystem::is_regular_file(path)) {
      return send_error(res, 404, "no artifact " + name.generic_string());
    }
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    res.set_content(ss.str(), content_type_for(path));
  });

  s.Get(R"(/runs/([^/]+)/log)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    const auto entry = find(id);
    if (!entry) return send_error(res, 404, "unknown run " + id);
    const auto log_path = entry->handle.dir / "run_log.jsonl";
    auto offset = std::make_shared<std::streamoff>(0);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [entry, log_path, offset](std::size_t, httplib::DataSink& sink) {
      while (true) {
        bool finished;
        {
          std::lock_guard lock(entry->mutex);
          finished = entry->finished;
        }
        std::ifstream in(log_path, std::ios::binary);
        if (in) {
          in.seekg(*offset);
          std::string line;
          while (std::getline(in, line)) {
            if (in.eof()) break;  // partial line still being written
            *offset += static_cast<std::streamoff>(line.size()) + 1;
            const auto doc = nlohmann::json::parse(line, nullptr, false);
            std::string event = "data: " + line + "\n\n";
            if (!doc.is_discarded() && doc.contains("seq")) event = "id: " + std::to_string(doc["seq"].get<std::int64_t>()) + "\n" + event;
            if (!sink.write(event.data(), event.size())) return false;
          }
        }
        if (finished) {
          const std::string end = "event: end\ndata: {}\n\n";
          sink.write(end.data(), end.size());
          sink.done();
          return true;
        }
        if (!sink.is_writable()) return false;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
    });
  });

  s.Post(R"(/runs/([^/]+)/render)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    if (!status(id)) return send_error(res, 404, "unknown run " + id);
    const auto body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded()) return send_error(res, 422, "body is not JSON");
    try {
      const auto image = rerender(id, body);
      const auto png = encode_png(image);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const Error& e) {
      send_error(res, e.code() == Errc::kIoFailure ? 409 : 422, e.what());
    }
  });
}

int Service::start(const std::string& host, int port) {
  http_ = std::make_unique<httplib::Server>();
  install_routes();
  const int bound = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(Errc::kIoFailure, "cannot bind " + host + ":" + std::to_string(port));
  listener_ = std::jthread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return bound;
}

void Service::listen(const std::string& host, int port) {
  http_ = std::make_unique<httplib::Server>();
  install_routes();
  if (!http_->listen(host, port)) throw Error(Errc::kIoFailure, "cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  if (http_) http_->stop();
  if (listener_.joinable()) listener_.join();
}

}  // namespace sasav
