#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasav/config.hpp"
#include "sasav/mllm.hpp"
#include "sasav/pipeline.hpp"

namespace httplib {
class Server;
}

namespace sasav {

enum class RunState { kPending, kStage, kDone, kFailed };
std::string_view to_string(RunState state);

struct RunHandle {
  std::string run_id;
  RunState state = RunState::kPending;
  std::string stage;
  std::filesystem::path dir;
  std::optional<int> exit_code;
  std::string error;
};

nlohmann::json handle_to_json(const RunHandle& handle, const std::vector<std::string>& artifacts);

using ProviderFactory = std::function<std::shared_ptr<Provider>(const RunConfig&)>;

struct ServerOptions {
  std::filesystem::path runs_root;
  /// Config values applied under each request's config (request wins).
  nlohmann::json base_config = nlohmann::json::object();
  int render_workers = 2;
  ProviderFactory provider_factory;  // defaults to make_provider(config.provider)
};

class Service {
 public:
  explicit Service(ServerOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

  /// Direct entry points behind the HTTP routes.
  /// Throws Error(kInvalidConfig) for a bad request document.
  RunHandle start_run(const nlohmann::json& request);
  std::optional<RunHandle> status(const std::string& run_id) const;
  std::vector<RunHandle> list() const;
  /// Throws Error(kInvalidArgument) for malformed render requests.
  Image rerender(const std::string& run_id, const nlohmann::json& request);
  std::vector<std::string> artifacts(const std::string& run_id) const;
  /// Blocks until every started run has finished.
  void wait_for_runs();

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& run_id) const;
  void load_existing_runs();
  void install_routes();
  std::shared_ptr<const RunArtifacts> artifacts_for(Entry& entry);

  ServerOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> runs_;
  std::vector<std::jthread> workers_;
  std::counting_semaphore<64> render_slots_;
  std::unique_ptr<httplib::Server> http_;
  std::jthread listener_;
  std::uint64_t next_id_ = 1;
};

}  // namespace sasav
