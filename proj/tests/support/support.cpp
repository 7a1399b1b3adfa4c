#include "support.hpp"

#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace sasav::testing {

std::filesystem::path source_dir() { return SASAV_SOURCE_DIR; }
std::filesystem::path fixtures_dir() { return source_dir() / "fixtures"; }
std::filesystem::path cli_path() { return SASAV_CLI_PATH; }

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::filesystem::path write_volume(const Volume& volume, const std::filesystem::path& prefix) {
  auto raw = prefix;
  raw += ".raw";
  auto meta = prefix;
  meta += ".json";
  save_raw(raw, volume);
  write_file(meta, meta_to_json(volume.meta()).dump(2));
  return raw;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << text;
}

int run_cli(const std::string& args, const std::filesystem::path& out_file) {
  std::string cmd = "\"" + cli_path().string() + "\" " + args;
  cmd += out_file.empty() ? " >/dev/null 2>&1" : " >\"" + out_file.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> list_files(const std::filesystem::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path().lexically_relative(dir).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string log_without_timing(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string out;
  for (std::string line; std::getline(in, line);) {
    auto doc = nlohmann::json::parse(line);
    doc.erase("wall_ms");
    out += doc.dump() + "\n";
  }
  return out;
}

Volume make_volume(std::array<std::int64_t, 3> dims, std::vector<float> values, ValueKind kind) {
  VolumeMeta meta;
  meta.dims = dims;
  meta.value_kind = kind;
  return Volume(meta, std::move(values));
}

}  // namespace sasav::testing
