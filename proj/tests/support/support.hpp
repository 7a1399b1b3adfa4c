#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sasav/volume.hpp"

namespace sasav::testing {

std::filesystem::path source_dir();
std::filesystem::path fixtures_dir();
std::filesystem::path cli_path();

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "sasav");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Writes <prefix>.raw and <prefix>.json for a volume; returns the raw path.
std::filesystem::path write_volume(const Volume& volume, const std::filesystem::path& prefix);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

/// Runs the CLI with arguments; returns the exit status. Output goes to out_file when given.
int run_cli(const std::string& args, const std::filesystem::path& out_file = {});

/// Sorted relative paths of regular files below dir.
std::vector<std::string> list_files(const std::filesystem::path& dir);

/// run_log.jsonl with every wall_ms field removed.
std::string log_without_timing(const std::filesystem::path& path);

Volume make_volume(std::array<std::int64_t, 3> dims, std::vector<float> values,
                   ValueKind kind = ValueKind::kContinuous);

}  // namespace sasav::testing
