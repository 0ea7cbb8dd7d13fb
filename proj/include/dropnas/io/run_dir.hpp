#ifndef DROPNAS_IO_RUN_DIR_HPP
#define DROPNAS_IO_RUN_DIR_HPP

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dropnas/core/errors.hpp"

namespace dropnas {

// Resolution order for the output root: explicit flag, config value,
// DROPNAS_OUT, then ./runs.
inline std::string resolve_out_root(const std::string& flag_value,
                                    const std::string& config_value) {
  if (!flag_value.empty()) return flag_value;
  if (!config_value.empty()) return config_value;
  if (const char* env = std::getenv("DROPNAS_OUT"); env && *env) return env;
  return "runs";
}

// Fresh directory named by timestamp + config hash. Never reuses an existing
// directory: collisions get a numeric suffix.
struct RunDir {
  std::string path;

  static RunDir create(const std::string& root, std::uint64_t config_hash,
                       const std::string& label = "") {
    namespace fs = std::filesystem;
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream name;
    name << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << std::hex << (config_hash & 0xffffffffull);
    if (!label.empty()) name << '-' << label;
    fs::create_directories(root);
    std::string base = (fs::path(root) / name.str()).string();
    std::string candidate = base;
    for (int i = 1; fs::exists(candidate); ++i)
      candidate = base + "-" + std::to_string(i);
    fs::create_directories(candidate);
    return RunDir{candidate};
  }

  std::string file(const std::string& name) const {
    return (std::filesystem::path(path) / name).string();
  }

  void write_json(const std::string& name, const nlohmann::json& j) const {
    std::ofstream out(file(name), std::ios::trunc);
    if (!out) throw IoError("cannot write " + file(name));
    out << j.dump(2) << "\n";
  }
};

}  // namespace dropnas

#endif
