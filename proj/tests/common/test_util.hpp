#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "engraf/error.hpp"

namespace test_util {

/// Self-deleting scratch directory.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("engraf-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path data_dir() { return ENGRAF_TEST_DATA_DIR; }
inline std::filesystem::path cifar_taxonomy_path() { return data_dir() / "cifar100_taxonomy.tsv"; }

/// Kind of the engraf::Error thrown by `fn`, or nothing if it returned.
inline std::optional<engraf::ErrorKind> error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const engraf::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace test_util
