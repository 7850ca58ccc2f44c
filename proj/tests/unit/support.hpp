#pragma once

#include <filesystem>

#include "feudalgain/harness.hpp"

namespace fgtest {

inline std::filesystem::path data_dir() { return FEUDALGAIN_DATA_DIR; }
inline std::filesystem::path fixture_dir() { return FEUDALGAIN_FIXTURE_DIR; }

/// The shipped CR-like domain, loaded once.
inline const feudalgain::Domain& cr() {
  static const feudalgain::Domain d = feudalgain::load_domain(data_dir() / "cr");
  return d;
}

inline const feudalgain::Domain& sfr() {
  static const feudalgain::Domain d = feudalgain::load_domain(data_dir() / "sfr");
  return d;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("feudalgain_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fgtest
