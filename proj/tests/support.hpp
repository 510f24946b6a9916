#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "diffreason/feature_space.hpp"

namespace dr_test {

using namespace diffreason;

inline FeatureVector fv(std::initializer_list<std::pair<const char*, double>> dims) {
  std::vector<Dim> out;
  for (const auto& [name, value] : dims) out.push_back({name, value, std::nullopt});
  return FeatureVector(std::move(out));
}

inline FeatureVector fv_values(const std::vector<double>& values, const std::string& prefix = "x") {
  std::vector<Dim> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back({prefix + std::to_string(i), values[i], std::nullopt});
  return FeatureVector(std::move(out));
}

inline StateRecord at_time(std::string id, double t, FeatureVector f) {
  StateRecord s;
  s.id = std::move(id);
  s.timestamp = t;
  s.extractor_id = "passthrough";
  s.raw_ref = RawRef::inline_bytes(canonical(to_json(f)));
  s.features = std::move(f);
  return s;
}

inline StateRecord in_region(std::string id, std::string region, FeatureVector f) {
  StateRecord s;
  s.id = std::move(id);
  s.region_label = std::move(region);
  s.extractor_id = "passthrough";
  s.raw_ref = RawRef::inline_bytes(canonical(to_json(f)));
  s.features = std::move(f);
  return s;
}

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -100.0, double hi = 100.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("diffreason-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::filesystem::path fixtures_dir() { return DIFFREASON_FIXTURES_DIR; }

}  // namespace dr_test

#define EXPECT_ERRC(stmt, errc)                                                              \
  do {                                                                                       \
    try {                                                                                    \
      stmt;                                                                                  \
      ADD_FAILURE() << #stmt " did not throw";                                               \
    } catch (const ::diffreason::Error& dr_test_e) {                                         \
      EXPECT_EQ(::diffreason::errc_name(dr_test_e.code()), ::diffreason::errc_name(errc))    \
          << dr_test_e.what();                                                               \
    }                                                                                        \
  } while (0)
