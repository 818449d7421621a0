// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "atom/core/rng.hpp"
#include "atom/core/tensor.hpp"
#include "oracles.hpp"

namespace testing_support {

inline atom::Tensor<double> random_tensor(atom::Rng& rng, std::vector<int> shape, double lo = -1.0,
                                          double hi = 1.0) {
  atom::Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Sample `b` of a [B, C, H, W] tensor as nested vectors.
template <typename T>
oracle::Map3 to_map(const atom::Tensor<T>& t, int b) {
  oracle::Map3 m(static_cast<std::size_t>(t.dim(1)),
                 std::vector<std::vector<double>>(static_cast<std::size_t>(t.dim(2)),
                                                  std::vector<double>(static_cast<std::size_t>(t.dim(3)))));
  for (int c = 0; c < t.dim(1); ++c)
    for (int y = 0; y < t.dim(2); ++y)
      for (int x = 0; x < t.dim(3); ++x)
        m[static_cast<std::size_t>(c)][static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = t.at(b, c, y, x);
  return m;
}

template <typename T>
std::vector<oracle::Map3> to_maps(const atom::Tensor<T>& t) {
  std::vector<oracle::Map3> out;
  for (int b = 0; b < t.dim(0); ++b) out.push_back(to_map(t, b));
  return out;
}

template <typename T>
oracle::Mat to_rows(const atom::Tensor<T>& t) {
  oracle::Mat m;
  for (int b = 0; b < t.dim(0); ++b) {
    const auto r = t.slice0(b);
    m.emplace_back(r.begin(), r.end());
  }
  return m;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("atom_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
