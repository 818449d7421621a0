// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "atom/core/error.hpp"

namespace atom {

/// Dense row-major tensor of rank 1 to 4. Images are laid out as [N, C, H, W],
/// row-vector batches as [B, E].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(count(shape_), fill);
  }

  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  Tensor(std::vector<int> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape();
    if (data_.size() != count(shape_)) {
      throw ParameterError("tensor: value count " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string());
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() & noexcept { return data_; }
  std::span<const T> values() const& noexcept { return data_; }
  // A span into a temporary would dangle.
  std::span<const T> values() const&& = delete;
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(int n, int c, int h, int w) noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(int n, int c, int h, int w) const noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T& at(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const noexcept {
    return data_[static_cast<std::size_t>(r) * shape_[1] + c];
  }

  /// Elements per leading-axis entry (one image, one row).
  std::size_t stride0() const noexcept {
    return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / static_cast<std::size_t>(shape_[0]);
  }

  std::span<T> slice0(int i) noexcept { return {data_.data() + i * stride0(), stride0()}; }
  std::span<const T> slice0(int i) const noexcept {
    return {data_.data() + i * stride0(), stride0()};
  }

  /// Copies the selected leading-axis entries into a new tensor.
  Tensor gather0(std::span<const int> rows) const {
    std::vector<int> s = shape_;
    s[0] = static_cast<int>(rows.size());
    Tensor out(s);
    const std::size_t st = stride0();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(data_.data() + rows[i] * st, st, out.data_.data() + i * st);
    }
    return out;
  }

  /// Copies rows [begin, begin + n) into a new tensor.
  Tensor narrow0(int begin, int n) const {
    std::vector<int> s = shape_;
    s[0] = n;
    const std::size_t st = stride0();
    return Tensor(s, std::vector<T>(data_.begin() + begin * st, data_.begin() + (begin + n) * st));
  }

  Tensor reshaped(std::vector<int> shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  void reshape(std::vector<int> shape) {
    if (count(shape) != data_.size()) {
      throw ParameterError("tensor: cannot reshape " + shape_string() + " to " +
                           shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  std::string shape_string() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << ']';
    return os.str();
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_) {
      throw ParameterError(std::string("tensor ") + what + ": shape mismatch " + shape_string() +
                           " vs " + o.shape_string());
    }
  }

 private:
  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }

  void check_shape() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw ParameterError("tensor: rank must be 1..4, got " + std::to_string(shape_.size()));
    }
    for (int d : shape_) {
      if (d < 0) throw ParameterError("tensor: negative extent in " + shape_string());
    }
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace atom
