// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "atom/core/binary_io.hpp"
#include "atom/core/error.hpp"
#include "atom/core/tensor.hpp"

namespace atom {

enum class PreprocessMode : std::uint8_t { kNone = 0, kMeanStd = 1, kZca = 2 };

inline std::string to_string(PreprocessMode m) {
  switch (m) {
    case PreprocessMode::kNone: return "none";
    case PreprocessMode::kMeanStd: return "mean-std";
    case PreprocessMode::kZca: return "zca";
  }
  return "?";
}

inline PreprocessMode parse_preprocess_mode(const std::string& s) {
  if (s == "none") return PreprocessMode::kNone;
  if (s == "mean-std") return PreprocessMode::kMeanStd;
  if (s == "zca") return PreprocessMode::kZca;
  throw ParameterError("unknown preprocess mode '" + s + "' (expected none, mean-std or zca)");
}

/// Everything needed to map raw pixels into model space and back.
///
/// Forward map: per-channel standardization, then (zca mode only) the
/// whitening transform y = W (x - mu) over the flattened C*H*W image.
/// Statistics are kept in double regardless of the training precision.
struct PreprocessRecord {
  PreprocessMode mode = PreprocessMode::kNone;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> mean;  // per channel
  std::vector<double> std;   // per channel
  double zca_eps = 0.0;
  std::vector<double> zca_mean;  // [D], D = C*H*W
  Eigen::MatrixXd zca_matrix;    // [D, D]
  Eigen::MatrixXd zca_inverse;   // [D, D]

  int dim() const noexcept { return channels * height * width; }

  std::uint64_t fingerprint() const {
    io::Fnv1a h;
    h.update_pod(static_cast<std::uint8_t>(mode));
    h.update_pod(channels);
    h.update_pod(height);
    h.update_pod(width);
    h.update(mean.data(), mean.size() * sizeof(double));
    h.update(std.data(), std.size() * sizeof(double));
    h.update_pod(zca_eps);
    h.update(zca_mean.data(), zca_mean.size() * sizeof(double));
    h.update(zca_matrix.data(), static_cast<std::size_t>(zca_matrix.size()) * sizeof(double));
    return h.digest();
  }
};

namespace detail {

template <typename T>
void require_finite(const Tensor<T>& images, const char* who) {
  if (!images.all_finite()) throw DataError(std::string(who) + ": input contains NaN or Inf");
}

template <typename T>
void require_image_shape(const PreprocessRecord& rec, const Tensor<T>& images, const char* who) {
  if (images.rank() != 4 || images.dim(1) != rec.channels || images.dim(2) != rec.height ||
      images.dim(3) != rec.width) {
    throw ParameterError(std::string(who) + ": images " + images.shape_string() +
                         " do not match record shape [N, " + std::to_string(rec.channels) + ", " +
                         std::to_string(rec.height) + ", " + std::to_string(rec.width) + "]");
  }
}

template <typename T>
Eigen::MatrixXd to_rows(const Tensor<T>& images) {
  const int n = images.dim(0);
  const auto d = static_cast<int>(images.stride0());
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i) {
    const auto row = images.slice0(i);
    for (int j = 0; j < d; ++j) x(i, j) = static_cast<double>(row[static_cast<std::size_t>(j)]);
  }
  return x;
}

template <typename T>
void from_rows(const Eigen::MatrixXd& x, Tensor<T>& images) {
  const auto d = static_cast<int>(images.stride0());
  for (int i = 0; i < images.dim(0); ++i) {
    auto row = images.slice0(i);
    for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = static_cast<T>(x(i, j));
  }
}

}  // namespace detail

/// Record that leaves images untouched; carries only the image shape.
inline PreprocessRecord identity_preprocess(int channels, int height, int width) {
  PreprocessRecord rec;
  rec.channels = channels;
  rec.height = height;
  rec.width = width;
  rec.mean.assign(static_cast<std::size_t>(channels), 0.0);
  rec.std.assign(static_cast<std::size_t>(channels), 1.0);
  return rec;
}

/// Per-channel mean and (population) standard deviation over all pixels.
template <typename T>
PreprocessRecord fit_mean_std(const Tensor<T>& images) {
  if (images.rank() != 4 || images.dim(0) < 1) {
    throw ParameterError("fit_mean_std: expected a non-empty [N, C, H, W] tensor");
  }
  detail::require_finite(images, "fit_mean_std");
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  PreprocessRecord rec = identity_preprocess(c, h, w);
  rec.mode = PreprocessMode::kMeanStd;
  const double count = static_cast<double>(n) * h * w;
  for (int ch = 0; ch < c; ++ch) {
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double v = images.at(i, ch, y, x);
          s += v;
          ss += v * v;
        }
    const double mu = s / count;
    const double var = std::max(ss / count - mu * mu, 0.0);
    rec.mean[static_cast<std::size_t>(ch)] = mu;
    rec.std[static_cast<std::size_t>(ch)] = var > 0 ? std::sqrt(var) : 1.0;
  }
  return rec;
}

/// Fits a ZCA whitening transform on flattened images.
///
/// W = E (L + eps I)^(-1/2) E^T where E L E^T is the unbiased sample
/// covariance. eps = 0 is accepted only for a full-rank covariance.
template <typename T>
PreprocessRecord fit_zca(const Tensor<T>& images, double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) {
    throw ParameterError("fit_zca: eps must be a finite value >= 0, got " + std::to_string(eps));
  }
  if (images.rank() != 4 || images.dim(0) < 2) {
    throw ParameterError("fit_zca: need at least two images in [N, C, H, W] layout");
  }
  detail::require_finite(images, "fit_zca");
  PreprocessRecord rec = identity_preprocess(images.dim(1), images.dim(2), images.dim(3));
  rec.mode = PreprocessMode::kZca;
  rec.zca_eps = eps;

  Eigen::MatrixXd x = detail::to_rows(images);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::MatrixXd cov(x.cols(), x.cols());
  cov.setZero();
  cov.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), 1.0 / (x.rows() - 1.0));
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DataError("fit_zca: eigendecomposition failed");
  Eigen::VectorXd shifted = eig.eigenvalues().array().max(0.0) + eps;
  if (shifted.minCoeff() <= 1e-12) {
    throw DataError("fit_zca: covariance is singular; use eps > 0");
  }
  const Eigen::MatrixXd& e = eig.eigenvectors();
  rec.zca_matrix = e * shifted.array().rsqrt().matrix().asDiagonal() * e.transpose();
  rec.zca_inverse = e * shifted.array().sqrt().matrix().asDiagonal() * e.transpose();
  rec.zca_mean.assign(mu.data(), mu.data() + mu.size());
  return rec;
}

/// Standardization followed, in zca mode, by whitening fitted on the
/// standardized images.
template <typename T>
PreprocessRecord fit_preprocess(const Tensor<T>& images, PreprocessMode mode, double zca_eps) {
  switch (mode) {
    case PreprocessMode::kNone:
      return identity_preprocess(images.dim(1), images.dim(2), images.dim(3));
    case PreprocessMode::kMeanStd:
      return fit_mean_std(images);
    case PreprocessMode::kZca: {
      PreprocessRecord standard = fit_mean_std(images);
      Tensor<T> normalized = images;
      for (int i = 0; i < images.dim(0); ++i)
        for (int c = 0; c < images.dim(1); ++c)
          for (int y = 0; y < images.dim(2); ++y)
            for (int x = 0; x < images.dim(3); ++x) {
              auto& v = normalized.at(i, c, y, x);
              v = static_cast<T>((v - standard.mean[c]) / standard.std[c]);
            }
      PreprocessRecord rec = fit_zca(normalized, zca_eps);
      rec.mean = standard.mean;
      rec.std = standard.std;
      return rec;
    }
  }
  throw ParameterError("fit_preprocess: unknown mode");
}

template <typename T>
Tensor<T> apply_preprocess(const PreprocessRecord& rec, const Tensor<T>& images) {
  detail::require_image_shape(rec, images, "apply_preprocess");
  Tensor<T> out = images;
  if (rec.mode == PreprocessMode::kNone) return out;
  const std::size_t plane = static_cast<std::size_t>(rec.height) * rec.width;
  for (int i = 0; i < out.dim(0); ++i) {
    auto row = out.slice0(i);
    for (int c = 0; c < rec.channels; ++c) {
      const double mu = rec.mean[c], sd = rec.std[c];
      for (std::size_t p = 0; p < plane; ++p) {
        auto& v = row[c * plane + p];
        v = static_cast<T>((v - mu) / sd);
      }
    }
  }
  if (rec.mode == PreprocessMode::kZca) {
    Eigen::MatrixXd x = detail::to_rows(out);
    x.rowwise() -= Eigen::Map<const Eigen::RowVectorXd>(rec.zca_mean.data(), rec.dim());
    // W is symmetric, so row-major application is x W.
    const Eigen::MatrixXd y = x * rec.zca_matrix;
    detail::from_rows(y, out);
  }
  return out;
}

template <typename T>
Tensor<T> invert_preprocess(const PreprocessRecord& rec, const Tensor<T>& images) {
  detail::require_image_shape(rec, images, "invert_preprocess");
  Tensor<T> out = images;
  if (rec.mode == PreprocessMode::kNone) return out;
  if (rec.mode == PreprocessMode::kZca) {
    Eigen::MatrixXd y = detail::to_rows(out);
    Eigen::MatrixXd x = y * rec.zca_inverse;
    x.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(rec.zca_mean.data(), rec.dim());
    detail::from_rows(x, out);
  }
  const std::size_t plane = static_cast<std::size_t>(rec.height) * rec.width;
  for (int i = 0; i < out.dim(0); ++i) {
    auto row = out.slice0(i);
    for (int c = 0; c < rec.channels; ++c) {
      const double mu = rec.mean[c], sd = rec.std[c];
      for (std::size_t p = 0; p < plane; ++p) {
        auto& v = row[c * plane + p];
        v = static_cast<T>(v * sd + mu);
      }
    }
  }
  return out;
}

inline constexpr char kPreprocessMagic[8] = {'A', 'T', 'O', 'M', 'P', 'R', 'E', '1'};

inline void save_preprocess(const PreprocessRecord& rec, const std::string& path) {
  io::Writer w;
  w.bytes(kPreprocessMagic, sizeof kPreprocessMagic);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(rec.mode));
  w.pod<std::int32_t>(rec.channels);
  w.pod<std::int32_t>(rec.height);
  w.pod<std::int32_t>(rec.width);
  w.array(rec.mean);
  w.array(rec.std);
  w.pod(rec.zca_eps);
  w.array(rec.zca_mean);
  const bool has_zca = rec.mode == PreprocessMode::kZca;
  w.pod<std::uint8_t>(has_zca ? 1 : 0);
  if (has_zca) {
    w.bytes(rec.zca_matrix.data(), static_cast<std::size_t>(rec.zca_matrix.size()) * sizeof(double));
    w.bytes(rec.zca_inverse.data(),
            static_cast<std::size_t>(rec.zca_inverse.size()) * sizeof(double));
  }
  w.save(path);
}

inline PreprocessRecord load_preprocess(const std::string& path) {
  auto r = io::Reader::from_file(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kPreprocessMagic, sizeof magic) != 0) {
    throw LoadError("'" + path + "' is not a preprocess record");
  }
  PreprocessRecord rec;
  const auto mode = r.pod<std::uint8_t>();
  if (mode > 2) throw LoadError("'" + path + "': unknown preprocess mode");
  rec.mode = static_cast<PreprocessMode>(mode);
  rec.channels = r.pod<std::int32_t>();
  rec.height = r.pod<std::int32_t>();
  rec.width = r.pod<std::int32_t>();
  rec.mean = r.array<double>();
  rec.std = r.array<double>();
  rec.zca_eps = r.pod<double>();
  rec.zca_mean = r.array<double>();
  if (r.pod<std::uint8_t>() != 0) {
    const int d = rec.dim();
    rec.zca_matrix.resize(d, d);
    rec.zca_inverse.resize(d, d);
    r.bytes(rec.zca_matrix.data(), static_cast<std::size_t>(d) * d * sizeof(double));
    r.bytes(rec.zca_inverse.data(), static_cast<std::size_t>(d) * d * sizeof(double));
  }
  return rec;
}

}  // namespace atom
