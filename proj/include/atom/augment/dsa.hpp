// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable Siamese augmentation. Every op is an affine map of the pixel
// values, so each has an exact transpose used to carry gradients from the
// augmented batch back to the input batch. The caller applies one AugParams to
// both halves of a real/synthetic pair.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "atom/core/error.hpp"
#include "atom/core/rng.hpp"
#include "atom/core/tensor.hpp"

namespace atom::dsa {

enum class Op { kColor = 0, kCrop, kCutout, kFlip, kScale, kRotate };

inline constexpr std::array<Op, 6> kAllOps = {Op::kColor, Op::kCrop,  Op::kCutout,
                                              Op::kFlip,  Op::kScale, Op::kRotate};

inline std::string to_string(Op op) {
  switch (op) {
    case Op::kColor: return "color";
    case Op::kCrop: return "crop";
    case Op::kCutout: return "cutout";
    case Op::kFlip: return "flip";
    case Op::kScale: return "scale";
    case Op::kRotate: return "rotate";
  }
  return "?";
}

inline Op parse_op(const std::string& s) {
  for (Op op : kAllOps)
    if (to_string(op) == s) return op;
  throw ParameterError("unknown augmentation op '" + s + "'");
}

/// Enabled ops and their ranges. Defaults are the standard DSA settings.
struct Config {
  std::array<bool, 6> enabled{true, true, true, true, true, true};
  double brightness = 1.0;
  double saturation = 2.0;
  double contrast = 0.5;
  double crop_pad = 0.125;
  double cutout = 0.5;
  double flip_p = 0.5;
  double scale = 1.2;
  double rotate_deg = 15.0;
  bool per_image = false;

  bool is_enabled(Op op) const { return enabled[static_cast<std::size_t>(op)]; }
  void set_enabled(Op op, bool on) { enabled[static_cast<std::size_t>(op)] = on; }
  bool any_enabled() const {
    return std::any_of(enabled.begin(), enabled.end(), [](bool b) { return b; });
  }
};

/// Random draws for one image (or for the whole batch when shared).
struct Draw {
  double brightness_shift = 0.0;   // added to every pixel
  double saturation_factor = 1.0;  // scales deviation from the per-pixel channel mean
  double contrast_factor = 1.0;    // scales deviation from the image mean
  int shift_y = 0, shift_x = 0;    // crop translation in pixels
  int cut_y = 0, cut_x = 0;        // top-left corner of the cutout square
  int cut_h = 0, cut_w = 0;
  bool flip = false;
  double scale_y = 1.0, scale_x = 1.0;
  double angle_deg = 0.0;
};

struct AugParams {
  Op op = Op::kFlip;
  int height = 0, width = 0;
  std::vector<Draw> draws;  // one entry when shared per batch

  const Draw& for_image(int b) const { return draws[static_cast<std::size_t>(b) % draws.size()]; }
};

/// True when every draw lies inside the configured ranges.
inline bool within_ranges(const AugParams& p, const Config& cfg) {
  const int pad_y = static_cast<int>(p.height * cfg.crop_pad + 0.5);
  const int pad_x = static_cast<int>(p.width * cfg.crop_pad + 0.5);
  for (const Draw& d : p.draws) {
    if (std::abs(d.brightness_shift) > 0.5 * cfg.brightness) return false;
    if (d.saturation_factor < 0 || d.saturation_factor > cfg.saturation) return false;
    if (d.contrast_factor < cfg.contrast || d.contrast_factor > cfg.contrast + 1.0) return false;
    if (std::abs(d.shift_y) > pad_y || std::abs(d.shift_x) > pad_x) return false;
    if (d.cut_y < 0 || d.cut_y + d.cut_h > p.height || d.cut_x < 0 || d.cut_x + d.cut_w > p.width)
      return false;
    if (d.scale_y < 1.0 / cfg.scale || d.scale_y > cfg.scale) return false;
    if (d.scale_x < 1.0 / cfg.scale || d.scale_x > cfg.scale) return false;
    if (std::abs(d.angle_deg) > cfg.rotate_deg) return false;
  }
  return true;
}

/// Picks one enabled op uniformly and draws its parameters. `count` draw sets
/// are produced when `cfg.per_image` is set, otherwise one shared set.
inline AugParams sample_aug(Rng& rng, const Config& cfg, int height, int width, int count = 1) {
  std::vector<Op> ops;
  for (Op op : kAllOps)
    if (cfg.is_enabled(op)) ops.push_back(op);
  if (ops.empty()) throw ParameterError("sample_aug: no augmentation op enabled");
  AugParams p;
  p.op = ops[static_cast<std::size_t>(rng.randint(0, static_cast<long>(ops.size()) - 1))];
  p.height = height;
  p.width = width;
  const int n = cfg.per_image ? std::max(count, 1) : 1;
  const int pad_y = static_cast<int>(height * cfg.crop_pad + 0.5);
  const int pad_x = static_cast<int>(width * cfg.crop_pad + 0.5);
  const int cut_h = static_cast<int>(height * cfg.cutout + 0.5);
  const int cut_w = static_cast<int>(width * cfg.cutout + 0.5);
  for (int i = 0; i < n; ++i) {
    Draw d;
    switch (p.op) {
      case Op::kColor:
        d.brightness_shift = (rng.uniform() - 0.5) * cfg.brightness;
        d.saturation_factor = rng.uniform() * cfg.saturation;
        d.contrast_factor = rng.uniform() + cfg.contrast;
        break;
      case Op::kCrop:
        d.shift_y = static_cast<int>(rng.randint(-pad_y, pad_y));
        d.shift_x = static_cast<int>(rng.randint(-pad_x, pad_x));
        break;
      case Op::kCutout:
        d.cut_h = cut_h;
        d.cut_w = cut_w;
        d.cut_y = static_cast<int>(rng.randint(0, height - cut_h));
        d.cut_x = static_cast<int>(rng.randint(0, width - cut_w));
        break;
      case Op::kFlip:
        d.flip = rng.bernoulli(cfg.flip_p);
        break;
      case Op::kScale:
        d.scale_y = rng.uniform(1.0 / cfg.scale, cfg.scale);
        d.scale_x = rng.uniform(1.0 / cfg.scale, cfg.scale);
        break;
      case Op::kRotate:
        d.angle_deg = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
        break;
    }
    p.draws.push_back(d);
  }
  return p;
}

namespace detail {

/// Affine map from output to input normalized coordinates ([-1, 1], pixel
/// centers at (2i + 1) / n - 1).
struct Affine {
  double a00, a01, a10, a11;
};

inline Affine affine_for(const Draw& d, Op op) {
  if (op == Op::kScale) return {d.scale_x, 0.0, 0.0, d.scale_y};
  const double t = d.angle_deg * std::numbers::pi / 180.0;
  return {std::cos(t), std::sin(t), -std::sin(t), std::cos(t)};
}

/// Bilinear taps for output pixel (y, x): up to four (input index, weight)
/// pairs, out-of-bounds taps dropped (zero padding).
struct Taps {
  std::array<int, 4> idx;
  std::array<double, 4> w;
  int n = 0;
};

inline Taps bilinear_taps(const Affine& m, int h, int w, int y, int x) {
  const double xn = (2.0 * x + 1.0) / w - 1.0;
  const double yn = (2.0 * y + 1.0) / h - 1.0;
  const double xs = m.a00 * xn + m.a01 * yn;
  const double ys = m.a10 * xn + m.a11 * yn;
  const double px = ((xs + 1.0) * w - 1.0) / 2.0;
  const double py = ((ys + 1.0) * h - 1.0) / 2.0;
  const int x0 = static_cast<int>(std::floor(px));
  const int y0 = static_cast<int>(std::floor(py));
  const double fx = px - x0, fy = py - y0;
  Taps t;
  const int ys_[2] = {y0, y0 + 1};
  const int xs_[2] = {x0, x0 + 1};
  const double wy[2] = {1.0 - fy, fy};
  const double wx[2] = {1.0 - fx, fx};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      if (ys_[i] < 0 || ys_[i] >= h || xs_[j] < 0 || xs_[j] >= w) continue;
      const double wt = wy[i] * wx[j];
      if (wt == 0.0) continue;
      t.idx[static_cast<std::size_t>(t.n)] = ys_[i] * w + xs_[j];
      t.w[static_cast<std::size_t>(t.n)] = wt;
      ++t.n;
    }
  return t;
}

template <typename T>
void check_batch(const Tensor<T>& x, const AugParams& p, const char* who) {
  if (x.rank() != 4 || x.dim(2) != p.height || x.dim(3) != p.width || p.draws.empty()) {
    throw ParameterError(std::string(who) + ": batch " + x.shape_string() +
                         " does not match augmentation drawn for " + std::to_string(p.height) +
                         "x" + std::to_string(p.width));
  }
}

/// Applies the op (transpose=false) or its adjoint (transpose=true) to one
/// image of C planes.
template <typename T>
void apply_one(const Draw& d, Op op, int c, int h, int w, const T* in, T* out, bool transpose) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t total = plane * c;
  switch (op) {
    case Op::kColor: {
      // Forward: brightness, saturation, contrast. Adjoint runs the transposed
      // steps in reverse; the brightness offset does not reach gradients.
      std::vector<double> v(in, in + total);
      auto saturation = [&] {
        const double s = d.saturation_factor;
        for (std::size_t p = 0; p < plane; ++p) {
          double m = 0;
          for (int ch = 0; ch < c; ++ch) m += v[ch * plane + p];
          m /= c;
          for (int ch = 0; ch < c; ++ch) v[ch * plane + p] = s * v[ch * plane + p] + (1 - s) * m;
        }
      };
      auto contrast = [&] {
        const double k = d.contrast_factor;
        double m = 0;
        for (double e : v) m += e;
        m /= static_cast<double>(total);
        for (double& e : v) e = k * e + (1 - k) * m;
      };
      // Both linear parts are symmetric operators, so the adjoint only
      // reverses their order.
      if (!transpose) {
        for (double& e : v) e += d.brightness_shift;
        saturation();
        contrast();
      } else {
        contrast();
        saturation();
      }
      for (std::size_t i = 0; i < total; ++i) out[i] = static_cast<T>(v[i]);
      return;
    }
    case Op::kCrop: {
      std::fill(out, out + total, T(0));
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int sy = y - d.shift_y, sx = x - d.shift_x;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            const std::size_t o = ch * plane + static_cast<std::size_t>(y) * w + x;
            const std::size_t s = ch * plane + static_cast<std::size_t>(sy) * w + sx;
            if (!transpose) out[o] = in[s];
            else out[s] = in[o];
          }
      return;
    }
    case Op::kCutout: {
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const bool cut =
                y >= d.cut_y && y < d.cut_y + d.cut_h && x >= d.cut_x && x < d.cut_x + d.cut_w;
            const std::size_t o = ch * plane + static_cast<std::size_t>(y) * w + x;
            out[o] = in[o] * (cut ? T(0) : T(1));
          }
      return;
    }
    case Op::kFlip: {
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const std::size_t row = ch * plane + static_cast<std::size_t>(y) * w;
            out[row + x] = in[row + (d.flip ? w - 1 - x : x)];
          }
      return;
    }
    case Op::kScale:
    case Op::kRotate: {
      const Affine m = affine_for(d, op);
      std::fill(out, out + total, T(0));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const Taps t = bilinear_taps(m, h, w, y, x);
          const int o = y * w + x;
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = ch * plane;
            for (int k = 0; k < t.n; ++k) {
              const auto wt = static_cast<T>(t.w[static_cast<std::size_t>(k)]);
              const int i = t.idx[static_cast<std::size_t>(k)];
              if (!transpose) out[base + o] += wt * in[base + i];
              else out[base + i] += wt * in[base + o];
            }
          }
        }
      return;
    }
  }
}

}  // namespace detail

/// Augments a [B, C, H, W] batch.
template <typename T>
Tensor<T> apply_aug(const Tensor<T>& batch, const AugParams& params) {
  detail::check_batch(batch, params, "apply_aug");
  Tensor<T> out = Tensor<T>::zeros_like(batch);
  for (int b = 0; b < batch.dim(0); ++b) {
    detail::apply_one(params.for_image(b), params.op, batch.dim(1), batch.dim(2), batch.dim(3),
                      batch.slice0(b).data(), out.slice0(b).data(), false);
  }
  return out;
}

/// Gradient of a scalar w.r.t. the input batch, given its gradient w.r.t.
/// apply_aug's output.
template <typename T>
Tensor<T> apply_aug_backward(const Tensor<T>& grad_out, const AugParams& params) {
  detail::check_batch(grad_out, params, "apply_aug_backward");
  Tensor<T> grad_in = Tensor<T>::zeros_like(grad_out);
  for (int b = 0; b < grad_out.dim(0); ++b) {
    detail::apply_one(params.for_image(b), params.op, grad_out.dim(1), grad_out.dim(2),
                      grad_out.dim(3), grad_out.slice0(b).data(), grad_in.slice0(b).data(), true);
  }
  return grad_in;
}

}  // namespace atom::dsa
