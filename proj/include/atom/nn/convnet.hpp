// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "atom/core/error.hpp"
#include "atom/core/rng.hpp"
#include "atom/core/tensor.hpp"
#include "atom/nn/spec.hpp"

namespace atom::nn {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.01;
inline constexpr double kBatchNormMomentum = 0.1;

/// Parameters of one [conv3x3 -> norm -> activation -> pool] block.
template <typename T>
struct Block {
  Tensor<T> weight;  // [out, in, 3, 3]
  Tensor<T> bias;    // [out]
  Tensor<T> gamma;   // [out] or [out, h, w] for layer norm; empty when norm = none
  Tensor<T> beta;
  Tensor<T> running_mean;  // batch norm only
  Tensor<T> running_var;
};

template <typename T>
struct Network {
  ConvNetSpec spec;
  std::vector<Block<T>> blocks;
  Tensor<T> fc_weight;  // [K, E]
  Tensor<T> fc_bias;    // [K]
  /// Batch norm uses batch statistics when true, running statistics otherwise.
  bool training = true;

  /// Trainable tensors in a fixed order (running statistics excluded).
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& b : blocks) {
      out.push_back(&b.weight);
      out.push_back(&b.bias);
      if (!b.gamma.empty()) {
        out.push_back(&b.gamma);
        out.push_back(&b.beta);
      }
    }
    out.push_back(&fc_weight);
    out.push_back(&fc_bias);
    return out;
  }

  std::vector<T> flat_parameters() const {
    std::vector<T> out;
    auto& self = const_cast<Network&>(*this);
    for (auto* p : self.parameters()) out.insert(out.end(), p->values().begin(), p->values().end());
    return out;
  }
};

/// Block outputs at the tap point, the flattened output of the last block and
/// the classifier logits.
template <typename T>
struct FeatureStack {
  std::vector<Tensor<T>> per_layer;  // [B, C_l, H_l, W_l]
  Tensor<T> final_embedding;         // [B, E]
  Tensor<T> logits;                  // [B, K]
};

/// Intermediate values kept by a forward pass for the backward pass.
template <typename T>
struct BlockTape {
  Tensor<T> input;
  Tensor<T> x_hat;          // normalized conv output (norm != none)
  std::vector<T> inv_std;   // one per normalization group
  std::vector<T> batch_mean, batch_var;  // batch norm, training mode
  Tensor<T> pre_act;        // input of the activation
  Tensor<T> act;            // output of the activation
  std::vector<int> argmax;  // max pooling source index per output element
};

template <typename T>
struct Tape {
  std::vector<BlockTape<T>> blocks;
  Tensor<T> embedding;
  TapPoint tap = TapPoint::kPostPool;
  bool training = true;
};

/// Gradients flowing into a forward pass from downstream. Empty tensors mean
/// zero.
template <typename T>
struct FeatureGrads {
  std::vector<Tensor<T>> per_layer;
  Tensor<T> embedding;
  Tensor<T> logits;
};

/// Same layout as Network::parameters().
template <typename T>
using ParamGrads = std::vector<Tensor<T>>;

/// Draws weights with the He normal scheme (std = sqrt(2 / fan_in)); biases
/// zero, norm scale one and shift zero. Deterministic in `seed`.
template <typename T>
void init_weights(Network<T>& net, std::uint64_t seed) {
  Rng rng(seed);
  auto he = [&](Tensor<T>& w, int fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : w.values()) v = static_cast<T>(sd * rng.normal());
  };
  for (auto& b : net.blocks) {
    he(b.weight, b.weight.dim(1) * 9);
    b.bias.fill(T(0));
    if (!b.gamma.empty()) {
      b.gamma.fill(T(1));
      b.beta.fill(T(0));
    }
    if (!b.running_mean.empty()) {
      b.running_mean.fill(T(0));
      b.running_var.fill(T(1));
    }
  }
  he(net.fc_weight, net.fc_weight.dim(1));
  net.fc_bias.fill(T(0));
}

template <typename T>
Network<T> build_network(const ConvNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network<T> net;
  net.spec = spec;
  int in_c = spec.in_channels;
  int h = spec.in_height, w = spec.in_width;
  for (int l = 0; l < spec.depth; ++l) {
    Block<T> b;
    b.weight = Tensor<T>({spec.width, in_c, 3, 3});
    b.bias = Tensor<T>({spec.width});
    switch (spec.norm) {
      case Norm::kNone: break;
      case Norm::kLayer:
        b.gamma = Tensor<T>({spec.width, h, w});
        b.beta = Tensor<T>({spec.width, h, w});
        break;
      case Norm::kBatch:
        b.running_mean = Tensor<T>({spec.width});
        b.running_var = Tensor<T>({spec.width});
        [[fallthrough]];
      default:
        b.gamma = Tensor<T>({spec.width});
        b.beta = Tensor<T>({spec.width});
    }
    net.blocks.push_back(std::move(b));
    in_c = spec.width;
    h = spec.out_height(l);
    w = spec.out_width(l);
  }
  net.fc_weight = Tensor<T>({spec.num_classes, spec.embedding_size()});
  net.fc_bias = Tensor<T>({spec.num_classes});
  init_weights(net, seed);
  return net;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

/// Unfolds one [C, H, W] image into [C*9, H*W] patches (3x3, zero pad 1).
template <typename T>
void im2col(const T* img, int c, int h, int w, RowMat<T>& cols) {
  cols.resize(c * 9, h * w);
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.data() + static_cast<std::size_t>((ch * 9 + ky * 3 + kx)) * h * w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            dst[y * w + x] = (sy < 0 || sy >= h || sx < 0 || sx >= w)
                                 ? T(0)
                                 : img[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
          }
        }
      }
}

template <typename T>
void col2im_add(const RowMat<T>& cols, int c, int h, int w, T* img) {
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = cols.data() + static_cast<std::size_t>((ch * 9 + ky * 3 + kx)) * h * w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            img[(static_cast<std::size_t>(ch) * h + sy) * w + sx] += src[y * w + x];
          }
        }
      }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Block<T>& blk) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int out_c = blk.weight.dim(0);
  Tensor<T> y({n, out_c, h, w});
  CMapMat<T> wm(blk.weight.data(), out_c, c * 9);
  RowMat<T> cols;
  for (int b = 0; b < n; ++b) {
    im2col(x.slice0(b).data(), c, h, w, cols);
    MapMat<T> out(y.slice0(b).data(), out_c, h * w);
    out.noalias() = wm * cols;
    for (int o = 0; o < out_c; ++o) out.row(o).array() += blk.bias[static_cast<std::size_t>(o)];
  }
  return y;
}

/// Returns dL/dx; accumulates weight and bias gradients when given.
template <typename T>
Tensor<T> conv_backward(const Tensor<T>& x, const Block<T>& blk, const Tensor<T>& dy,
                        Tensor<T>* dweight, Tensor<T>* dbias) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int out_c = blk.weight.dim(0);
  Tensor<T> dx = Tensor<T>::zeros_like(x);
  CMapMat<T> wm(blk.weight.data(), out_c, c * 9);
  RowMat<T> cols, dcols;
  for (int b = 0; b < n; ++b) {
    CMapMat<T> g(dy.slice0(b).data(), out_c, h * w);
    if (dweight) {
      im2col(x.slice0(b).data(), c, h, w, cols);
      MapMat<T> dw(dweight->data(), out_c, c * 9);
      dw.noalias() += g * cols.transpose();
      for (int o = 0; o < out_c; ++o) (*dbias)[static_cast<std::size_t>(o)] += g.row(o).sum();
    }
    dcols.noalias() = wm.transpose() * g;
    col2im_add(dcols, c, h, w, dx.slice0(b).data());
  }
  return dx;
}

/// A normalization group: `count` segments of `len` contiguous elements,
/// `stride` apart, starting at `start`.
struct Group {
  std::size_t start, count, stride, len;
};

template <typename T>
std::vector<Group> norm_groups(Norm norm, const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<Group> g;
  switch (norm) {
    case Norm::kInstance:
      for (std::size_t i = 0; i < n * c; ++i) g.push_back({i * plane, 1, 0, plane});
      break;
    case Norm::kGroup: {
      const std::size_t cpg = c / kGroupNormGroups;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < static_cast<std::size_t>(kGroupNormGroups); ++k)
          g.push_back({(b * c + k * cpg) * plane, 1, 0, cpg * plane});
      break;
    }
    case Norm::kLayer:
      for (std::size_t b = 0; b < n; ++b) g.push_back({b * c * plane, 1, 0, c * plane});
      break;
    case Norm::kBatch:
      for (std::size_t ch = 0; ch < c; ++ch) g.push_back({ch * plane, n, c * plane, plane});
      break;
    case Norm::kNone:
      break;
  }
  return g;
}

template <typename F>
void for_each_in(const Group& g, F&& f) {
  for (std::size_t s = 0; s < g.count; ++s) {
    const std::size_t base = g.start + s * g.stride;
    for (std::size_t i = 0; i < g.len; ++i) f(base + i);
  }
}

/// Index into gamma/beta for flat element `i`.
inline std::size_t affine_index(Norm norm, std::size_t i, std::size_t c, std::size_t plane) {
  if (norm == Norm::kLayer) return i % (c * plane);
  return (i / plane) % c;
}

template <typename T>
Tensor<T> norm_forward(const Tensor<T>& x, const Block<T>& blk, Norm norm, bool training,
                       BlockTape<T>& tape) {
  const std::size_t c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  tape.x_hat = Tensor<T>::zeros_like(x);
  tape.inv_std.clear();
  tape.batch_mean.clear();
  tape.batch_var.clear();
  const bool use_running = norm == Norm::kBatch && !training;
  const auto groups = norm_groups(norm, x);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    double mean, var;
    if (use_running) {
      mean = blk.running_mean[gi];
      var = blk.running_var[gi];
    } else {
      double s = 0, ss = 0;
      for_each_in(g, [&](std::size_t i) { s += x[i]; });
      const double m = static_cast<double>(g.count * g.len);
      mean = s / m;
      for_each_in(g, [&](std::size_t i) {
        const double d = x[i] - mean;
        ss += d * d;
      });
      var = ss / m;
      if (norm == Norm::kBatch) {
        tape.batch_mean.push_back(static_cast<T>(mean));
        // Running variance tracks the unbiased estimate.
        tape.batch_var.push_back(static_cast<T>(m > 1 ? ss / (m - 1) : var));
      }
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kNormEps));
    tape.inv_std.push_back(inv);
    const T mu = static_cast<T>(mean);
    for_each_in(g, [&](std::size_t i) { tape.x_hat[i] = (x[i] - mu) * inv; });
  }
  Tensor<T> y = Tensor<T>::zeros_like(x);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t a = affine_index(norm, i, c, plane);
    y[i] = blk.gamma[a] * tape.x_hat[i] + blk.beta[a];
  }
  return y;
}

template <typename T>
Tensor<T> norm_backward(const Tensor<T>& dy, const Block<T>& blk, Norm norm, bool training,
                        const BlockTape<T>& tape, Tensor<T>* dgamma, Tensor<T>* dbeta) {
  const std::size_t c = dy.dim(1);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  Tensor<T> dxhat = Tensor<T>::zeros_like(dy);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const std::size_t a = affine_index(norm, i, c, plane);
    dxhat[i] = dy[i] * blk.gamma[a];
    if (dgamma) {
      (*dgamma)[a] += dy[i] * tape.x_hat[i];
      (*dbeta)[a] += dy[i];
    }
  }
  Tensor<T> dx = Tensor<T>::zeros_like(dy);
  const bool use_running = norm == Norm::kBatch && !training;
  const auto groups = norm_groups(norm, dy);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    const T inv = tape.inv_std[gi];
    if (use_running) {
      for_each_in(g, [&](std::size_t i) { dx[i] = dxhat[i] * inv; });
      continue;
    }
    double mg = 0, mgx = 0;
    for_each_in(g, [&](std::size_t i) {
      mg += dxhat[i];
      mgx += dxhat[i] * tape.x_hat[i];
    });
    const double m = static_cast<double>(g.count * g.len);
    const T a = static_cast<T>(mg / m), b = static_cast<T>(mgx / m);
    for_each_in(g, [&](std::size_t i) { dx[i] = inv * (dxhat[i] - a - tape.x_hat[i] * b); });
  }
  return dx;
}

template <typename T>
T activate(Activation a, T v) {
  switch (a) {
    case Activation::kRelu: return v > T(0) ? v : T(0);
    case Activation::kLeakyRelu: return v > T(0) ? v : static_cast<T>(kLeakySlope) * v;
    case Activation::kSigmoid: return T(1) / (T(1) + std::exp(-v));
  }
  return v;
}

template <typename T>
T activate_grad(Activation a, T pre, T out) {
  switch (a) {
    case Activation::kRelu: return pre > T(0) ? T(1) : T(0);
    case Activation::kLeakyRelu: return pre > T(0) ? T(1) : static_cast<T>(kLeakySlope);
    case Activation::kSigmoid: return out * (T(1) - out);
  }
  return T(1);
}

template <typename T>
Tensor<T> pool_forward(const Tensor<T>& x, Pooling p, std::vector<int>& argmax) {
  if (p == Pooling::kNone) return x;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h / 2, ow = w / 2;
  Tensor<T> y({n, c, oh, ow});
  if (p == Pooling::kMax) argmax.assign(y.size(), 0);
  std::size_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          const std::size_t base = ((static_cast<std::size_t>(b) * c + ch) * h + 2 * yy) * w + 2 * xx;
          const std::size_t idx[4] = {base, base + 1, base + w, base + w + 1};
          if (p == Pooling::kAvg) {
            y[o] = (x[idx[0]] + x[idx[1]] + x[idx[2]] + x[idx[3]]) * T(0.25);
          } else {
            std::size_t best = idx[0];
            for (std::size_t k = 1; k < 4; ++k)
              if (x[idx[k]] > x[best]) best = idx[k];
            y[o] = x[best];
            argmax[o] = static_cast<int>(best);
          }
        }
  return y;
}

template <typename T>
Tensor<T> pool_backward(const Tensor<T>& dy, const Tensor<T>& x, Pooling p,
                        const std::vector<int>& argmax) {
  if (p == Pooling::kNone) return dy;
  Tensor<T> dx = Tensor<T>::zeros_like(x);
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h / 2, ow = w / 2;
  std::size_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          if (p == Pooling::kMax) {
            dx[static_cast<std::size_t>(argmax[o])] += dy[o];
            continue;
          }
          const std::size_t base = ((static_cast<std::size_t>(b) * c + ch) * h + 2 * yy) * w + 2 * xx;
          const T g = dy[o] * T(0.25);
          dx[base] += g;
          dx[base + 1] += g;
          dx[base + w] += g;
          dx[base + w + 1] += g;
        }
  return dx;
}

}  // namespace detail

/// Runs the network on a [B, C, H, W] batch. When `tape` is given, the
/// intermediate values needed by `backward` are recorded in it.
template <typename T>
FeatureStack<T> forward_features(const Network<T>& net, const Tensor<T>& batch,
                                 Tape<T>* tape = nullptr, TapPoint tap = TapPoint::kPostPool) {
  const ConvNetSpec& s = net.spec;
  if (batch.rank() != 4 || batch.dim(1) != s.in_channels || batch.dim(2) != s.in_height ||
      batch.dim(3) != s.in_width) {
    throw ParameterError("forward_features: batch " + batch.shape_string() + " does not match " +
                         s.canonical() + " input [B, " + std::to_string(s.in_channels) + ", " +
                         std::to_string(s.in_height) + ", " + std::to_string(s.in_width) + "]");
  }
  FeatureStack<T> fs;
  Tape<T> local;
  Tape<T>& tp = tape ? *tape : local;
  tp.blocks.assign(net.blocks.size(), {});
  tp.tap = tap;
  tp.training = net.training;
  Tensor<T> x = batch;
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    const Block<T>& blk = net.blocks[l];
    BlockTape<T>& bt = tp.blocks[l];
    Tensor<T> y = detail::conv_forward(x, blk);
    if (s.norm != Norm::kNone) y = detail::norm_forward(y, blk, s.norm, net.training, bt);
    Tensor<T> a = Tensor<T>::zeros_like(y);
    for (std::size_t i = 0; i < y.size(); ++i) a[i] = detail::activate(s.activation, y[i]);
    Tensor<T> pooled = detail::pool_forward(a, s.pooling, bt.argmax);
    fs.per_layer.push_back(tap == TapPoint::kPostPool ? pooled : a);
    if (tape) {
      bt.input = std::move(x);
      bt.pre_act = std::move(y);
      bt.act = std::move(a);
    }
    x = std::move(pooled);
  }
  const int b = batch.dim(0);
  fs.final_embedding = x.reshaped({b, s.embedding_size()});
  fs.logits = Tensor<T>({b, s.num_classes});
  detail::CMapMat<T> emb(fs.final_embedding.data(), b, s.embedding_size());
  detail::CMapMat<T> fw(net.fc_weight.data(), s.num_classes, s.embedding_size());
  detail::MapMat<T> logits(fs.logits.data(), b, s.num_classes);
  logits.noalias() = emb * fw.transpose();
  for (int i = 0; i < b; ++i)
    for (int k = 0; k < s.num_classes; ++k) logits(i, k) += net.fc_bias[static_cast<std::size_t>(k)];
  if (tape) tp.embedding = fs.final_embedding;
  return fs;
}

/// Backpropagates `grads` through a taped forward pass. Returns the gradient
/// w.r.t. the input batch; fills `param_grads` (Network::parameters() order)
/// when non-null.
template <typename T>
Tensor<T> backward(const Network<T>& net, const Tape<T>& tape, const FeatureGrads<T>& grads,
                   ParamGrads<T>* param_grads = nullptr) {
  const ConvNetSpec& s = net.spec;
  if (tape.blocks.size() != net.blocks.size() || tape.blocks.empty() ||
      tape.blocks.front().input.empty()) {
    throw ContractError("backward: tape does not belong to this network");
  }
  if (!grads.per_layer.empty() && grads.per_layer.size() != net.blocks.size()) {
    throw ContractError("backward: per-layer gradient count does not match block count");
  }
  const int b = tape.embedding.dim(0);
  std::vector<Tensor<T>> pg;
  if (param_grads) {
    auto& self = const_cast<Network<T>&>(net);
    for (auto* p : self.parameters()) pg.push_back(Tensor<T>::zeros_like(*p));
  }

  // Gradient w.r.t. the final embedding (= flattened output of the last block).
  Tensor<T> demb({b, s.embedding_size()});
  if (!grads.embedding.empty()) demb += grads.embedding;
  if (!grads.logits.empty()) {
    detail::CMapMat<T> gl(grads.logits.data(), b, s.num_classes);
    detail::CMapMat<T> fw(net.fc_weight.data(), s.num_classes, s.embedding_size());
    detail::MapMat<T>(demb.data(), b, s.embedding_size()).noalias() += gl * fw;
    if (param_grads) {
      detail::CMapMat<T> emb(tape.embedding.data(), b, s.embedding_size());
      Tensor<T>& dfw = pg[pg.size() - 2];
      Tensor<T>& dfb = pg[pg.size() - 1];
      detail::MapMat<T>(dfw.data(), s.num_classes, s.embedding_size()).noalias() += gl.transpose() * emb;
      for (int i = 0; i < b; ++i)
        for (int k = 0; k < s.num_classes; ++k) dfb[static_cast<std::size_t>(k)] += gl(i, k);
    }
  }

  Tensor<T> dout = demb.reshaped({b, s.width, s.out_height(s.depth - 1), s.out_width(s.depth - 1)});
  std::size_t pidx = 0;
  std::vector<std::size_t> block_param_start;
  for (const auto& blk : net.blocks) {
    block_param_start.push_back(pidx);
    pidx += blk.gamma.empty() ? 2 : 4;
  }
  for (int l = static_cast<int>(net.blocks.size()) - 1; l >= 0; --l) {
    const Block<T>& blk = net.blocks[static_cast<std::size_t>(l)];
    const BlockTape<T>& bt = tape.blocks[static_cast<std::size_t>(l)];
    const bool has_tap = !grads.per_layer.empty() && !grads.per_layer[static_cast<std::size_t>(l)].empty();
    if (has_tap && tape.tap == TapPoint::kPostPool) dout += grads.per_layer[static_cast<std::size_t>(l)];
    Tensor<T> da = detail::pool_backward(dout, bt.act, s.pooling, bt.argmax);
    if (has_tap && tape.tap == TapPoint::kPrePool) da += grads.per_layer[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < da.size(); ++i) {
      da[i] *= detail::activate_grad(s.activation, bt.pre_act[i], bt.act[i]);
    }
    const std::size_t ps = block_param_start[static_cast<std::size_t>(l)];
    if (s.norm != Norm::kNone) {
      da = detail::norm_backward(da, blk, s.norm, tape.training, bt,
                                 param_grads ? &pg[ps + 2] : nullptr,
                                 param_grads ? &pg[ps + 3] : nullptr);
    }
    dout = detail::conv_backward(bt.input, blk, da, param_grads ? &pg[ps] : nullptr,
                                 param_grads ? &pg[ps + 1] : nullptr);
  }
  if (param_grads) *param_grads = std::move(pg);
  return dout;
}

/// Folds the batch statistics recorded in `tape` into the running estimates.
template <typename T>
void update_running_stats(Network<T>& net, const Tape<T>& tape) {
  if (net.spec.norm != Norm::kBatch) return;
  const T m = static_cast<T>(kBatchNormMomentum);
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    auto& blk = net.blocks[l];
    const auto& bt = tape.blocks[l];
    for (std::size_t c = 0; c < bt.batch_mean.size(); ++c) {
      blk.running_mean[c] = (T(1) - m) * blk.running_mean[c] + m * bt.batch_mean[c];
      blk.running_var[c] = (T(1) - m) * blk.running_var[c] + m * bt.batch_var[c];
    }
  }
}

}  // namespace atom::nn
