// SPDX-License-Identifier: Apache-2.0
#pragma once

// Attention statistics of intermediate feature maps and the losses that match
// them between real and synthetic batches.
//
// For a feature map f of shape [B, C, H, W]:
//   spatial  a_s[b, h*W + w] = sum_c |f[b, c, h, w]|^p_s
//   channel  a_c[b, c]       = sum_{h, w} |f[b, c, h, w]|^p_c
// Each row is L2-normalized per sample; the layer term is the squared
// distance between the batch means of the normalized rows.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "atom/core/error.hpp"
#include "atom/core/tensor.hpp"
#include "atom/nn/convnet.hpp"

namespace atom {

enum class AttentionKind { kSpatial, kChannel };

/// Which statistic the matching loss compares. kFeatureMap matches raw batch-
/// mean features without attention or normalization (loss ablation only).
enum class MatchMode { kSpatial = 0, kChannel, kBoth, kFeatureMap };

inline std::string to_string(MatchMode m) {
  switch (m) {
    case MatchMode::kSpatial: return "spatial";
    case MatchMode::kChannel: return "channel";
    case MatchMode::kBoth: return "both";
    case MatchMode::kFeatureMap: return "feature-map";
  }
  return "?";
}

inline MatchMode parse_match_mode(const std::string& s) {
  if (s == "spatial") return MatchMode::kSpatial;
  if (s == "channel") return MatchMode::kChannel;
  if (s == "both") return MatchMode::kBoth;
  if (s == "feature-map") return MatchMode::kFeatureMap;
  throw ParameterError("unknown match mode '" + s + "' (expected spatial, channel, both or feature-map)");
}

template <typename T>
struct AttentionVector {
  AttentionKind kind = AttentionKind::kSpatial;
  Tensor<T> values;  // [B, H*W] or [B, C]
  int layer_index = 0;
  double power = 1.0;
};

struct AttentionConfig {
  double p_s = 4.0;
  double p_c = 4.0;
  MatchMode mode = MatchMode::kBoth;
  double spatial_weight = 1.0;
  double channel_weight = 1.0;
  /// Row norms are clamped to at least this before dividing.
  double norm_eps = 1e-8;

  void validate() const {
    if (!(p_s >= 1.0) || !(p_c >= 1.0)) throw ParameterError("attention powers must be >= 1");
    if (!(norm_eps >= 0.0)) throw ParameterError("normalization eps must be >= 0");
    if (!(spatial_weight >= 0.0) || !(channel_weight >= 0.0)) {
      throw ParameterError("attention weights must be >= 0");
    }
  }
};

struct LossBreakdown {
  double atom = 0.0;
  double mmd = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  std::vector<double> per_layer;
};

namespace detail {

template <typename T>
void require_feature_map(const Tensor<T>& f, double p, const char* who) {
  if (!(p >= 1.0)) throw ParameterError(std::string(who) + ": power must be >= 1, got " + std::to_string(p));
  if (f.rank() != 4) throw ParameterError(std::string(who) + ": expected [B, C, H, W], got " + f.shape_string());
}

inline double pow_abs(double v, double p) { return p == 1.0 ? std::abs(v) : std::pow(std::abs(v), p); }

/// d|v|^p / dv.
inline double pow_abs_grad(double v, double p) {
  if (v == 0.0) return 0.0;
  const double s = v > 0 ? 1.0 : -1.0;
  return p == 1.0 ? s : p * std::pow(std::abs(v), p - 1.0) * s;
}

}  // namespace detail

template <typename T>
AttentionVector<T> spatial_attention(const Tensor<T>& f, double p_s, int layer_index = 0) {
  detail::require_feature_map(f, p_s, "spatial_attention");
  const int b = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
  AttentionVector<T> a{AttentionKind::kSpatial, Tensor<T>({b, hw}), layer_index, p_s};
  for (int i = 0; i < b; ++i) {
    const T* src = f.slice0(i).data();
    for (int s = 0; s < hw; ++s) {
      double acc = 0;
      for (int ch = 0; ch < c; ++ch) acc += detail::pow_abs(src[ch * hw + s], p_s);
      a.values.at(i, s) = static_cast<T>(acc);
    }
  }
  return a;
}

template <typename T>
AttentionVector<T> channel_attention(const Tensor<T>& f, double p_c, int layer_index = 0) {
  detail::require_feature_map(f, p_c, "channel_attention");
  const int b = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
  AttentionVector<T> a{AttentionKind::kChannel, Tensor<T>({b, c}), layer_index, p_c};
  for (int i = 0; i < b; ++i) {
    const T* src = f.slice0(i).data();
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (int s = 0; s < hw; ++s) acc += detail::pow_abs(src[ch * hw + s], p_c);
      a.values.at(i, ch) = static_cast<T>(acc);
    }
  }
  return a;
}

/// Gradient w.r.t. f of sum(grad * attention(f)).
template <typename T>
Tensor<T> attention_backward(const Tensor<T>& f, AttentionKind kind, double p, const Tensor<T>& grad) {
  const int b = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
  Tensor<T> df = Tensor<T>::zeros_like(f);
  for (int i = 0; i < b; ++i) {
    const T* src = f.slice0(i).data();
    T* dst = df.slice0(i).data();
    for (int ch = 0; ch < c; ++ch)
      for (int s = 0; s < hw; ++s) {
        const double g = kind == AttentionKind::kSpatial ? grad.at(i, s) : grad.at(i, ch);
        dst[ch * hw + s] = static_cast<T>(g * detail::pow_abs_grad(src[ch * hw + s], p));
      }
  }
  return df;
}

/// Divides each row by max(||row||_2, eps).
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& z, double eps) {
  if (!(eps >= 0.0)) throw ParameterError("normalize_rows: eps must be >= 0");
  Tensor<T> out = z;
  for (int i = 0; i < z.dim(0); ++i) {
    auto row = out.slice0(i);
    double ss = 0;
    for (T v : row) ss += static_cast<double>(v) * v;
    const double d = std::max(std::sqrt(ss), eps);
    if (d == 0.0) continue;
    for (T& v : row) v = static_cast<T>(v / d);
  }
  return out;
}

/// Gradient w.r.t. z of sum(grad * normalize_rows(z, eps)).
template <typename T>
Tensor<T> normalize_rows_backward(const Tensor<T>& z, double eps, const Tensor<T>& grad) {
  Tensor<T> dz = Tensor<T>::zeros_like(z);
  for (int i = 0; i < z.dim(0); ++i) {
    const auto row = z.slice0(i);
    const auto g = grad.slice0(i);
    auto out = dz.slice0(i);
    double ss = 0, dot = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      ss += static_cast<double>(row[j]) * row[j];
      dot += static_cast<double>(row[j]) * g[j];
    }
    const double n = std::sqrt(ss);
    if (n > eps) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        out[j] = static_cast<T>((g[j] - row[j] * dot / ss) / n);
      }
    } else if (eps > 0) {
      for (std::size_t j = 0; j < row.size(); ++j) out[j] = static_cast<T>(g[j] / eps);
    }
  }
  return dz;
}

namespace detail {

template <typename T>
std::vector<double> row_mean(const Tensor<T>& z) {
  const int b = z.dim(0);
  const auto len = z.stride0();
  std::vector<double> m(len, 0.0);
  for (int i = 0; i < b; ++i) {
    const auto row = z.slice0(i);
    for (std::size_t j = 0; j < len; ++j) m[j] += row[j];
  }
  for (double& v : m) v /= b;
  return m;
}

/// One attention term for one layer: returns ||mean(norm(A(real))) -
/// mean(norm(A(syn)))||^2 and, when `grad` is non-null, adds `weight` times
/// its gradient w.r.t. the synthetic feature map into it.
template <typename T>
double attention_term(const Tensor<T>& real, const Tensor<T>& syn, AttentionKind kind, double p,
                      double eps, double weight, Tensor<T>* grad) {
  auto attn = [&](const Tensor<T>& f) {
    return kind == AttentionKind::kSpatial ? spatial_attention(f, p).values : channel_attention(f, p).values;
  };
  const Tensor<T> zs = attn(syn);
  const Tensor<T> ns = normalize_rows(zs, eps);
  const auto mr = row_mean(normalize_rows(attn(real), eps));
  const auto ms = row_mean(ns);
  double loss = 0;
  for (std::size_t j = 0; j < mr.size(); ++j) loss += (mr[j] - ms[j]) * (mr[j] - ms[j]);
  if (grad) {
    const int bs = syn.dim(0);
    Tensor<T> gn = Tensor<T>::zeros_like(ns);
    for (int i = 0; i < bs; ++i) {
      auto row = gn.slice0(i);
      for (std::size_t j = 0; j < mr.size(); ++j) row[j] = static_cast<T>(weight * 2.0 * (ms[j] - mr[j]) / bs);
    }
    *grad += attention_backward(syn, kind, p, normalize_rows_backward(zs, eps, gn));
  }
  return loss;
}

template <typename T>
double feature_map_term(const Tensor<T>& real, const Tensor<T>& syn, Tensor<T>* grad) {
  const auto mr = row_mean(real);
  const auto ms = row_mean(syn);
  double loss = 0;
  for (std::size_t j = 0; j < mr.size(); ++j) loss += (mr[j] - ms[j]) * (mr[j] - ms[j]);
  if (grad) {
    const int bs = syn.dim(0);
    for (int i = 0; i < bs; ++i) {
      auto row = grad->slice0(i);
      for (std::size_t j = 0; j < mr.size(); ++j) row[j] += static_cast<T>(2.0 * (ms[j] - mr[j]) / bs);
    }
  }
  return loss;
}

}  // namespace detail

/// Matching loss of one class. `syn_grads`, when given, receives one gradient
/// tensor per layer w.r.t. the synthetic features.
template <typename T>
double atom_class_loss(const nn::FeatureStack<T>& real, const nn::FeatureStack<T>& syn,
                       const AttentionConfig& cfg, std::vector<double>* per_layer = nullptr,
                       std::vector<Tensor<T>>* syn_grads = nullptr) {
  cfg.validate();
  if (real.per_layer.size() != syn.per_layer.size() || real.per_layer.empty()) {
    throw ContractError("atom_loss: real and synthetic stacks have " +
                        std::to_string(real.per_layer.size()) + " and " +
                        std::to_string(syn.per_layer.size()) + " layers");
  }
  const std::size_t layers = real.per_layer.size();
  if (per_layer) per_layer->assign(layers, 0.0);
  if (syn_grads) {
    syn_grads->clear();
    for (const auto& f : syn.per_layer) syn_grads->push_back(Tensor<T>::zeros_like(f));
  }
  double total = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor<T>& fr = real.per_layer[l];
    const Tensor<T>& fs = syn.per_layer[l];
    if (std::vector<int>(fr.shape().begin() + 1, fr.shape().end()) !=
        std::vector<int>(fs.shape().begin() + 1, fs.shape().end())) {
      throw ContractError("atom_loss: layer " + std::to_string(l) + " shapes differ: " +
                          fr.shape_string() + " vs " + fs.shape_string());
    }
    Tensor<T>* g = syn_grads ? &(*syn_grads)[l] : nullptr;
    double term = 0;
    switch (cfg.mode) {
      case MatchMode::kSpatial:
        term = detail::attention_term(fr, fs, AttentionKind::kSpatial, cfg.p_s, cfg.norm_eps, 1.0, g);
        break;
      case MatchMode::kChannel:
        term = detail::attention_term(fr, fs, AttentionKind::kChannel, cfg.p_c, cfg.norm_eps, 1.0, g);
        break;
      case MatchMode::kBoth:
        term = cfg.spatial_weight * detail::attention_term(fr, fs, AttentionKind::kSpatial, cfg.p_s,
                                                           cfg.norm_eps, cfg.spatial_weight, g) +
               cfg.channel_weight * detail::attention_term(fr, fs, AttentionKind::kChannel, cfg.p_c,
                                                           cfg.norm_eps, cfg.channel_weight, g);
        break;
      case MatchMode::kFeatureMap:
        term = detail::feature_map_term(fr, fs, g);
        break;
    }
    if (per_layer) (*per_layer)[l] = term;
    total += term;
  }
  return total;
}

/// Sum over classes of atom_class_loss; `per_layer` is summed over classes.
template <typename T>
double atom_loss(std::span<const nn::FeatureStack<T>> real, std::span<const nn::FeatureStack<T>> syn,
                 const AttentionConfig& cfg, std::vector<double>* per_layer = nullptr,
                 std::vector<std::vector<Tensor<T>>>* syn_grads = nullptr) {
  if (real.size() != syn.size()) {
    throw ContractError("atom_loss: " + std::to_string(real.size()) + " real vs " +
                        std::to_string(syn.size()) + " synthetic classes");
  }
  double total = 0;
  if (per_layer) per_layer->clear();
  if (syn_grads) syn_grads->assign(real.size(), {});
  for (std::size_t k = 0; k < real.size(); ++k) {
    std::vector<double> layers;
    total += atom_class_loss(real[k], syn[k], cfg, &layers, syn_grads ? &(*syn_grads)[k] : nullptr);
    if (per_layer) {
      per_layer->resize(layers.size(), 0.0);
      for (std::size_t l = 0; l < layers.size(); ++l) (*per_layer)[l] += layers[l];
    }
  }
  return total;
}

/// Squared distance between batch-mean embeddings (linear-kernel MMD).
/// `syn_grad`, when given, receives the gradient w.r.t. `syn_embed`.
template <typename T>
double mmd_loss(const Tensor<T>& real_embed, const Tensor<T>& syn_embed, Tensor<T>* syn_grad = nullptr) {
  if (real_embed.rank() != 2 || syn_embed.rank() != 2 || real_embed.dim(1) != syn_embed.dim(1)) {
    throw ContractError("mmd_loss: embedding widths differ: " + real_embed.shape_string() + " vs " +
                        syn_embed.shape_string());
  }
  if (syn_grad) *syn_grad = Tensor<T>::zeros_like(syn_embed);
  return detail::feature_map_term(real_embed, syn_embed, syn_grad);
}

inline LossBreakdown total_loss(double atom, double mmd, double lambda, std::vector<double> per_layer = {}) {
  if (!(lambda >= 0.0)) throw ParameterError("total_loss: lambda must be >= 0, got " + std::to_string(lambda));
  LossBreakdown b;
  b.atom = atom;
  b.mmd = mmd;
  b.lambda = lambda;
  b.total = atom + lambda * mmd;
  b.per_layer = std::move(per_layer);
  return b;
}

}  // namespace atom
