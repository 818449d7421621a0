// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <sstream>
#include <string>
#include <vector>

#include "atom/core/error.hpp"

namespace atom::nn {

enum class Activation { kSigmoid = 0, kRelu, kLeakyRelu };
enum class Norm { kNone = 0, kBatch, kLayer, kInstance, kGroup };
enum class Pooling { kNone = 0, kMax, kAvg };

/// Where block features are read for matching: after pooling (block output)
/// or after the activation but before pooling.
enum class TapPoint { kPostPool = 0, kPrePool };

inline constexpr std::array<int, 4> kGridDepths = {1, 2, 3, 4};
inline constexpr std::array<int, 4> kGridWidths = {32, 64, 128, 256};
inline constexpr std::array<Activation, 3> kGridActivations = {
    Activation::kSigmoid, Activation::kRelu, Activation::kLeakyRelu};
inline constexpr std::array<Norm, 5> kGridNorms = {Norm::kNone, Norm::kBatch, Norm::kLayer,
                                                   Norm::kInstance, Norm::kGroup};
inline constexpr std::array<Pooling, 3> kGridPoolings = {Pooling::kNone, Pooling::kMax,
                                                         Pooling::kAvg};
inline constexpr int kGroupNormGroups = 4;

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leakyrelu";
  }
  return "?";
}
inline std::string to_string(Norm n) {
  switch (n) {
    case Norm::kNone: return "none";
    case Norm::kBatch: return "batch";
    case Norm::kLayer: return "layer";
    case Norm::kInstance: return "instance";
    case Norm::kGroup: return "group";
  }
  return "?";
}
inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::kNone: return "none";
    case Pooling::kMax: return "max";
    case Pooling::kAvg: return "avg";
  }
  return "?";
}
inline std::string to_string(TapPoint t) { return t == TapPoint::kPostPool ? "post-pool" : "pre-pool"; }

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<E, N>& all, const char* what) {
  for (E e : all)
    if (to_string(e) == s) return e;
  throw ParameterError(std::string("unknown ") + what + " '" + s + "'");
}

inline Activation parse_activation(const std::string& s) {
  if (s == "leaky-relu") return Activation::kLeakyRelu;
  return parse_enum(s, kGridActivations, "activation");
}
inline Norm parse_norm(const std::string& s) { return parse_enum(s, kGridNorms, "norm"); }
inline Pooling parse_pooling(const std::string& s) { return parse_enum(s, kGridPoolings, "pooling"); }
inline TapPoint parse_tap_point(const std::string& s) {
  if (s == "post-pool") return TapPoint::kPostPool;
  if (s == "pre-pool") return TapPoint::kPrePool;
  throw ParameterError("unknown tap point '" + s + "' (expected post-pool or pre-pool)");
}

/// One point of the ConvNet family plus the input/output shapes it serves.
struct ConvNetSpec {
  int depth = 3;
  int width = 128;
  Activation activation = Activation::kRelu;
  Norm norm = Norm::kInstance;
  Pooling pooling = Pooling::kAvg;
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  int num_classes = 10;

  /// "D{d}-W{w}-{act}-{norm}-{pool}".
  std::string canonical() const {
    std::ostringstream os;
    os << 'D' << depth << "-W" << width << '-' << to_string(activation) << '-' << to_string(norm)
       << '-' << to_string(pooling);
    return os.str();
  }

  /// Spatial size after block `l` (0-based) along one axis.
  int spatial_after(int l, int in) const { return pooling == Pooling::kNone ? in : in >> (l + 1); }
  int out_height(int l) const { return spatial_after(l, in_height); }
  int out_width(int l) const { return spatial_after(l, in_width); }

  int embedding_size() const {
    return width * out_height(depth - 1) * out_width(depth - 1);
  }

  bool on_grid() const {
    auto in = [](auto v, const auto& arr) {
      for (auto a : arr)
        if (a == v) return true;
      return false;
    };
    return in(depth, kGridDepths) && in(width, kGridWidths) &&
           in(activation, kGridActivations) && in(norm, kGridNorms) && in(pooling, kGridPoolings);
  }

  void validate() const {
    if (!on_grid()) throw ParameterError("network spec " + canonical() + " is not on the ConvNet grid");
    if (in_channels < 1 || in_height < 1 || in_width < 1 || num_classes < 1) {
      throw ParameterError("network spec " + canonical() + ": bad input shape or class count");
    }
    if (pooling != Pooling::kNone) {
      const int f = 1 << depth;
      if (in_height % f != 0 || in_width % f != 0) {
        throw ParameterError("network spec " + canonical() + ": input " +
                             std::to_string(in_height) + "x" + std::to_string(in_width) +
                             " cannot be halved " + std::to_string(depth) + " times");
      }
    }
  }

  bool operator==(const ConvNetSpec&) const = default;
};

/// Parses "D3-W128-relu-instance-avg"; shapes are taken from `shape_from`.
inline ConvNetSpec parse_spec(const std::string& s, const ConvNetSpec& shape_from = {}) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, '-');) parts.push_back(p);
  if (parts.size() != 5 || parts[0].size() < 2 || parts[0][0] != 'D' || parts[1].size() < 2 ||
      parts[1][0] != 'W') {
    throw ParameterError("malformed network spec '" + s + "'");
  }
  ConvNetSpec spec = shape_from;
  try {
    spec.depth = std::stoi(parts[0].substr(1));
    spec.width = std::stoi(parts[1].substr(1));
  } catch (const std::exception&) {
    throw ParameterError("malformed network spec '" + s + "'");
  }
  spec.activation = parse_activation(parts[2]);
  spec.norm = parse_norm(parts[3]);
  spec.pooling = parse_pooling(parts[4]);
  return spec;
}

}  // namespace atom::nn
