// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference checks of the input-pixel gradients used by distillation:
// the attention losses, the MMD term, and every augmentation op chained into
// the full loss. Runs in double precision on a one-block network.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "atom/attention/attention.hpp"
#include "atom/augment/dsa.hpp"
#include "atom/core/rng.hpp"
#include "atom/core/tensor.hpp"
#include "atom/nn/convnet.hpp"

namespace atom::gradcheck {

struct Options {
  int batch = 2;
  int size = 4;  // input height and width
  int width = 32;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
  /// Name of a suite whose analytic gradient is perturbed (negative control).
  std::string corrupt;
};

struct SuiteResult {
  std::string name;
  double rel_error = 0.0;
  bool passed = false;
  double ms = 0.0;
};

/// max |a - n| / max(max |a|, max |n|).
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale > 0 ? diff / scale : diff;
}

/// Central differences of `f` at `x`, one coordinate at a time.
inline std::vector<double> numeric_gradient(const std::function<double(const Tensor<double>&)>& f,
                                            const Tensor<double>& x, double h) {
  std::vector<double> g(x.size());
  Tensor<double> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    xp[i] = v + h;
    const double fp = f(xp);
    xp[i] = v - h;
    const double fm = f(xp);
    xp[i] = v;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// Loss terms compared by one suite.
struct Objective {
  bool use_atom = true;
  AttentionConfig attention;
  double lambda = 0.0;  // MMD weight
  bool augment = false;
  dsa::AugParams aug;
};

/// Matching loss between `real` and `syn` under `obj`; fills `grad` (w.r.t.
/// `syn`) when non-null.
inline double objective_value(const nn::Network<double>& net, const Tensor<double>& real,
                              const Tensor<double>& syn, const Objective& obj,
                              Tensor<double>* grad) {
  const Tensor<double> r = obj.augment ? dsa::apply_aug(real, obj.aug) : real;
  const Tensor<double> s = obj.augment ? dsa::apply_aug(syn, obj.aug) : syn;
  const auto rf = nn::forward_features<double>(net, r, nullptr);
  nn::Tape<double> tape;
  const auto sf = nn::forward_features(net, s, &tape);
  nn::FeatureGrads<double> fg;
  double loss = 0;
  if (obj.use_atom) loss += atom_class_loss(rf, sf, obj.attention, nullptr, grad ? &fg.per_layer : nullptr);
  if (obj.lambda > 0) {
    loss += obj.lambda * mmd_loss(rf.final_embedding, sf.final_embedding, grad ? &fg.embedding : nullptr);
    if (grad) fg.embedding *= obj.lambda;
  }
  if (grad) {
    Tensor<double> gx = nn::backward(net, tape, fg);
    *grad = obj.augment ? dsa::apply_aug_backward(gx, obj.aug) : gx;
  }
  return loss;
}

namespace detail {

inline Tensor<double> random_images(Rng& rng, int n, int size) {
  Tensor<double> t({n, 3, size, size});
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

/// Draws parameters of `op` with every enabled draw non-trivial.
inline dsa::AugParams draw_op(Rng& rng, dsa::Op op, int size) {
  dsa::Config cfg;
  cfg.enabled.fill(false);
  cfg.set_enabled(op, true);
  cfg.flip_p = 1.0;
  dsa::AugParams p = dsa::sample_aug(rng, cfg, size, size);
  if (op == dsa::Op::kCrop && p.draws[0].shift_x == 0 && p.draws[0].shift_y == 0) p.draws[0].shift_x = 1;
  return p;
}

}  // namespace detail

inline SuiteResult run_suite(const std::string& name, const Objective& obj, const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(opt.seed);
  nn::ConvNetSpec spec;
  spec.depth = 1;
  spec.width = opt.width;
  spec.in_height = spec.in_width = opt.size;
  spec.num_classes = 2;
  const auto net = nn::build_network<double>(spec, rng.next_u64());
  const Tensor<double> real = detail::random_images(rng, opt.batch + 1, opt.size);
  const Tensor<double> syn = detail::random_images(rng, opt.batch, opt.size);

  Tensor<double> grad;
  objective_value(net, real, syn, obj, &grad);
  std::vector<double> analytic(grad.values().begin(), grad.values().end());
  if (opt.corrupt == name) {
    for (std::size_t i = 0; i < analytic.size(); i += 3) analytic[i] *= 1.05;
  }
  const auto numeric = numeric_gradient(
      [&](const Tensor<double>& x) { return objective_value(net, real, x, obj, nullptr); }, syn, opt.step);

  SuiteResult r;
  r.name = name;
  r.rel_error = relative_error(analytic, numeric);
  r.passed = r.rel_error < opt.tolerance;
  r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Suites: spatial, channel, both (attention plus MMD), mmd, and dsa-<op> for
/// each augmentation op chained into the combined loss.
inline std::vector<SuiteResult> run_all(const Options& opt = {}) {
  std::vector<SuiteResult> out;
  Objective o;
  o.attention.mode = MatchMode::kSpatial;
  out.push_back(run_suite("spatial", o, opt));
  o.attention.mode = MatchMode::kChannel;
  out.push_back(run_suite("channel", o, opt));
  o.attention.mode = MatchMode::kBoth;
  o.lambda = 0.01;
  out.push_back(run_suite("both", o, opt));

  Objective m;
  m.use_atom = false;
  m.lambda = 1.0;
  out.push_back(run_suite("mmd", m, opt));

  Rng rng(opt.seed ^ 0xA5A5A5A5ULL);
  for (dsa::Op op : dsa::kAllOps) {
    Objective a = o;
    a.augment = true;
    a.aug = detail::draw_op(rng, op, opt.size);
    out.push_back(run_suite("dsa-" + dsa::to_string(op), a, opt));
  }
  return out;
}

}  // namespace atom::gradcheck
