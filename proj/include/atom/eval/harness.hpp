// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "atom/augment/dsa.hpp"
#include "atom/core/binary_io.hpp"
#include "atom/core/error.hpp"
#include "atom/core/rng.hpp"
#include "atom/data/dataset.hpp"
#include "atom/data/synthetic.hpp"
#include "atom/engine/distill.hpp"
#include "atom/nn/convnet.hpp"

namespace atom {

/// How networks are trained on a (distilled) set and scored on test data.
struct EvalProtocol {
  int n_models = 20;
  int epochs = 300;
  double lr_net = 0.01;
  double net_momentum = 0.9;
  double weight_decay = 5e-4;
  double decay_rate = 0.5;
  int decay_step = 15;
  /// Upper bound on the training batch; the batch is min(batch_cap, |S|).
  int batch_cap = 256;
  bool augment = true;
  dsa::Config dsa;
  /// Architecture; input shape and class count are taken from the data.
  nn::ConvNetSpec arch;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ParameterError("eval protocol: " + m); };
    if (n_models < 1) fail("n_models must be >= 1");
    if (epochs < 0) fail("epochs must be >= 0");
    if (!(lr_net > 0.0 && lr_net <= 1.0)) fail("lr_net must lie in (0, 1]");
    if (!(net_momentum >= 0.0 && net_momentum < 1.0)) fail("net_momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) fail("decay_rate must lie in (0, 1]");
    if (decay_step < 1) fail("decay_step must be >= 1");
    if (batch_cap < 1) fail("batch_cap must be >= 1");
    if (augment && !dsa.any_enabled()) fail("augmentation is on but no op is enabled");
  }

  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "n_models = " << n_models << "\nepochs = " << epochs << "\nlr_net = " << lr_net
       << "\nnet_momentum = " << net_momentum << "\nweight_decay = " << weight_decay
       << "\ndecay_rate = " << decay_rate << "\ndecay_step = " << decay_step
       << "\nbatch_cap = " << batch_cap << "\naugment = " << (augment ? "true" : "false")
       << "\narch = " << arch.canonical() << "\nseed = " << seed << '\n';
    return os.str();
  }

  std::uint64_t hash() const {
    io::Fnv1a h;
    h.update(canonical());
    return h.digest();
  }
};

struct EvalReport {
  double mean_acc = 0.0;  // percent
  double std_acc = 0.0;   // percent, unbiased
  std::vector<double> per_model;
  std::vector<double> runtime_ms;
  std::uint64_t config_hash = 0;
  std::string label;

  bool operator==(const EvalReport& o) const {
    return mean_acc == o.mean_acc && std_acc == o.std_acc && per_model == o.per_model &&
           config_hash == o.config_hash && label == o.label;
  }
};

/// Mean and unbiased (n - 1) standard deviation; std is 0 for one value.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

template <typename T>
nn::ConvNetSpec arch_for(const EvalProtocol& proto, const Tensor<T>& images, int num_classes) {
  nn::ConvNetSpec s = proto.arch;
  s.in_channels = images.dim(1);
  s.in_height = images.dim(2);
  s.in_width = images.dim(3);
  s.num_classes = num_classes;
  return s;
}

/// Top-1 accuracy in percent, batch-norm in inference mode.
template <typename T>
double accuracy(nn::Network<T>& net, const LabeledImageSet<T>& test, int batch = 256) {
  const bool was_training = net.training;
  net.training = false;
  long correct = 0;
  for (int begin = 0; begin < test.size(); begin += batch) {
    const int n = std::min(batch, test.size() - begin);
    const auto fs = nn::forward_features(net, test.images.narrow0(begin, n));
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int k = 1; k < fs.logits.dim(1); ++k)
        if (fs.logits.at(i, k) > fs.logits.at(i, best)) best = k;
      if (best == test.labels[static_cast<std::size_t>(begin + i)]) ++correct;
    }
  }
  net.training = was_training;
  return test.size() > 0 ? 100.0 * static_cast<double>(correct) / test.size() : 0.0;
}

/// Trains one network with SGD (momentum, weight decay, step decay) and
/// softmax cross-entropy. Throws DataError if training produces a non-finite
/// loss.
template <typename T>
nn::Network<T> train_network(const nn::ConvNetSpec& spec, const Tensor<T>& images,
                             const std::vector<int>& labels, const EvalProtocol& proto,
                             std::uint64_t model_seed) {
  nn::Network<T> net = nn::build_network<T>(spec, split_seed(model_seed, 0));
  Rng order_rng(split_seed(model_seed, 1));
  Rng aug_rng(split_seed(model_seed, 2));
  auto params = net.parameters();
  std::vector<Tensor<T>> velocity;
  for (auto* p : params) velocity.push_back(Tensor<T>::zeros_like(*p));
  const int n = images.dim(0);
  const int batch = std::min(proto.batch_cap, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < proto.epochs; ++epoch) {
    const T lr = static_cast<T>(proto.lr_net * std::pow(proto.decay_rate, epoch / proto.decay_step));
    order_rng.shuffle(order);
    for (int begin = 0; begin < n; begin += batch) {
      const int b = std::min(batch, n - begin);
      std::vector<int> rows(order.begin() + begin, order.begin() + begin + b);
      Tensor<T> x = images.gather0(rows);
      if (proto.augment) {
        x = dsa::apply_aug(x, dsa::sample_aug(aug_rng, proto.dsa, x.dim(2), x.dim(3), b));
      }
      nn::Tape<T> tape;
      const auto fs = nn::forward_features(net, x, &tape);
      nn::FeatureGrads<T> fg;
      fg.logits = Tensor<T>::zeros_like(fs.logits);
      double loss = 0;
      const int k = fs.logits.dim(1);
      for (int i = 0; i < b; ++i) {
        double mx = fs.logits.at(i, 0);
        for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(fs.logits.at(i, j)));
        double z = 0;
        for (int j = 0; j < k; ++j) z += std::exp(fs.logits.at(i, j) - mx);
        const int y = labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
        loss += std::log(z) + mx - fs.logits.at(i, y);
        for (int j = 0; j < k; ++j) {
          const double pj = std::exp(fs.logits.at(i, j) - mx) / z;
          fg.logits.at(i, j) = static_cast<T>((pj - (j == y ? 1.0 : 0.0)) / b);
        }
      }
      if (!std::isfinite(loss)) {
        throw DataError("training " + spec.canonical() + " diverged at epoch " + std::to_string(epoch));
      }
      nn::ParamGrads<T> grads;
      nn::backward(net, tape, fg, &grads);
      nn::update_running_stats(net, tape);
      const T mom = static_cast<T>(proto.net_momentum);
      const T wd = static_cast<T>(proto.weight_decay);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = *params[p];
        auto& v = velocity[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = mom * v[i] + grads[p][i] + wd * w[i];
          w[i] -= lr * v[i];
        }
      }
    }
  }
  return net;
}

/// Trains `proto.n_models` networks on (images, labels) and scores each on
/// `test`. Model m uses seed split_seed(proto.seed, m).
template <typename T>
EvalReport train_and_score(const Tensor<T>& images, const std::vector<int>& labels, int num_classes,
                           const LabeledImageSet<T>& test, const EvalProtocol& proto) {
  proto.validate();
  const nn::ConvNetSpec spec = arch_for(proto, images, num_classes);
  EvalReport rep;
  for (int m = 0; m < proto.n_models; ++m) {
    const auto t0 = std::chrono::steady_clock::now();
    nn::Network<T> net = train_network(spec, images, labels, proto, split_seed(proto.seed, static_cast<std::uint64_t>(m)));
    rep.per_model.push_back(accuracy(net, test));
    rep.runtime_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::tie(rep.mean_acc, rep.std_acc) = mean_std(rep.per_model);
  rep.config_hash = proto.hash();
  return rep;
}

/// Throws ContractError when the synthetic set and test data were produced
/// under different preprocessing.
template <typename T>
void require_same_preprocess(const SyntheticDataset<T>& syn, const LabeledImageSet<T>& test) {
  if (syn.preprocess.mode != test.preprocess.mode ||
      syn.preprocess.fingerprint != test.preprocess.fingerprint()) {
    throw ContractError("synthetic set preprocessing (" + to_string(syn.preprocess.mode) + ", " +
                        io::hex64(syn.preprocess.fingerprint) + ") differs from the test data (" +
                        to_string(test.preprocess.mode) + ", " +
                        io::hex64(test.preprocess.fingerprint()) + ")");
  }
}

/// Scores a synthetic set with the evaluation protocol. The set is not
/// modified.
template <typename T>
EvalReport evaluate(const SyntheticDataset<T>& syn, const LabeledImageSet<T>& test,
                    const EvalProtocol& proto) {
  std::vector<bool> seen(static_cast<std::size_t>(test.num_classes), false);
  for (int y : syn.labels)
    if (y >= 0 && y < test.num_classes) seen[static_cast<std::size_t>(y)] = true;
  for (int k = 0; k < test.num_classes; ++k) {
    if (!seen[static_cast<std::size_t>(k)]) {
      throw ContractError("evaluate: class " + std::to_string(k) + " has no synthetic images");
    }
  }
  require_same_preprocess(syn, test);
  EvalReport rep = train_and_score(syn.images, syn.labels, test.num_classes, test, proto);
  io::Fnv1a h;
  h.update_pod(rep.config_hash);
  h.update_pod(syn.content_hash());
  rep.config_hash = h.digest();
  rep.label = syn.origin == "random" ? "baseline=random" : syn.origin;
  return rep;
}

/// Frozen per-class uniform sample of real images.
template <typename T>
SyntheticDataset<T> random_baseline(const LabeledImageSet<T>& real, int ipc, std::uint64_t seed) {
  SyntheticDataset<T> s = init_synthetic(real, ipc, seed);
  s.origin = "random";
  return s;
}

struct CurvePoint {
  long iteration = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
};

/// Scores each (iteration, synthetic set) checkpoint of one run.
template <typename T>
std::vector<CurvePoint> convergence_curve(
    const std::vector<std::pair<long, SyntheticDataset<T>>>& checkpoints,
    const LabeledImageSet<T>& test, const EvalProtocol& proto) {
  if (checkpoints.empty()) throw ParameterError("convergence_curve: no checkpoints given");
  std::vector<CurvePoint> curve;
  for (const auto& [iter, syn] : checkpoints) {
    const EvalReport r = evaluate(syn, test, proto);
    curve.push_back({iter, r.mean_acc, r.std_acc});
  }
  return curve;
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "acc_mean,acc_std,n_models,label\n"
     << r.mean_acc << ',' << r.std_acc << ',' << r.per_model.size() << ',' << r.label << '\n';
  return os.str();
}

}  // namespace atom
