// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "atom/attention/attention.hpp"
#include "atom/augment/dsa.hpp"
#include "atom/core/binary_io.hpp"
#include "atom/core/error.hpp"
#include "atom/core/rng.hpp"
#include "atom/data/dataset.hpp"
#include "atom/data/synthetic.hpp"
#include "atom/engine/config.hpp"
#include "atom/nn/convnet.hpp"

namespace atom {

inline constexpr std::uint32_t kEngineVersion = 1;

struct StepMetrics {
  long iteration = 0;
  LossBreakdown loss;
  double step_ms = 0.0;
};

/// Random streams of a run: network draws, augmentation draws, synthetic
/// sub-batching and real-batch sampling.
struct RunStreams {
  Rng network;
  Rng augment;
  Rng syn;
  ClassBatchSampler sampler;
};

/// Everything that evolves during distillation. Copying a state and stepping
/// both copies identically gives identical results.
template <typename T>
struct DistillState {
  SyntheticDataset<T> synthetic;
  Tensor<T> momentum;
  long iteration = 0;
  RunStreams streams;
  std::vector<StepMetrics> metrics;
};

/// Derives independent stream seeds from one run seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Network spec of `cfg` with input shape and class count of `real`.
template <typename T>
nn::ConvNetSpec network_for(const DistillConfig& cfg, const LabeledImageSet<T>& real) {
  nn::ConvNetSpec s = cfg.net;
  s.in_channels = real.channels();
  s.in_height = real.height();
  s.in_width = real.width();
  s.num_classes = real.num_classes;
  return s;
}

template <typename T>
DistillState<T> make_initial_state(const DistillConfig& cfg, const LabeledImageSet<T>& real) {
  cfg.validate();
  network_for(cfg, real).validate();
  DistillState<T> st;
  st.synthetic = init_synthetic(real, cfg.ipc, split_seed(cfg.seed, 0));
  st.synthetic.origin = "distilled";
  st.momentum = Tensor<T>::zeros_like(st.synthetic.images);
  st.streams.network = Rng(split_seed(cfg.seed, 1));
  st.streams.augment = Rng(split_seed(cfg.seed, 2));
  st.streams.syn = Rng(split_seed(cfg.seed, 3));
  st.streams.sampler = ClassBatchSampler(real, split_seed(cfg.seed, 4));
  return st;
}

/// Loss and gradient w.r.t. the synthetic images for one freshly sampled
/// network, without touching the images.
template <typename T>
LossBreakdown loss_and_gradient(const SyntheticDataset<T>& syn, RunStreams& rs,
                                const DistillConfig& cfg, const LabeledImageSet<T>& real,
                                Tensor<T>& grad) {
  const nn::Network<T> net = nn::build_network<T>(network_for(cfg, real), rs.network.next_u64());
  grad = Tensor<T>::zeros_like(syn.images);
  double atom_sum = 0, mmd_sum = 0;
  std::vector<double> per_layer;
  const int h = real.height(), w = real.width();
  for (int k = 0; k < syn.num_classes; ++k) {
    Tensor<T> real_batch = sample_class_batch(real, k, cfg.batch_real, rs.sampler);
    std::vector<int> rows(static_cast<std::size_t>(syn.ipc));
    for (int j = 0; j < syn.ipc; ++j) rows[static_cast<std::size_t>(j)] = syn.class_begin(k) + j;
    if (cfg.syn_batch_cap > 0 && cfg.syn_batch_cap < syn.ipc) {
      rs.syn.shuffle(rows);
      rows.resize(static_cast<std::size_t>(cfg.syn_batch_cap));
    }
    Tensor<T> syn_batch = syn.images.gather0(rows);

    dsa::AugParams aug;
    if (cfg.augment) {
      aug = dsa::sample_aug(rs.augment, cfg.dsa, h, w,
                            std::max(real_batch.dim(0), syn_batch.dim(0)));
      real_batch = dsa::apply_aug(real_batch, aug);
      syn_batch = dsa::apply_aug(syn_batch, aug);
    }
    const nn::FeatureStack<T> real_f = nn::forward_features<T>(net, real_batch, nullptr, cfg.tap);
    nn::Tape<T> tape;
    const nn::FeatureStack<T> syn_f = nn::forward_features(net, syn_batch, &tape, cfg.tap);

    nn::FeatureGrads<T> fg;
    std::vector<double> layers;
    atom_sum += atom_class_loss(real_f, syn_f, cfg.attention, &layers, &fg.per_layer);
    per_layer.resize(layers.size(), 0.0);
    for (std::size_t l = 0; l < layers.size(); ++l) per_layer[l] += layers[l];
    if (cfg.lambda > 0.0) {
      mmd_sum += mmd_loss(real_f.final_embedding, syn_f.final_embedding, &fg.embedding);
      fg.embedding *= static_cast<T>(cfg.lambda);
    } else {
      mmd_sum += mmd_loss(real_f.final_embedding, syn_f.final_embedding);
    }
    Tensor<T> gx = nn::backward(net, tape, fg);
    if (cfg.augment) gx = dsa::apply_aug_backward(gx, aug);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      auto dst = grad.slice0(rows[j]);
      const auto src = gx.slice0(static_cast<int>(j));
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return total_loss(atom_sum, mmd_sum, cfg.lambda, std::move(per_layer));
}

/// One iteration: fresh network, class-paired batches, shared augmentation,
/// combined loss, then v <- m v + g; S <- S - lr v. Throws DivergenceError
/// (leaving `st` untouched) when the loss is non-finite or above the abort
/// threshold.
template <typename T>
LossBreakdown step(DistillState<T>& st, const DistillConfig& cfg, const LabeledImageSet<T>& real) {
  const auto t0 = std::chrono::steady_clock::now();
  RunStreams streams = st.streams;  // committed only on success
  Tensor<T> grad;
  LossBreakdown loss = loss_and_gradient(st.synthetic, streams, cfg, real, grad);
  if (!std::isfinite(loss.total) || loss.total > cfg.abort_loss || !grad.all_finite()) {
    throw DivergenceError("distillation diverged at iteration " + std::to_string(st.iteration) +
                              ": total loss " + std::to_string(loss.total),
                          st.iteration);
  }
  st.streams = std::move(streams);

  const T m = static_cast<T>(cfg.image_momentum);
  const T lr = static_cast<T>(cfg.lr_images);
  const T wd = static_cast<T>(cfg.weight_decay_images);
  auto& img = st.synthetic.images;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const T g = grad[i] + wd * img[i];
    st.momentum[i] = m * st.momentum[i] + g;
    img[i] -= lr * st.momentum[i];
  }
  const auto t1 = std::chrono::steady_clock::now();
  StepMetrics sm;
  sm.iteration = st.iteration;
  sm.loss = loss;
  sm.step_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  st.metrics.push_back(sm);
  ++st.iteration;
  return loss;
}

using StepCallback = std::function<void(const StepMetrics&)>;

/// Steps until `st.iteration == stop_at` (capped at cfg.iterations).
template <typename T>
void run_until(DistillState<T>& st, const DistillConfig& cfg, const LabeledImageSet<T>& real,
               long stop_at, const StepCallback& on_step = {}) {
  const long end = std::min(stop_at, cfg.iterations);
  while (st.iteration < end) {
    step(st, cfg, real);
    if (on_step) on_step(st.metrics.back());
  }
}

template <typename T>
struct DistillResult {
  SyntheticDataset<T> synthetic;
  std::vector<StepMetrics> metrics;
};

template <typename T>
DistillResult<T> distill(const DistillConfig& cfg, const LabeledImageSet<T>& real,
                         const StepCallback& on_step = {}) {
  DistillState<T> st = make_initial_state(cfg, real);
  run_until(st, cfg, real, cfg.iterations, on_step);
  return {std::move(st.synthetic), std::move(st.metrics)};
}

inline constexpr char kCheckpointMagic[8] = {'A', 'T', 'O', 'M', 'C', 'K', 'P', 'T'};

/// Checkpoint layout: magic, engine version u32, dtype u8, config hash u64,
/// iteration i64, rng states, sampler, synthetic set, momentum, metrics.
template <typename T>
void save_checkpoint(const DistillState<T>& st, const DistillConfig& cfg, const std::string& path) {
  io::Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod<std::uint32_t>(kEngineVersion);
  w.pod<std::uint8_t>(dtype_tag<T>());
  w.pod<std::uint64_t>(cfg.hash());
  w.pod<std::int64_t>(st.iteration);
  w.str(st.streams.network.state());
  w.str(st.streams.augment.state());
  w.str(st.streams.syn.state());
  st.streams.sampler.save(w);
  const auto& s = st.synthetic;
  w.pod<std::int32_t>(s.num_classes);
  w.pod<std::int32_t>(s.ipc);
  w.str(s.origin);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(s.preprocess.mode));
  w.pod<std::uint64_t>(s.preprocess.fingerprint);
  w.str(s.preprocess.path);
  w.array(s.images.shape());
  w.array(s.images.storage());
  w.array(s.labels);
  w.array(st.momentum.storage());
  w.pod<std::uint64_t>(st.metrics.size());
  for (const auto& m : st.metrics) {
    w.pod<std::int64_t>(m.iteration);
    w.pod(m.loss.atom);
    w.pod(m.loss.mmd);
    w.pod(m.loss.total);
    w.pod(m.loss.lambda);
    w.array(m.loss.per_layer);
    w.pod(m.step_ms);
  }
  w.save(path);
}

/// Loads a checkpoint; throws ConfigMismatchError when it was written under a
/// different configuration.
template <typename T>
DistillState<T> resume(const std::string& path, const DistillConfig& cfg) {
  auto r = io::Reader::from_file(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw LoadError("'" + path + "' is not a distillation checkpoint");
  }
  if (const auto v = r.pod<std::uint32_t>(); v != kEngineVersion) {
    throw LoadError("'" + path + "': engine version " + std::to_string(v) + ", expected " +
                    std::to_string(kEngineVersion));
  }
  if (r.pod<std::uint8_t>() != dtype_tag<T>()) throw LoadError("'" + path + "': precision differs");
  const auto hash = r.pod<std::uint64_t>();
  if (hash != cfg.hash()) {
    throw ConfigMismatchError("checkpoint '" + path + "' was written with config " + io::hex64(hash) +
                              ", current config is " + io::hex64(cfg.hash()));
  }
  DistillState<T> st;
  st.iteration = r.pod<std::int64_t>();
  st.streams.network.set_state(r.str());
  st.streams.augment.set_state(r.str());
  st.streams.syn.set_state(r.str());
  st.streams.sampler.load(r);
  auto& s = st.synthetic;
  s.num_classes = r.pod<std::int32_t>();
  s.ipc = r.pod<std::int32_t>();
  s.origin = r.str();
  s.preprocess.mode = static_cast<PreprocessMode>(r.pod<std::uint8_t>());
  s.preprocess.fingerprint = r.pod<std::uint64_t>();
  s.preprocess.path = r.str();
  auto shape = r.array<int>();
  s.images = Tensor<T>(shape, r.array<T>());
  s.labels = r.array<int>();
  st.momentum = Tensor<T>(shape, r.array<T>());
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    StepMetrics m;
    m.iteration = r.pod<std::int64_t>();
    m.loss.atom = r.pod<double>();
    m.loss.mmd = r.pod<double>();
    m.loss.total = r.pod<double>();
    m.loss.lambda = r.pod<double>();
    m.loss.per_layer = r.array<double>();
    m.step_ms = r.pod<double>();
    st.metrics.push_back(std::move(m));
  }
  return st;
}

/// Append-only metrics log with columns iter,atom,mmd,total,step_ms.
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::string& path, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw Error("cannot open metrics log '" + path + "'");
    if (!append) out_ << "iter,atom,mmd,total,step_ms\n";
    out_.precision(10);
  }

  void write(const StepMetrics& m) {
    out_ << m.iteration << ',' << m.loss.atom << ',' << m.loss.mmd << ',' << m.loss.total << ','
         << m.step_ms << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

/// Mean total loss over metrics[begin, end).
inline double window_mean(const std::vector<StepMetrics>& m, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += m[i].loss.total;
  return end > begin ? s / static_cast<double>(end - begin) : 0.0;
}

}  // namespace atom
