// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "atom/core/binary_io.hpp"
#include "atom/core/error.hpp"
#include "atom/core/rng.hpp"
#include "atom/core/tensor.hpp"
#include "atom/data/dataset.hpp"

namespace atom {

/// Pointer from a synthetic set to the preprocessing its pixels live in.
struct PreprocessRef {
  PreprocessMode mode = PreprocessMode::kNone;
  std::uint64_t fingerprint = 0;
  std::string path;  // record file, relative to the container's directory; may be empty

  bool operator==(const PreprocessRef&) const = default;
};

/// The learnable synthetic set. Rows are grouped by class: rows
/// [k * ipc, (k + 1) * ipc) belong to class k, and labels never change.
template <typename T>
struct SyntheticDataset {
  Tensor<T> images;  // [K * ipc, C, H, W]
  std::vector<int> labels;
  int ipc = 0;
  int num_classes = 0;
  std::string origin = "distilled";  // "distilled", "random", "init", ...
  PreprocessRef preprocess;

  int class_begin(int k) const noexcept { return k * ipc; }

  Tensor<T> class_images(int k) const { return images.narrow0(class_begin(k), ipc); }

  std::uint64_t content_hash() const {
    io::Fnv1a h;
    h.update(images.data(), images.size() * sizeof(T));
    h.update(labels.data(), labels.size() * sizeof(int));
    return h.digest();
  }
};

/// Copies `ipc` distinct real images per class, chosen by a seeded shuffle.
template <typename T>
SyntheticDataset<T> init_synthetic(const LabeledImageSet<T>& real, int ipc, std::uint64_t seed) {
  if (ipc < 1) throw ParameterError("init_synthetic: ipc must be >= 1");
  for (int k = 0; k < real.num_classes; ++k) {
    const auto have = real.class_index[static_cast<std::size_t>(k)].size();
    if (have < static_cast<std::size_t>(ipc)) {
      throw InsufficientDataError("init_synthetic: class " + std::to_string(k) + " has " +
                                  std::to_string(have) + " samples, need ipc=" +
                                  std::to_string(ipc));
    }
  }
  Rng rng(seed);
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(real.num_classes) * ipc);
  for (int k = 0; k < real.num_classes; ++k) {
    std::vector<int> pool = real.class_index[static_cast<std::size_t>(k)];
    rng.shuffle(pool);
    rows.insert(rows.end(), pool.begin(), pool.begin() + ipc);
  }
  SyntheticDataset<T> s;
  s.images = real.images.gather0(rows);
  s.ipc = ipc;
  s.num_classes = real.num_classes;
  s.labels.reserve(rows.size());
  for (int k = 0; k < real.num_classes; ++k) s.labels.insert(s.labels.end(), ipc, k);
  s.origin = "init";
  s.preprocess = {real.preprocess.mode, real.preprocess.fingerprint(), ""};
  return s;
}

/// Per-class sampler that walks a shuffled permutation of each class and
/// reshuffles when the remainder cannot fill a batch. Batches never repeat a
/// sample unless the class is smaller than the batch.
class ClassBatchSampler {
 public:
  ClassBatchSampler() = default;

  template <typename T>
  ClassBatchSampler(const LabeledImageSet<T>& real, std::uint64_t seed)
      : rng_(seed), pools_(real.class_index), cursor_(real.class_index.size(), 0) {
    for (auto& p : pools_) rng_.shuffle(p);
  }

  int num_classes() const noexcept { return static_cast<int>(pools_.size()); }

  /// Row indices for one class batch.
  std::vector<int> next(int class_k, int batch_size) {
    if (class_k < 0 || class_k >= num_classes()) {
      throw ParameterError("sample_class_batch: unknown class " + std::to_string(class_k));
    }
    if (batch_size < 1) throw ParameterError("sample_class_batch: batch_size must be >= 1");
    auto& pool = pools_[static_cast<std::size_t>(class_k)];
    auto& cur = cursor_[static_cast<std::size_t>(class_k)];
    if (pool.empty()) {
      throw ParameterError("sample_class_batch: class " + std::to_string(class_k) + " is empty");
    }
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    const auto n = static_cast<int>(pool.size());
    if (batch_size >= n) {
      // Whole class once, then draws with replacement.
      rng_.shuffle(pool);
      out = pool;
      while (static_cast<int>(out.size()) < batch_size) {
        out.push_back(pool[static_cast<std::size_t>(rng_.randint(0, n - 1))]);
      }
      cur = n;
      return out;
    }
    if (cur + batch_size > n) {
      rng_.shuffle(pool);
      cur = 0;
    }
    out.assign(pool.begin() + cur, pool.begin() + cur + batch_size);
    cur += batch_size;
    return out;
  }

  void save(io::Writer& w) const {
    w.str(rng_.state());
    w.pod<std::uint64_t>(pools_.size());
    for (std::size_t k = 0; k < pools_.size(); ++k) {
      w.array(pools_[k]);
      w.pod<std::int64_t>(cursor_[k]);
    }
  }

  void load(io::Reader& r) {
    rng_.set_state(r.str());
    const auto k = r.pod<std::uint64_t>();
    pools_.assign(k, {});
    cursor_.assign(k, 0);
    for (std::size_t i = 0; i < k; ++i) {
      pools_[i] = r.array<int>();
      cursor_[i] = static_cast<int>(r.pod<std::int64_t>());
    }
  }

  bool operator==(const ClassBatchSampler&) const = default;

 private:
  Rng rng_;
  std::vector<std::vector<int>> pools_;
  std::vector<int> cursor_;
};

/// Draws one batch of class `class_k` and advances the sampler.
template <typename T>
Tensor<T> sample_class_batch(const LabeledImageSet<T>& real, int class_k, int batch_size,
                             ClassBatchSampler& state) {
  const auto rows = state.next(class_k, batch_size);
  return real.images.gather0(rows);
}

inline constexpr char kSyntheticMagic[8] = {'A', 'T', 'O', 'M', 'S', 'Y', 'N', '\0'};
inline constexpr std::uint32_t kSyntheticVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return static_cast<std::uint8_t>(sizeof(T));
}

/// Container layout (little-endian):
///   magic[8] "ATOMSYN\0", version u32, dtype u8 (4 = f32, 8 = f64),
///   shape u32[4], num_classes u32, ipc u32, labels (u64 count + i32[]),
///   origin str, preprocess {mode u8, fingerprint u64, path str},
///   payload dtype[prod(shape)].
template <typename T>
void save_synthetic(const SyntheticDataset<T>& s, const std::string& path) {
  io::Writer w;
  w.bytes(kSyntheticMagic, sizeof kSyntheticMagic);
  w.pod<std::uint32_t>(kSyntheticVersion);
  w.pod<std::uint8_t>(dtype_tag<T>());
  for (int d : s.images.shape()) w.pod<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.num_classes));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.ipc));
  w.array(s.labels);
  w.str(s.origin);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(s.preprocess.mode));
  w.pod<std::uint64_t>(s.preprocess.fingerprint);
  w.str(s.preprocess.path);
  w.bytes(s.images.data(), s.images.size() * sizeof(T));
  w.save(path);
}

namespace detail {

template <typename T, typename Stored>
std::vector<T> read_payload(io::Reader& r, std::size_t n) {
  std::vector<Stored> raw(n);
  r.bytes(raw.data(), n * sizeof(Stored));
  return std::vector<T>(raw.begin(), raw.end());
}

}  // namespace detail

template <typename T>
SyntheticDataset<T> load_synthetic(const std::string& path) {
  auto r = io::Reader::from_file(path);
  if (r.remaining() == 0) throw LoadError("'" + path + "' is empty");
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kSyntheticMagic, sizeof magic) != 0) {
    throw LoadError("'" + path + "' is not a synthetic-set container");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kSyntheticVersion) {
    throw LoadError("'" + path + "': container version " + std::to_string(version) +
                    ", expected " + std::to_string(kSyntheticVersion));
  }
  const auto dtype = r.pod<std::uint8_t>();
  if (dtype != 4 && dtype != 8) throw LoadError("'" + path + "': unknown dtype tag");
  std::vector<int> shape(4);
  for (auto& d : shape) d = static_cast<int>(r.pod<std::uint32_t>());
  SyntheticDataset<T> s;
  s.num_classes = static_cast<int>(r.pod<std::uint32_t>());
  s.ipc = static_cast<int>(r.pod<std::uint32_t>());
  s.labels = r.array<int>();
  s.origin = r.str();
  s.preprocess.mode = static_cast<PreprocessMode>(r.pod<std::uint8_t>());
  s.preprocess.fingerprint = r.pod<std::uint64_t>();
  s.preprocess.path = r.str();
  if (shape[0] != s.num_classes * s.ipc || s.labels.size() != static_cast<std::size_t>(shape[0])) {
    throw LoadError("'" + path + "': header shape does not match K * ipc and label count");
  }
  const std::size_t n = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3];
  if (r.remaining() != n * dtype) throw LoadError("'" + path + "' is truncated");
  auto values = dtype == 4 ? detail::read_payload<T, float>(r, n)
                           : detail::read_payload<T, double>(r, n);
  s.images = Tensor<T>(shape, std::move(values));
  return s;
}

}  // namespace atom
