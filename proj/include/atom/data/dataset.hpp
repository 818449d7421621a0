// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "atom/core/error.hpp"
#include "atom/core/rng.hpp"
#include "atom/core/tensor.hpp"
#include "atom/data/preprocess.hpp"

namespace atom {

/// Images with integer class labels. `class_index[k]` lists the rows of class k
/// in ascending order.
template <typename T>
struct LabeledImageSet {
  Tensor<T> images;  // [N, C, H, W]
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::vector<int>> class_index;
  PreprocessRecord preprocess;

  int size() const noexcept { return static_cast<int>(labels.size()); }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }

  /// Rebuilds `class_index` from `labels` and checks the set invariants.
  void reindex() {
    if (images.rank() != 4 || images.dim(0) != size()) {
      throw DataError("image set: " + std::to_string(size()) + " labels for images " +
                      images.shape_string());
    }
    class_index.assign(static_cast<std::size_t>(num_classes), {});
    for (int i = 0; i < size(); ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      if (y < 0 || y >= num_classes) {
        throw DataError("image set: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
      }
      class_index[static_cast<std::size_t>(y)].push_back(i);
    }
  }
};

template <typename T>
struct DatasetSplits {
  std::string name;
  LabeledImageSet<T> train;
  LabeledImageSet<T> test;
};

/// Fits preprocessing on the training split and applies it to both splits.
template <typename T>
void preprocess_splits(DatasetSplits<T>& splits, PreprocessMode mode, double zca_eps) {
  PreprocessRecord rec = fit_preprocess(splits.train.images, mode, zca_eps);
  splits.train.images = apply_preprocess(rec, splits.train.images);
  splits.test.images = apply_preprocess(rec, splits.test.images);
  splits.train.preprocess = rec;
  splits.test.preprocess = rec;
  detail::require_finite(splits.train.images, "preprocess_splits");
}

/// Fingerprint of raw training data (labels plus sampled pixel bytes).
template <typename T>
std::uint64_t dataset_fingerprint(const LabeledImageSet<T>& set) {
  io::Fnv1a h;
  h.update_pod(set.num_classes);
  for (int d : set.images.shape()) h.update_pod(d);
  h.update(set.labels.data(), set.labels.size() * sizeof(int));
  h.update(set.images.data(), set.images.size() * sizeof(T));
  return h.digest();
}

namespace detail {

struct BinaryLayout {
  int label_bytes;   // bytes preceding the pixels
  int label_offset;  // which of those bytes (or the u16 start) holds the label
  bool label_u16;
  int channels, height, width;
  int num_classes;
};

template <typename T>
LabeledImageSet<T> read_binary_records(const std::vector<std::filesystem::path>& files,
                                       const BinaryLayout& layout) {
  const std::size_t pixels = static_cast<std::size_t>(layout.channels) * layout.height * layout.width;
  const std::size_t record = static_cast<std::size_t>(layout.label_bytes) + pixels;
  std::vector<unsigned char> raw;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw LoadError("dataset file missing: " + f.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % record != 0) {
      throw LoadError("dataset file corrupt: " + f.string() + " has " +
                      std::to_string(bytes.size()) + " bytes, not a multiple of the " +
                      std::to_string(record) + "-byte record");
    }
    raw.insert(raw.end(), bytes.begin(), bytes.end());
  }
  const int n = static_cast<int>(raw.size() / record);
  LabeledImageSet<T> set;
  set.num_classes = layout.num_classes;
  set.images = Tensor<T>({n, layout.channels, layout.height, layout.width});
  set.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = raw.data() + static_cast<std::size_t>(i) * record;
    int label = rec[layout.label_offset];
    if (layout.label_u16) label |= rec[layout.label_offset + 1] << 8;
    if (label >= layout.num_classes) {
      throw LoadError("dataset record " + std::to_string(i) + " has label " +
                      std::to_string(label) + " >= " + std::to_string(layout.num_classes));
    }
    set.labels[static_cast<std::size_t>(i)] = label;
    auto dst = set.images.slice0(i);
    for (std::size_t p = 0; p < pixels; ++p) {
      dst[p] = static_cast<T>(rec[layout.label_bytes + p]) / T(255);
    }
  }
  set.preprocess = identity_preprocess(layout.channels, layout.height, layout.width);
  set.reindex();
  return set;
}

inline std::filesystem::path first_existing(const std::filesystem::path& root,
                                            std::initializer_list<const char*> subdirs) {
  for (const char* s : subdirs) {
    auto p = root / s;
    if (std::filesystem::is_directory(p)) return p;
  }
  return root;
}

/// One toy image: a noisy background plus a small striped patch at a random
/// location. Stripe orientation and a weak tint carry the class; location,
/// brightness and patch color jitter are nuisance.
template <typename T>
void draw_toy_image(Rng& rng, int label, std::span<T> px) {
  constexpr int kSize = 8, kPatch = 4;
  const double brightness = rng.uniform(-0.15, 0.15);
  std::array<double, 3> tint{0.0, 0.0, 0.0};
  for (auto& t : tint) t = rng.uniform(-0.25, 0.25);
  tint[0] += label == 0 ? 0.08 : -0.08;
  tint[2] += label == 0 ? -0.08 : 0.08;
  const int oy = static_cast<int>(rng.randint(0, kSize - kPatch));
  const int ox = static_cast<int>(rng.randint(0, kSize - kPatch));
  const int phase = static_cast<int>(rng.randint(0, 1));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < kSize; ++y) {
      for (int x = 0; x < kSize; ++x) {
        double v = 0.5 + brightness + 0.12 * rng.normal();
        const bool inside = y >= oy && y < oy + kPatch && x >= ox && x < ox + kPatch;
        if (inside) {
          const int along = label == 0 ? y - oy : x - ox;
          const double stripe = ((along + phase) % 2 == 0) ? 0.3 : -0.3;
          v += stripe + tint[static_cast<std::size_t>(c)];
        }
        v = std::clamp(v, 0.0, 1.0);
        // Quantize like 8-bit image data.
        px[static_cast<std::size_t>((c * kSize + y) * kSize + x)] =
            static_cast<T>(std::round(v * 255.0) / 255.0);
      }
    }
  }
}

template <typename T>
LabeledImageSet<T> make_toy_split(std::uint64_t seed, int per_class) {
  constexpr int kClasses = 2;
  LabeledImageSet<T> set;
  set.num_classes = kClasses;
  const int n = kClasses * per_class;
  set.images = Tensor<T>({n, 3, 8, 8});
  set.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int label = i % kClasses;
    set.labels[static_cast<std::size_t>(i)] = label;
    draw_toy_image(rng, label, set.images.slice0(i));
  }
  set.preprocess = identity_preprocess(3, 8, 8);
  set.reindex();
  return set;
}

}  // namespace detail

/// Deterministic 2-class 8x8 RGB fixture: 64 training images (32 per class)
/// and `test_per_class` test images per class, pixels in [0, 1].
template <typename T>
DatasetSplits<T> make_toy_fixture(int test_per_class = 64) {
  DatasetSplits<T> s;
  s.name = "toy-fixture";
  s.train = detail::make_toy_split<T>(0x70F1, 32);
  s.test = detail::make_toy_split<T>(0x7E57, test_per_class);
  return s;
}

/// Loads raw pixels in [0, 1] with identity preprocessing.
///
/// Root layout:
///   cifar10       cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin
///   cifar100      cifar-100-binary/{train,test}.bin (fine labels)
///   tinyimagenet  tiny-imagenet-bin/{train,val}.bin, records of a
///                 little-endian u16 label followed by 3x64x64 CHW bytes
///   toy-fixture   generated, root ignored
template <typename T>
DatasetSplits<T> load_dataset(const std::string& name, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  DatasetSplits<T> s;
  s.name = name;
  if (name == "toy-fixture") return make_toy_fixture<T>();
  if (name == "cifar10") {
    const fs::path dir = detail::first_existing(root, {"cifar-10-batches-bin"});
    const detail::BinaryLayout layout{1, 0, false, 3, 32, 32, 10};
    std::vector<fs::path> train;
    for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    s.train = detail::read_binary_records<T>(train, layout);
    s.test = detail::read_binary_records<T>({dir / "test_batch.bin"}, layout);
    return s;
  }
  if (name == "cifar100") {
    const fs::path dir = detail::first_existing(root, {"cifar-100-binary"});
    const detail::BinaryLayout layout{2, 1, false, 3, 32, 32, 100};
    s.train = detail::read_binary_records<T>({dir / "train.bin"}, layout);
    s.test = detail::read_binary_records<T>({dir / "test.bin"}, layout);
    return s;
  }
  if (name == "tinyimagenet") {
    const fs::path dir = detail::first_existing(root, {"tiny-imagenet-bin"});
    const detail::BinaryLayout layout{2, 0, true, 3, 64, 64, 200};
    s.train = detail::read_binary_records<T>({dir / "train.bin"}, layout);
    s.test = detail::read_binary_records<T>({dir / "val.bin"}, layout);
    return s;
  }
  throw UnsupportedDatasetError("unsupported dataset '" + name +
                                "' (expected cifar10, cifar100, tinyimagenet or toy-fixture)");
}

}  // namespace atom
