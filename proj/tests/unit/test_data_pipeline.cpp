// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "atom/data/dataset.hpp"
#include "atom/data/preprocess.hpp"
#include "atom/data/synthetic.hpp"
#include "support/helpers.hpp"

using namespace atom;
using testing_support::TempDir;

namespace {

/// Sample covariance of flattened images, computed with plain loops.
Eigen::MatrixXd loop_covariance(const Tensor<double>& x) {
  const int n = x.dim(0);
  const int d = static_cast<int>(x.stride0());
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += x.slice0(i)[static_cast<std::size_t>(j)] / n;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      double s = 0;
      for (int i = 0; i < n; ++i)
        s += (x.slice0(i)[static_cast<std::size_t>(a)] - mean[static_cast<std::size_t>(a)]) *
             (x.slice0(i)[static_cast<std::size_t>(b)] - mean[static_cast<std::size_t>(b)]);
      c(a, b) = s / (n - 1);
    }
  return c;
}

/// Four 2-pixel "images" at (+-1, +-1), scaled so the sample covariance is
/// exactly diag(v0, v1).
Tensor<double> square_points(double v0, double v1) {
  const double k = std::sqrt(3.0) / 2.0;
  Tensor<double> t({4, 2, 1, 1});
  const int sx[4] = {1, 1, -1, -1}, sy[4] = {1, -1, 1, -1};
  for (int i = 0; i < 4; ++i) {
    t.at(i, 0, 0, 0) = k * std::sqrt(v0) * sx[i];
    t.at(i, 1, 0, 0) = k * std::sqrt(v1) * sy[i];
  }
  return t;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<unsigned char> cifar_records(int n, int label_bytes, int pixels, int label) {
  std::vector<unsigned char> b;
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < label_bytes; ++l) b.push_back(static_cast<unsigned char>(label));
    for (int p = 0; p < pixels; ++p) b.push_back(static_cast<unsigned char>((p + i) % 256));
  }
  return b;
}

}  // namespace

TEST(LoadDataset, ToyFixtureShapeAndDeterminism) {
  const auto a = load_dataset<float>("toy-fixture", "/unused");
  EXPECT_EQ(a.train.size(), 64);
  EXPECT_EQ(a.train.num_classes, 2);
  EXPECT_EQ(a.train.images.shape(), (std::vector<int>{64, 3, 8, 8}));
  EXPECT_EQ(a.test.num_classes, 2);
  std::vector<int> seen(64, 0);
  for (const auto& cls : a.train.class_index)
    for (int i : cls) ++seen[static_cast<std::size_t>(i)];
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_EQ(a.train.class_index[0].size(), 32u);
  const auto b = load_dataset<float>("toy-fixture", "/unused");
  EXPECT_TRUE(a.train.images == b.train.images);
  EXPECT_EQ(a.train.labels, b.train.labels);
  for (float v : a.train.images.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(LoadDataset, UnknownNameIsUnsupported) {
  EXPECT_THROW(load_dataset<float>("mnist", "/tmp"), UnsupportedDatasetError);
}

TEST(LoadDataset, MissingFilesAreLoadErrors) {
  TempDir dir("missing");
  EXPECT_THROW(load_dataset<float>("cifar10", dir.path()), LoadError);
  EXPECT_THROW(load_dataset<float>("cifar100", dir.path()), LoadError);
  EXPECT_THROW(load_dataset<float>("tinyimagenet", dir.path()), LoadError);
}

TEST(LoadDataset, ReadsCifar10BinaryLayout) {
  TempDir dir("cifar10");
  const auto base = dir.path() / "cifar-10-batches-bin";
  for (int i = 1; i <= 5; ++i) {
    write_bytes(base / ("data_batch_" + std::to_string(i) + ".bin"), cifar_records(2, 1, 3072, i));
  }
  write_bytes(base / "test_batch.bin", cifar_records(3, 1, 3072, 9));
  const auto s = load_dataset<double>("cifar10", dir.path());
  EXPECT_EQ(s.train.size(), 10);
  EXPECT_EQ(s.test.size(), 3);
  EXPECT_EQ(s.train.num_classes, 10);
  EXPECT_EQ(s.train.images.shape(), (std::vector<int>{10, 3, 32, 32}));
  EXPECT_EQ(s.train.labels[0], 1);
  EXPECT_EQ(s.train.labels[9], 5);
  EXPECT_EQ(s.test.labels[2], 9);
  EXPECT_DOUBLE_EQ(s.train.images.at(0, 0, 0, 5), 5.0 / 255.0);
  EXPECT_DOUBLE_EQ(s.train.images.at(1, 0, 0, 5), 6.0 / 255.0);
}

TEST(LoadDataset, CorruptFileSizeIsLoadError) {
  TempDir dir("corrupt");
  const auto base = dir.path() / "cifar-100-binary";
  auto b = cifar_records(2, 2, 3072, 3);
  b.pop_back();
  write_bytes(base / "train.bin", b);
  write_bytes(base / "test.bin", cifar_records(1, 2, 3072, 3));
  EXPECT_THROW(load_dataset<float>("cifar100", dir.path()), LoadError);
}

TEST(LoadDataset, ReadsTinyImageNetLayout) {
  TempDir dir("tiny");
  const auto base = dir.path() / "tiny-imagenet-bin";
  std::vector<unsigned char> rec;
  for (int label : {199, 7}) {
    rec.push_back(static_cast<unsigned char>(label & 0xFF));
    rec.push_back(static_cast<unsigned char>(label >> 8));
    rec.insert(rec.end(), 3 * 64 * 64, 128);
  }
  write_bytes(base / "train.bin", rec);
  write_bytes(base / "val.bin", rec);
  const auto s = load_dataset<float>("tinyimagenet", dir.path());
  EXPECT_EQ(s.train.num_classes, 200);
  EXPECT_EQ(s.train.images.shape(), (std::vector<int>{2, 3, 64, 64}));
  EXPECT_EQ(s.train.labels, (std::vector<int>{199, 7}));
}

TEST(LoadDataset, RealCifar10CountsWhenAvailable) {
  const char* root = std::getenv("ATOM_DATA_ROOT");
  if (!root || !std::filesystem::exists(std::filesystem::path(root) / "cifar-10-batches-bin")) {
    GTEST_SKIP() << "CIFAR-10 binaries not present under ATOM_DATA_ROOT";
  }
  const auto s = load_dataset<float>("cifar10", root);
  EXPECT_EQ(s.train.size(), 50000);
  EXPECT_EQ(s.test.size(), 10000);
  EXPECT_EQ(s.train.num_classes, 10);
}

TEST(FitZca, WhiteDataGivesIdentity) {
  const auto rec = fit_zca(square_points(1.0, 1.0), 0.0);
  EXPECT_LT((rec.zca_matrix - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitZca, DiagonalCovarianceIsWhitenedExactly) {
  const auto x = square_points(2.0, 0.5);
  const Eigen::MatrixXd c = loop_covariance(x);
  EXPECT_NEAR(c(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(c(1, 1), 0.5, 1e-12);
  EXPECT_NEAR(c(0, 1), 0.0, 1e-12);
  const auto rec = fit_zca(x, 0.0);
  // For a diagonal covariance W = diag(1/sqrt(2), 1/sqrt(0.5)).
  EXPECT_NEAR(rec.zca_matrix(0, 0), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(rec.zca_matrix(1, 1), std::sqrt(2.0), 1e-12);
  auto y = x;
  const Eigen::MatrixXd white = rec.zca_matrix;
  for (int i = 0; i < 4; ++i) {
    const double a = x.at(i, 0, 0, 0), b = x.at(i, 1, 0, 0);
    y.at(i, 0, 0, 0) = white(0, 0) * a + white(0, 1) * b;
    y.at(i, 1, 0, 0) = white(1, 0) * a + white(1, 1) * b;
  }
  EXPECT_LT((loop_covariance(y) - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitZca, MatrixTimesInverseIsIdentity) {
  Rng rng(11);
  const auto x = testing_support::random_tensor(rng, {40, 2, 3, 3});
  const auto rec = fit_zca(x, 0.1);
  const Eigen::MatrixXd p = rec.zca_matrix * rec.zca_inverse;
  EXPECT_LT((p - Eigen::MatrixXd::Identity(p.rows(), p.cols())).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(FitZca, RejectsBadInputs) {
  Rng rng(1);
  auto x = testing_support::random_tensor(rng, {10, 1, 2, 2});
  EXPECT_THROW(fit_zca(x, -1.0), ParameterError);
  EXPECT_THROW(fit_zca(x.narrow0(0, 1), 0.1), ParameterError);
  x[3] = std::nan("");
  EXPECT_THROW(fit_zca(x, 0.1), DataError);
  // Three points in four dimensions: rank-deficient covariance.
  auto few = testing_support::random_tensor(rng, {3, 1, 2, 2});
  EXPECT_THROW(fit_zca(few, 0.0), DataError);
}

TEST(FitZca, ToyFixtureIsWhitenedToIdentity) {
  // 256 images exceed the 192 pixel dimensions, so the covariance has full rank.
  const auto toy = make_toy_fixture<double>(128);
  const auto rec = fit_preprocess(toy.test.images, PreprocessMode::kZca, 1e-6);
  const auto y = apply_preprocess(rec, toy.test.images);
  const Eigen::MatrixXd c = loop_covariance(y);
  const Eigen::MatrixXd off = c - Eigen::MatrixXd(c.diagonal().asDiagonal());
  EXPECT_LT(off.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((c.diagonal().array() - 1.0).abs().maxCoeff(), 1e-3);
}

TEST(Preprocess, RoundTripWithinTolerance) {
  const auto toy = make_toy_fixture<double>();
  for (auto mode : {PreprocessMode::kNone, PreprocessMode::kMeanStd, PreprocessMode::kZca}) {
    const auto rec = fit_preprocess(toy.train.images, mode, 0.1);
    const auto back = invert_preprocess(rec, apply_preprocess(rec, toy.train.images));
    EXPECT_LT(max_abs_diff(back, toy.train.images), 1e-4) << to_string(mode);
  }
}

TEST(Preprocess, MeanStdMapsTheMeanToZero) {
  Rng rng(2);
  const auto x = testing_support::random_tensor(rng, {16, 3, 2, 2}, 0.0, 1.0);
  const auto rec = fit_mean_std(x);
  Tensor<double> m({1, 3, 2, 2});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 2; ++xx) m.at(0, c, y, xx) = rec.mean[static_cast<std::size_t>(c)];
  const auto out = apply_preprocess(rec, m);
  for (double v : out.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Preprocess, ShapeMismatchIsParameterError) {
  const auto rec = identity_preprocess(3, 8, 8);
  EXPECT_THROW(apply_preprocess(rec, Tensor<float>({1, 3, 4, 4})), ParameterError);
  EXPECT_THROW(invert_preprocess(rec, Tensor<float>({1, 1, 8, 8})), ParameterError);
}

TEST(Preprocess, RecordFileRoundTrip) {
  TempDir dir("pre");
  const auto toy = make_toy_fixture<double>();
  const auto rec = fit_preprocess(toy.train.images, PreprocessMode::kZca, 0.1);
  save_preprocess(rec, dir.str("p.bin"));
  const auto back = load_preprocess(dir.str("p.bin"));
  EXPECT_EQ(back.fingerprint(), rec.fingerprint());
  EXPECT_TRUE(back.zca_inverse == rec.zca_inverse);
}

TEST(Preprocess, SplitsShareTheTrainingFit) {
  auto s = make_toy_fixture<float>();
  const auto raw_test = s.test.images;
  preprocess_splits(s, PreprocessMode::kMeanStd, 0.1);
  EXPECT_EQ(s.train.preprocess.fingerprint(), s.test.preprocess.fingerprint());
  const auto direct = fit_mean_std(make_toy_fixture<float>().train.images);
  EXPECT_EQ(direct.fingerprint(), s.train.preprocess.fingerprint());
  EXPECT_TRUE(apply_preprocess(direct, raw_test) == s.test.images);
}

TEST(InitSynthetic, CopiesRealSamplesOfTheRightClass) {
  const auto toy = make_toy_fixture<float>();
  const auto s = init_synthetic(toy.train, 1, 0);
  EXPECT_EQ(s.images.dim(0), 2);
  EXPECT_EQ(s.labels, (std::vector<int>{0, 1}));
  for (int k = 0; k < 2; ++k) {
    bool found = false;
    for (int i : toy.train.class_index[static_cast<std::size_t>(k)]) {
      const auto a = toy.train.images.slice0(i);
      const auto b = s.images.slice0(k);
      if (std::equal(a.begin(), a.end(), b.begin())) found = true;
    }
    EXPECT_TRUE(found) << "class " << k;
  }
}

TEST(InitSynthetic, SameSeedIsIdentical) {
  const auto toy = make_toy_fixture<float>();
  const auto a = init_synthetic(toy.train, 3, 9);
  const auto b = init_synthetic(toy.train, 3, 9);
  EXPECT_TRUE(a.images == b.images);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(InitSynthetic, TooFewSamplesIsInsufficientData) {
  const auto toy = make_toy_fixture<float>();
  EXPECT_THROW(init_synthetic(toy.train, 50, 0), InsufficientDataError);
  EXPECT_THROW(init_synthetic(toy.train, 0, 0), ParameterError);
}

TEST(InitSynthetic, PerClassCountIsExactlyIpcForRandomSeeds) {
  const auto toy = make_toy_fixture<float>();
  Rng meta(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int ipc = static_cast<int>(meta.randint(1, 32));
    const auto s = init_synthetic(toy.train, ipc, meta.next_u64());
    std::vector<int> count(2, 0);
    for (int y : s.labels) ++count[static_cast<std::size_t>(y)];
    EXPECT_EQ(count[0], ipc);
    EXPECT_EQ(count[1], ipc);
    for (int k = 0; k < 2; ++k) {
      std::set<std::vector<float>> distinct;
      for (int j = 0; j < ipc; ++j) {
        const auto r = s.images.slice0(s.class_begin(k) + j);
        distinct.emplace(r.begin(), r.end());
      }
      EXPECT_EQ(static_cast<int>(distinct.size()), ipc);
    }
  }
}

TEST(ClassBatchSampler, FullClassBatchIsAPermutation) {
  const auto toy = make_toy_fixture<float>();
  ClassBatchSampler s(toy.train, 3);
  auto rows = s.next(1, 32);
  std::sort(rows.begin(), rows.end());
  EXPECT_EQ(rows, toy.train.class_index[1]);
}

TEST(ClassBatchSampler, NoRepeatsWithinABatchWhenPossible) {
  const auto toy = make_toy_fixture<float>();
  ClassBatchSampler s(toy.train, 4);
  for (int i = 0; i < 20; ++i) {
    const auto rows = s.next(0, 12);
    EXPECT_EQ(std::set<int>(rows.begin(), rows.end()).size(), 12u);
    for (int r : rows) EXPECT_EQ(toy.train.labels[static_cast<std::size_t>(r)], 0);
  }
}

TEST(ClassBatchSampler, OversizedBatchCoversTheClassThenRepeats) {
  const auto toy = make_toy_fixture<float>();
  ClassBatchSampler s(toy.train, 5);
  const auto rows = s.next(0, 40);
  EXPECT_EQ(rows.size(), 40u);
  EXPECT_EQ(std::set<int>(rows.begin(), rows.end()).size(), 32u);
}

TEST(ClassBatchSampler, ReplayIsIdenticalAndUnknownClassFails) {
  const auto toy = make_toy_fixture<float>();
  ClassBatchSampler a(toy.train, 6), b(toy.train, 6);
  for (int i = 0; i < 10; ++i) {
    EXPECT_TRUE(sample_class_batch(toy.train, i % 2, 7, a) == sample_class_batch(toy.train, i % 2, 7, b));
  }
  EXPECT_THROW(a.next(2, 4), ParameterError);
  EXPECT_THROW(a.next(0, 0), ParameterError);
}

TEST(ClassBatchSampler, SaveLoadContinuesTheStream) {
  const auto toy = make_toy_fixture<float>();
  ClassBatchSampler a(toy.train, 8);
  a.next(0, 5);
  io::Writer w;
  a.save(w);
  io::Reader r(w.buffer());
  ClassBatchSampler b;
  b.load(r);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.next(1, 9), b.next(1, 9));
}

TEST(SyntheticContainer, RoundTripIsBitIdentical) {
  TempDir dir("syn");
  const auto toy = make_toy_fixture<double>();
  auto s = init_synthetic(toy.train, 2, 1);
  s.images[5] = 0.1234567890123456789;
  s.preprocess.path = "preprocess.bin";
  save_synthetic(s, dir.str("s.bin"));
  const auto back = load_synthetic<double>(dir.str("s.bin"));
  EXPECT_TRUE(back.images == s.images);
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.ipc, 2);
  EXPECT_EQ(back.num_classes, 2);
  EXPECT_EQ(back.origin, s.origin);
  EXPECT_EQ(back.preprocess, s.preprocess);

  const auto f = init_synthetic(make_toy_fixture<float>().train, 1, 1);
  save_synthetic(f, dir.str("f.bin"));
  EXPECT_TRUE(load_synthetic<float>(dir.str("f.bin")).images == f.images);
}

TEST(SyntheticContainer, HeaderDeclaresShape) {
  TempDir dir("hdr");
  const auto s = init_synthetic(make_toy_fixture<float>().train, 3, 1);
  save_synthetic(s, dir.str("s.bin"));
  auto r = io::Reader::from_file(dir.str("s.bin"));
  char magic[8];
  r.bytes(magic, 8);
  EXPECT_EQ(std::string(magic, 7), "ATOMSYN");
  EXPECT_EQ(r.pod<std::uint32_t>(), 1u);
  EXPECT_EQ(r.pod<std::uint8_t>(), 4u);
  std::vector<std::uint32_t> shape;
  for (int i = 0; i < 4; ++i) shape.push_back(r.pod<std::uint32_t>());
  EXPECT_EQ(shape, (std::vector<std::uint32_t>{6, 3, 8, 8}));
}

TEST(SyntheticContainer, BadFilesAreLoadErrors) {
  TempDir dir("bad");
  { std::ofstream(dir.str("empty.bin")); }
  EXPECT_THROW(load_synthetic<float>(dir.str("empty.bin")), LoadError);
  { std::ofstream(dir.str("junk.bin")) << "definitely not a container"; }
  EXPECT_THROW(load_synthetic<float>(dir.str("junk.bin")), LoadError);

  const auto s = init_synthetic(make_toy_fixture<float>().train, 1, 1);
  save_synthetic(s, dir.str("s.bin"));
  std::string bytes;
  {
    std::ifstream in(dir.str("s.bin"), std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(dir.str("trunc.bin"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
  }
  EXPECT_THROW(load_synthetic<float>(dir.str("trunc.bin")), LoadError);
  bytes[8] = 2;  // version field
  {
    std::ofstream out(dir.str("ver.bin"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_synthetic<float>(dir.str("ver.bin")), LoadError);
}
