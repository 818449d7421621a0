// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "atom/augment/dsa.hpp"
#include "support/helpers.hpp"

using namespace atom;
using dsa::Op;

namespace {

dsa::AugParams single(Op op, const dsa::Draw& d, int h, int w) {
  dsa::AugParams p;
  p.op = op;
  p.height = h;
  p.width = w;
  p.draws = {d};
  return p;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

dsa::Config only(Op op) {
  dsa::Config cfg;
  for (Op o : dsa::kAllOps) cfg.set_enabled(o, o == op);
  return cfg;
}

}  // namespace

TEST(Dsa, OpNamesRoundTrip) {
  for (Op op : dsa::kAllOps) EXPECT_EQ(dsa::parse_op(dsa::to_string(op)), op);
  EXPECT_THROW(dsa::parse_op("mixup"), ParameterError);
}

TEST(Dsa, NeutralDrawsAreIdentity) {
  Rng rng(1);
  const auto x = testing_support::random_tensor(rng, {2, 3, 8, 8});
  for (Op op : dsa::kAllOps) {
    const auto y = dsa::apply_aug(x, single(op, dsa::Draw{}, 8, 8));
    EXPECT_LT(max_abs_diff(x, y), 1e-12) << dsa::to_string(op);
  }
}

TEST(Dsa, FlipOfMirrorSymmetricImageIsIdentity) {
  Tensor<double> x({1, 3, 4, 6});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int i = 0; i < 3; ++i) {
        const double v = c + 0.1 * y + 0.01 * i;
        x.at(0, c, y, i) = v;
        x.at(0, c, y, 5 - i) = v;
      }
  dsa::Draw d;
  d.flip = true;
  EXPECT_TRUE(dsa::apply_aug(x, single(Op::kFlip, d, 4, 6)) == x);
}

TEST(Dsa, FlipMirrorsColumns) {
  Rng rng(2);
  const auto x = testing_support::random_tensor(rng, {1, 2, 3, 5});
  dsa::Draw d;
  d.flip = true;
  const auto y = dsa::apply_aug(x, single(Op::kFlip, d, 3, 5));
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 3; ++r)
      for (int i = 0; i < 5; ++i) EXPECT_EQ(y.at(0, c, r, i), x.at(0, c, r, 4 - i));
}

TEST(Dsa, HalfSizeCutoutZeroesA16x16Square) {
  Tensor<float> x({1, 3, 32, 32}, 1.0f);
  Rng rng(3);
  const auto p = dsa::sample_aug(rng, only(Op::kCutout), 32, 32);
  EXPECT_EQ(p.draws[0].cut_h, 16);
  EXPECT_EQ(p.draws[0].cut_w, 16);
  const auto y = dsa::apply_aug(x, p);
  for (int c = 0; c < 3; ++c) {
    int zeros = 0, min_y = 32, max_y = -1, min_x = 32, max_x = -1;
    for (int r = 0; r < 32; ++r)
      for (int i = 0; i < 32; ++i) {
        if (y.at(0, c, r, i) == 0.0f) {
          ++zeros;
          min_y = std::min(min_y, r);
          max_y = std::max(max_y, r);
          min_x = std::min(min_x, i);
          max_x = std::max(max_x, i);
        } else {
          EXPECT_EQ(y.at(0, c, r, i), 1.0f);
        }
      }
    EXPECT_EQ(zeros, 256);
    EXPECT_EQ(max_y - min_y, 15);
    EXPECT_EQ(max_x - min_x, 15);
  }
}

TEST(Dsa, CropShiftsAndZeroFills) {
  Rng rng(4);
  const auto x = testing_support::random_tensor(rng, {1, 1, 6, 6});
  dsa::Draw d;
  d.shift_y = 1;
  d.shift_x = -2;
  const auto y = dsa::apply_aug(x, single(Op::kCrop, d, 6, 6));
  for (int r = 0; r < 6; ++r)
    for (int i = 0; i < 6; ++i) {
      const int sr = r - 1, si = i + 2;
      const double want = (sr >= 0 && si < 6) ? x.at(0, 0, sr, si) : 0.0;
      EXPECT_EQ(y.at(0, 0, r, i), want);
    }
}

TEST(Dsa, ColorMatchesScalarFormula) {
  Rng rng(5);
  const auto x = testing_support::random_tensor(rng, {1, 3, 2, 2});
  dsa::Draw d;
  d.brightness_shift = 0.2;
  d.saturation_factor = 1.5;
  d.contrast_factor = 0.7;
  const auto y = dsa::apply_aug(x, single(Op::kColor, d, 2, 2));
  std::vector<double> v(x.values().begin(), x.values().end());
  for (double& e : v) e += 0.2;
  for (int p = 0; p < 4; ++p) {
    const double m = (v[static_cast<std::size_t>(p)] + v[static_cast<std::size_t>(4 + p)] +
                      v[static_cast<std::size_t>(8 + p)]) / 3.0;
    for (int c = 0; c < 3; ++c) {
      double& e = v[static_cast<std::size_t>(c * 4 + p)];
      e = m + 1.5 * (e - m);
    }
  }
  double m = 0;
  for (double e : v) m += e / 12.0;
  for (double& e : v) e = m + 0.7 * (e - m);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(y[i], v[i], 1e-12);
}

TEST(Dsa, DrawsStayInRangeOver10000Samples) {
  Rng rng(6);
  dsa::Config cfg;
  for (int i = 0; i < 10000; ++i) {
    cfg.per_image = (i % 2) == 1;
    const auto p = dsa::sample_aug(rng, cfg, 32, 32, 3);
    ASSERT_TRUE(dsa::within_ranges(p, cfg)) << "draw " << i;
    ASSERT_EQ(p.draws.size(), cfg.per_image ? 3u : 1u);
    ASSERT_TRUE(cfg.is_enabled(p.op));
  }
}

TEST(Dsa, EveryEnabledOpIsChosen) {
  Rng rng(7);
  dsa::Config cfg;
  cfg.set_enabled(Op::kRotate, false);
  std::array<int, 6> hits{};
  for (int i = 0; i < 3000; ++i) ++hits[static_cast<std::size_t>(dsa::sample_aug(rng, cfg, 8, 8).op)];
  for (Op op : dsa::kAllOps) {
    if (op == Op::kRotate) EXPECT_EQ(hits[static_cast<std::size_t>(op)], 0);
    else EXPECT_GT(hits[static_cast<std::size_t>(op)], 450);
  }
}

TEST(Dsa, NoEnabledOpIsParameterError) {
  dsa::Config cfg;
  for (Op op : dsa::kAllOps) cfg.set_enabled(op, false);
  Rng rng(1);
  EXPECT_THROW(dsa::sample_aug(rng, cfg, 8, 8), ParameterError);
}

TEST(Dsa, SameSeedGivesIdenticalOutput) {
  Rng data(8);
  const auto x = testing_support::random_tensor(data, {3, 3, 8, 8});
  for (int trial = 0; trial < 50; ++trial) {
    Rng a(100 + trial), b(100 + trial);
    dsa::Config cfg;
    cfg.per_image = trial % 2 == 0;
    EXPECT_TRUE(dsa::apply_aug(x, dsa::sample_aug(a, cfg, 8, 8, 3)) ==
                dsa::apply_aug(x, dsa::sample_aug(b, cfg, 8, 8, 3)));
  }
}

TEST(Dsa, ShapeMismatchIsParameterError) {
  Rng rng(9);
  const auto p = dsa::sample_aug(rng, dsa::Config{}, 8, 8);
  EXPECT_THROW(dsa::apply_aug(Tensor<float>({1, 3, 4, 4}), p), ParameterError);
  EXPECT_THROW(dsa::apply_aug_backward(Tensor<float>({1, 3, 8, 4}), p), ParameterError);
}

// <A x, y> == <x, A^T y> for random draws of every op.
TEST(Dsa, BackwardIsTheAdjoint) {
  Rng rng(10);
  for (Op op : dsa::kAllOps) {
    dsa::Config cfg = only(op);
    cfg.per_image = true;
    for (int trial = 0; trial < 40; ++trial) {
      const auto p = dsa::sample_aug(rng, cfg, 8, 8, 2);
      const auto x = testing_support::random_tensor(rng, {2, 3, 8, 8});
      const auto y = testing_support::random_tensor(rng, {2, 3, 8, 8});
      dsa::AugParams linear = p;
      for (auto& d : linear.draws) d.brightness_shift = 0.0;
      const double lhs = dot(dsa::apply_aug(x, linear), y);
      const double rhs = dot(x, dsa::apply_aug_backward(y, p));
      EXPECT_NEAR(lhs, rhs, 1e-10 * (1.0 + std::fabs(lhs))) << dsa::to_string(op);
    }
  }
}
