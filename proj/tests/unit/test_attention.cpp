// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "atom/attention/attention.hpp"
#include "support/helpers.hpp"

using namespace atom;
using testing_support::random_tensor;
using testing_support::to_maps;

namespace {

nn::FeatureStack<double> stack_of(std::vector<Tensor<double>> layers) {
  nn::FeatureStack<double> s;
  s.per_layer = std::move(layers);
  return s;
}

AttentionConfig config(MatchMode mode, double p_s = 4.0, double p_c = 4.0) {
  AttentionConfig c;
  c.mode = mode;
  c.p_s = p_s;
  c.p_c = p_c;
  return c;
}

}  // namespace

TEST(Attention, SquaredMagnitudesSumTo25) {
  Tensor<double> across_channels({1, 2, 1, 1}, std::vector<double>{3, -4});
  EXPECT_EQ(spatial_attention(across_channels, 2.0).values[0], 25.0);
  Tensor<double> across_pixels({1, 1, 1, 2}, std::vector<double>{3, -4});
  EXPECT_EQ(channel_attention(across_pixels, 2.0).values[0], 25.0);
  EXPECT_EQ(channel_attention(across_pixels, 1.0).values[0], 7.0);
}

TEST(Attention, ZeroFeaturesGiveZeroAttention) {
  Tensor<float> f({2, 3, 2, 2});
  const auto sa = spatial_attention(f, 4.0);
  const auto ca = channel_attention(f, 4.0);
  for (float v : sa.values.values()) EXPECT_EQ(v, 0.0f);
  for (float v : ca.values.values()) EXPECT_EQ(v, 0.0f);
  const auto n = normalize_rows(channel_attention(f, 4.0).values, 1e-8);
  for (float v : n.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Attention, ShapesFollowKind) {
  Tensor<float> f({2, 5, 3, 4});
  EXPECT_EQ(spatial_attention(f, 2.0, 1).values.shape(), (std::vector<int>{2, 12}));
  const auto c = channel_attention(f, 2.0, 3);
  EXPECT_EQ(c.values.shape(), (std::vector<int>{2, 5}));
  EXPECT_EQ(c.layer_index, 3);
  EXPECT_EQ(c.kind, AttentionKind::kChannel);
}

TEST(Attention, RejectsBadPowerAndRank) {
  Tensor<double> f({1, 1, 2, 2});
  EXPECT_THROW(spatial_attention(f, 0.5), ParameterError);
  EXPECT_THROW(channel_attention(Tensor<double>({4, 4}), 2.0), ParameterError);
}

TEST(NormalizeRows, UnitLength) {
  Tensor<double> z({2, 2}, std::vector<double>{3, 4, 0, 0});
  const auto n = normalize_rows(z, 1e-8);
  EXPECT_DOUBLE_EQ(n[0], 0.6);
  EXPECT_DOUBLE_EQ(n[1], 0.8);
  EXPECT_EQ(n[2], 0.0);
  EXPECT_EQ(n[3], 0.0);
  EXPECT_THROW(normalize_rows(z, -1.0), ParameterError);
}

TEST(Attention, SmallTensorsMatchOracleExactly) {
  Rng rng(1);
  const std::vector<std::vector<int>> shapes = {{1, 2, 2, 2}, {2, 1, 2, 2}, {1, 8, 1, 1}, {2, 2, 1, 2}};
  for (int trial = 0; trial < 200; ++trial) {
    const auto& shape = shapes[static_cast<std::size_t>(trial) % shapes.size()];
    const auto f = random_tensor(rng, shape, -2.0, 2.0);
    const double p = std::vector<double>{1.0, 2.0, 2.5, 3.0, 4.0}[static_cast<std::size_t>(trial % 5)];
    const auto sa = spatial_attention(f, p).values;
    const auto ca = channel_attention(f, p).values;
    const auto maps = to_maps(f);
    for (int b = 0; b < f.dim(0); ++b) {
      const auto ws = oracle::spatial(maps[static_cast<std::size_t>(b)], p);
      const auto wc = oracle::channel(maps[static_cast<std::size_t>(b)], p);
      for (std::size_t j = 0; j < ws.size(); ++j) ASSERT_EQ(sa.at(b, static_cast<int>(j)), ws[j]);
      for (std::size_t j = 0; j < wc.size(); ++j) ASSERT_EQ(ca.at(b, static_cast<int>(j)), wc[j]);
    }
  }
}

TEST(AtomLoss, MatchesOracleForEveryMode) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor<double>> real_layers, syn_layers;
    const std::vector<std::vector<int>> dims = {{3, 4, 4}, {5, 2, 2}};
    for (const auto& d : dims) {
      real_layers.push_back(random_tensor(rng, {4, d[0], d[1], d[2]}));
      syn_layers.push_back(random_tensor(rng, {2, d[0], d[1], d[2]}));
    }
    const double ps = 1.0 + rng.uniform() * 4, pc = 1.0 + rng.uniform() * 4;
    double want_s = 0, want_c = 0;
    for (std::size_t l = 0; l < dims.size(); ++l) {
      want_s += oracle::layer_term(to_maps(real_layers[l]), to_maps(syn_layers[l]), 0, ps);
      want_c += oracle::layer_term(to_maps(real_layers[l]), to_maps(syn_layers[l]), 1, pc);
    }
    const auto r = stack_of(real_layers), s = stack_of(syn_layers);
    EXPECT_NEAR(atom_class_loss(r, s, config(MatchMode::kSpatial, ps, pc)), want_s, 1e-12);
    EXPECT_NEAR(atom_class_loss(r, s, config(MatchMode::kChannel, ps, pc)), want_c, 1e-12);
    auto both = config(MatchMode::kBoth, ps, pc);
    both.spatial_weight = 0.3;
    both.channel_weight = 2.0;
    EXPECT_NEAR(atom_class_loss(r, s, both), 0.3 * want_s + 2.0 * want_c, 1e-12);
  }
}

TEST(AtomLoss, PerLayerTermsSumToTotalAcrossClasses) {
  Rng rng(3);
  std::vector<nn::FeatureStack<double>> real, syn;
  for (int k = 0; k < 3; ++k) {
    real.push_back(stack_of({random_tensor(rng, {3, 2, 2, 2}), random_tensor(rng, {3, 4, 1, 1})}));
    syn.push_back(stack_of({random_tensor(rng, {1, 2, 2, 2}), random_tensor(rng, {1, 4, 1, 1})}));
  }
  const auto cfg = config(MatchMode::kBoth);
  std::vector<double> per_layer;
  const double total = atom_loss<double>(real, syn, cfg, &per_layer);
  ASSERT_EQ(per_layer.size(), 2u);
  EXPECT_NEAR(per_layer[0] + per_layer[1], total, 1e-14);
  double by_class = 0;
  for (int k = 0; k < 3; ++k) by_class += atom_class_loss(real[static_cast<std::size_t>(k)], syn[static_cast<std::size_t>(k)], cfg);
  EXPECT_NEAR(by_class, total, 1e-14);
}

TEST(AtomLoss, FeatureMapModeIsSquaredMeanDifference) {
  Rng rng(4);
  const auto fr = random_tensor(rng, {3, 2, 2, 2});
  const auto fs = random_tensor(rng, {2, 2, 2, 2});
  const double want = oracle::sqdist(oracle::mean_rows(testing_support::to_rows(fr)),
                                     oracle::mean_rows(testing_support::to_rows(fs)));
  EXPECT_NEAR(atom_class_loss(stack_of({fr}), stack_of({fs}), config(MatchMode::kFeatureMap)), want, 1e-14);
}

TEST(AtomLoss, IdenticalBatchesGiveZero) {
  Rng rng(5);
  const auto f = random_tensor(rng, {4, 3, 2, 2});
  for (auto mode : {MatchMode::kSpatial, MatchMode::kChannel, MatchMode::kBoth, MatchMode::kFeatureMap}) {
    EXPECT_EQ(atom_class_loss(stack_of({f}), stack_of({f}), config(mode)), 0.0);
  }
}

TEST(AtomLoss, MismatchedStacksAreContractErrors) {
  Rng rng(6);
  const auto a = stack_of({random_tensor(rng, {2, 3, 2, 2})});
  const auto b = stack_of({random_tensor(rng, {2, 3, 2, 2}), random_tensor(rng, {2, 3, 1, 1})});
  const auto c = stack_of({random_tensor(rng, {2, 4, 2, 2})});
  EXPECT_THROW(atom_class_loss(a, b, config(MatchMode::kBoth)), ContractError);
  EXPECT_THROW(atom_class_loss(a, c, config(MatchMode::kBoth)), ContractError);
  std::vector<nn::FeatureStack<double>> one{a}, two{a, a};
  EXPECT_THROW(atom_loss<double>(one, two, config(MatchMode::kBoth)), ContractError);
  auto bad = config(MatchMode::kBoth);
  bad.p_s = 0.0;
  EXPECT_THROW(atom_class_loss(a, a, bad), ParameterError);
}

TEST(AtomLoss, SyntheticGradientsMatchCentralDifferences) {
  Rng rng(7);
  for (auto mode : {MatchMode::kSpatial, MatchMode::kChannel, MatchMode::kBoth, MatchMode::kFeatureMap}) {
    const auto real = stack_of({random_tensor(rng, {3, 3, 2, 2}), random_tensor(rng, {3, 2, 1, 2})});
    auto syn = stack_of({random_tensor(rng, {2, 3, 2, 2}), random_tensor(rng, {2, 2, 1, 2})});
    auto cfg = config(mode, 3.0, 2.5);
    cfg.spatial_weight = 0.7;
    std::vector<Tensor<double>> grads;
    atom_class_loss(real, syn, cfg, nullptr, &grads);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t i = 0; i < syn.per_layer[l].size(); ++i) {
        const double keep = syn.per_layer[l][i], h = 1e-6;
        syn.per_layer[l][i] = keep + h;
        const double up = atom_class_loss(real, syn, cfg);
        syn.per_layer[l][i] = keep - h;
        const double down = atom_class_loss(real, syn, cfg);
        syn.per_layer[l][i] = keep;
        EXPECT_NEAR(grads[l][i], (up - down) / (2 * h), 1e-7) << to_string(mode);
      }
  }
}

TEST(Mmd, UnitOffsetInTwoDimensions) {
  Tensor<double> r({1, 2}, std::vector<double>{1, 1});
  Tensor<double> s({1, 2}, std::vector<double>{0, 0});
  EXPECT_DOUBLE_EQ(mmd_loss(r, s), 2.0);
}

TEST(Mmd, ConstantShiftGivesDimTimesShiftSquared) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = random_tensor(rng, {4, 6});
    auto s = r;
    const double c = rng.uniform(-2, 2);
    for (auto& v : s.values()) v += c;
    EXPECT_NEAR(mmd_loss(r, s), 6 * c * c, 1e-12);
  }
}

TEST(Mmd, MatchesOracleAndGradient) {
  Rng rng(9);
  const auto r = random_tensor(rng, {5, 4});
  auto s = random_tensor(rng, {3, 4});
  Tensor<double> g;
  EXPECT_NEAR(mmd_loss(r, s, &g), oracle::mmd(testing_support::to_rows(r), testing_support::to_rows(s)), 1e-14);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double keep = s[i], h = 1e-6;
    s[i] = keep + h;
    const double up = mmd_loss(r, s);
    s[i] = keep - h;
    const double down = mmd_loss(r, s);
    s[i] = keep;
    EXPECT_NEAR(g[i], (up - down) / (2 * h), 1e-8);
  }
  EXPECT_THROW(mmd_loss(r, Tensor<double>({3, 5})), ContractError);
}

TEST(TotalLoss, WeightsMmdByLambda) {
  const auto b = total_loss(1.0, 2.0, 0.01);
  EXPECT_DOUBLE_EQ(b.total, 1.02);
  EXPECT_EQ(total_loss(1.0, 2.0, 0.0).total, 1.0);
  EXPECT_THROW(total_loss(1.0, 2.0, -0.1), ParameterError);
  EXPECT_THROW(total_loss(1.0, 2.0, std::nan("")), ParameterError);
}

TEST(MatchMode, NamesRoundTrip) {
  for (auto m : {MatchMode::kSpatial, MatchMode::kChannel, MatchMode::kBoth, MatchMode::kFeatureMap}) {
    EXPECT_EQ(parse_match_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_match_mode("pixel"), ParameterError);
}
