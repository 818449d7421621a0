// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "atom/nas/proxy.hpp"
#include "support/oracles.hpp"

using namespace atom;
using namespace atom::nas;

TEST(SearchSpace, FullGridHas720UniqueSpecs) {
  const auto specs = enumerate_search_space();
  EXPECT_EQ(specs.size(), 720u);
  std::set<std::string> names;
  for (const auto& s : specs) {
    EXPECT_TRUE(s.on_grid());
    names.insert(s.canonical());
  }
  EXPECT_EQ(names.size(), 720u);
  EXPECT_EQ(specs.front().canonical(), "D1-W32-sigmoid-none-none");
}

TEST(SearchSpace, TwoByTwoGridHasFourSpecs) {
  SearchGrid g;
  g.depths = {1, 2};
  g.widths = {32, 64};
  g.activations = {nn::Activation::kRelu};
  g.norms = {nn::Norm::kInstance};
  g.poolings = {nn::Pooling::kAvg};
  nn::ConvNetSpec shape;
  shape.in_height = shape.in_width = 8;
  const auto specs = enumerate_search_space(g, shape);
  ASSERT_EQ(specs.size(), 4u);
  EXPECT_EQ(specs[0].canonical(), "D1-W32-relu-instance-avg");
  EXPECT_EQ(specs[1].canonical(), "D1-W64-relu-instance-avg");
  EXPECT_EQ(specs[3].canonical(), "D2-W64-relu-instance-avg");
  EXPECT_EQ(specs[2].in_height, 8);
  EXPECT_EQ(enumerate_search_space(SearchGrid::desk()).size(), 8u);
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {1, 2, 3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 3, 2, 4}), oracle::spearman({1, 2, 3, 4}, {1, 3, 2, 4}), 1e-12);
}

TEST(Spearman, RejectsMalformedRankings) {
  EXPECT_THROW(spearman({1, 2}, {1, 2, 3}), ParameterError);
  EXPECT_THROW(spearman({1}, {1}), ParameterError);
  EXPECT_THROW(spearman({1, 1, 3}, {1, 2, 3}), ParameterError);
  EXPECT_THROW(spearman({0, 1, 2}, {1, 2, 3}), ParameterError);
}

TEST(Spearman, ClosedFormMatchesPearsonOfRanksAndIgnoresRelabelling) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = static_cast<int>(rng.randint(2, 30));
    std::vector<int> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    std::iota(a.begin(), a.end(), 1);
    std::iota(b.begin(), b.end(), 1);
    rng.shuffle(a);
    rng.shuffle(b);
    const double rho = spearman(a, b);
    EXPECT_NEAR(rho, oracle::spearman_pearson(a, b), 1e-12);
    EXPECT_GE(rho, -1.0);
    EXPECT_LE(rho, 1.0);
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<int> pa, pb;
    for (auto i : perm) {
      pa.push_back(a[i]);
      pb.push_back(b[i]);
    }
    EXPECT_DOUBLE_EQ(spearman(pa, pb), rho);
  }
}

TEST(RankDescending, HigherScoreRanksFirstAndTiesKeepOrder) {
  std::vector<bool> tied;
  const auto r = rank_descending({50.0, 70.0, 50.0 + 1e-9, 10.0}, &tied);
  EXPECT_EQ(r, (std::vector<int>{2, 1, 3, 4}));
  EXPECT_EQ(tied, (std::vector<bool>{true, false, true, false}));
}

TEST(RankOnProxy, FailedSpecsAreReportedAndSkipped) {
  const auto toy = make_toy_fixture<float>();
  auto specs = enumerate_search_space(SearchGrid::desk(), {});
  specs.resize(2);
  auto bad = specs[0];
  bad.depth = 4;  // 8x8 input cannot be pooled four times
  specs.insert(specs.begin() + 1, bad);
  specs.push_back(nn::parse_spec("D1-W32-relu-none-avg"));
  EvalProtocol proto;
  proto.n_models = 1;
  proto.epochs = 5;
  const auto proxy = random_baseline(toy.train, 2, 1);
  const auto res = rank_on_proxy(specs, proxy, toy.test, proto, &toy.train);
  ASSERT_EQ(res.records.size(), 4u);
  EXPECT_FALSE(res.records[1].ok());
  EXPECT_EQ(res.records[1].status.rfind("failed: ", 0), 0u);
  EXPECT_EQ(res.records[1].rank_proxy, 0);
  std::set<int> ranks;
  for (const auto& r : res.records)
    if (r.ok()) ranks.insert(r.rank_proxy);
  EXPECT_EQ(ranks, (std::set<int>{1, 2, 3}));
  ASSERT_TRUE(res.spearman_rho.has_value());
  EXPECT_GE(*res.spearman_rho, -1.0);
  EXPECT_LE(*res.spearman_rho, 1.0);

  const auto csv = nas_csv(res);
  EXPECT_EQ(csv.rfind("spec,proxy_acc,ref_acc,rank_proxy,rank_ref,status\n", 0), 0u);
  EXPECT_NE(csv.find("summary,rho="), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST(RankOnProxy, WithoutReferenceThereIsNoRho) {
  const auto toy = make_toy_fixture<float>();
  EvalProtocol proto;
  proto.n_models = 1;
  proto.epochs = 2;
  const auto specs = enumerate_search_space(SearchGrid::desk());
  const std::vector<nn::ConvNetSpec> two(specs.begin(), specs.begin() + 2);
  const auto res = rank_on_proxy(two, random_baseline(toy.train, 1, 1), toy.test, proto);
  EXPECT_FALSE(res.spearman_rho.has_value());
  EXPECT_NE(nas_csv(res).find("rho=nan"), std::string::npos);
  EXPECT_THROW(rank_on_proxy<float>({}, random_baseline(toy.train, 1, 1), toy.test, proto), ParameterError);
}
