// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "atom/core/error.hpp"
#include "atom/data/dataset.hpp"
#include "atom/data/synthetic.hpp"
#include "atom/eval/harness.hpp"
#include "atom/nn/spec.hpp"

namespace atom::nas {

/// Axes of the ConvNet search grid.
struct SearchGrid {
  std::vector<int> depths{nn::kGridDepths.begin(), nn::kGridDepths.end()};
  std::vector<int> widths{nn::kGridWidths.begin(), nn::kGridWidths.end()};
  std::vector<nn::Activation> activations{nn::kGridActivations.begin(), nn::kGridActivations.end()};
  std::vector<nn::Norm> norms{nn::kGridNorms.begin(), nn::kGridNorms.end()};
  std::vector<nn::Pooling> poolings{nn::kGridPoolings.begin(), nn::kGridPoolings.end()};

  /// Depth {2, 3} x width {32, 64} x relu x {instance, none} x avg.
  static SearchGrid desk() {
    SearchGrid g;
    g.depths = {2, 3};
    g.widths = {32, 64};
    g.activations = {nn::Activation::kRelu};
    g.norms = {nn::Norm::kInstance, nn::Norm::kNone};
    g.poolings = {nn::Pooling::kAvg};
    return g;
  }
};

/// Cross product of the grid axes in canonical order (depth outermost,
/// pooling innermost). Shapes are copied from `shape_from`.
inline std::vector<nn::ConvNetSpec> enumerate_search_space(const SearchGrid& grid = {},
                                                           const nn::ConvNetSpec& shape_from = {}) {
  std::vector<nn::ConvNetSpec> out;
  for (int d : grid.depths)
    for (int w : grid.widths)
      for (auto a : grid.activations)
        for (auto n : grid.norms)
          for (auto p : grid.poolings) {
            nn::ConvNetSpec s = shape_from;
            s.depth = d;
            s.width = w;
            s.activation = a;
            s.norm = n;
            s.pooling = p;
            out.push_back(s);
          }
  return out;
}

/// 1 - 6 sum(d^2) / (n (n^2 - 1)) for two rankings given as permutations of
/// 1..n.
inline double spearman(const std::vector<int>& rank_a, const std::vector<int>& rank_b) {
  if (rank_a.size() != rank_b.size()) {
    throw ParameterError("spearman: rankings have lengths " + std::to_string(rank_a.size()) +
                         " and " + std::to_string(rank_b.size()));
  }
  const auto n = static_cast<long>(rank_a.size());
  if (n < 2) throw ParameterError("spearman: need at least two ranked items");
  auto check = [n](const std::vector<int>& r) {
    std::vector<int> s = r;
    std::sort(s.begin(), s.end());
    for (long i = 0; i < n; ++i)
      if (s[static_cast<std::size_t>(i)] != i + 1) {
        throw ParameterError("spearman: ranks must be a permutation of 1..n");
      }
  };
  check(rank_a);
  check(rank_b);
  long d2 = 0;
  for (long i = 0; i < n; ++i) {
    const long d = rank_a[static_cast<std::size_t>(i)] - rank_b[static_cast<std::size_t>(i)];
    d2 += d * d;
  }
  return 1.0 - 6.0 * static_cast<double>(d2) / (static_cast<double>(n) * (static_cast<double>(n) * n - 1.0));
}

inline constexpr double kTieGranularity = 1e-6;

/// Ranks scores (higher is better) as 1..n. Scores equal at 1e-6 granularity
/// keep their input order. `tied[i]` is set when item i shares its bucket.
inline std::vector<int> rank_descending(const std::vector<double>& scores, std::vector<bool>* tied = nullptr) {
  const std::size_t n = scores.size();
  std::vector<long long> bucket(n);
  for (std::size_t i = 0; i < n; ++i) bucket[i] = std::llround(scores[i] / kTieGranularity);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return bucket[a] > bucket[b]; });
  std::vector<int> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[idx[r]] = static_cast<int>(r + 1);
  if (tied) {
    tied->assign(n, false);
    for (std::size_t r = 1; r < n; ++r)
      if (bucket[idx[r]] == bucket[idx[r - 1]]) (*tied)[idx[r]] = (*tied)[idx[r - 1]] = true;
  }
  return rank;
}

struct NasRecord {
  std::string spec;
  double proxy_acc = std::numeric_limits<double>::quiet_NaN();
  double ref_acc = std::numeric_limits<double>::quiet_NaN();
  int rank_proxy = 0;  // 0 when failed
  int rank_ref = 0;
  bool tied = false;
  std::string status = "ok";  // "ok" or "failed: <reason>"
  double time_ms = 0.0;

  bool ok() const { return status == "ok"; }
};

struct NasResult {
  std::vector<NasRecord> records;
  std::optional<double> spearman_rho;
  double proxy_time_ms = 0.0;
  double reference_time_ms = 0.0;
};

/// Mean test accuracy of `spec` trained on (images, labels) under `proto`.
template <typename T>
double score_architecture(const nn::ConvNetSpec& spec, const Tensor<T>& images,
                          const std::vector<int>& labels, int num_classes,
                          const LabeledImageSet<T>& val, EvalProtocol proto) {
  proto.arch = spec;
  return train_and_score(images, labels, num_classes, val, proto).mean_acc;
}

namespace detail {

/// Trains every spec; failures are recorded as NaN with a reason.
template <typename T>
std::vector<double> score_all(const std::vector<nn::ConvNetSpec>& specs, const Tensor<T>& images,
                              const std::vector<int>& labels, int num_classes,
                              const LabeledImageSet<T>& val, const EvalProtocol& proto,
                              std::vector<std::string>& failures, std::vector<double>& times) {
  std::vector<double> acc(specs.size(), std::numeric_limits<double>::quiet_NaN());
  failures.assign(specs.size(), "");
  times.assign(specs.size(), 0.0);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      acc[i] = score_architecture(specs[i], images, labels, num_classes, val, proto);
      if (!std::isfinite(acc[i])) failures[i] = "non-finite accuracy";
    } catch (const Error& e) {
      failures[i] = e.what();
    }
    times[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return acc;
}

}  // namespace detail

/// Trains every spec on the proxy set and ranks by validation accuracy. When
/// `reference` is given (full-data training set), the same specs are also
/// ranked on it and Spearman's rho is computed over specs that succeeded in
/// both runs.
template <typename T>
NasResult rank_on_proxy(const std::vector<nn::ConvNetSpec>& specs, const SyntheticDataset<T>& proxy,
                        const LabeledImageSet<T>& val, const EvalProtocol& proto,
                        const LabeledImageSet<T>* reference = nullptr) {
  if (specs.empty()) throw ParameterError("rank_on_proxy: empty search space");
  NasResult res;
  std::vector<std::string> fail_proxy, fail_ref;
  std::vector<double> t_proxy, t_ref;
  const auto proxy_acc = detail::score_all(specs, proxy.images, proxy.labels, val.num_classes, val, proto,
                                           fail_proxy, t_proxy);
  std::vector<double> ref_acc(specs.size(), std::numeric_limits<double>::quiet_NaN());
  if (reference) {
    ref_acc = detail::score_all(specs, reference->images, reference->labels, reference->num_classes, val,
                                proto, fail_ref, t_ref);
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    NasRecord r;
    r.spec = specs[i].canonical();
    r.proxy_acc = proxy_acc[i];
    r.ref_acc = ref_acc[i];
    r.time_ms = t_proxy[i];
    res.proxy_time_ms += t_proxy[i];
    if (reference) res.reference_time_ms += t_ref[i];
    if (!fail_proxy[i].empty()) r.status = "failed: " + fail_proxy[i];
    else if (reference && !fail_ref[i].empty()) r.status = "failed: reference: " + fail_ref[i];
    res.records.push_back(std::move(r));
  }

  // Ranks over the successful specs, in canonical order.
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < res.records.size(); ++i)
    if (res.records[i].ok()) ok.push_back(i);
  std::vector<double> ps, rs;
  for (std::size_t i : ok) {
    ps.push_back(res.records[i].proxy_acc);
    rs.push_back(res.records[i].ref_acc);
  }
  std::vector<bool> tied;
  const auto rp = rank_descending(ps, &tied);
  for (std::size_t j = 0; j < ok.size(); ++j) {
    res.records[ok[j]].rank_proxy = rp[j];
    res.records[ok[j]].tied = tied[j];
  }
  if (reference) {
    const auto rr = rank_descending(rs);
    for (std::size_t j = 0; j < ok.size(); ++j) res.records[ok[j]].rank_ref = rr[j];
    if (ok.size() >= 2) res.spearman_rho = spearman(rp, rr);
  }
  return res;
}

/// Columns spec,proxy_acc,ref_acc,rank_proxy,rank_ref,status followed by a
/// summary row carrying rho and total time.
inline std::string nas_csv(const NasResult& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "spec,proxy_acc,ref_acc,rank_proxy,rank_ref,status\n";
  for (const auto& rec : r.records) {
    std::string status = rec.status;
    std::replace(status.begin(), status.end(), ',', ';');
    if (rec.ok() && rec.tied) status = "ok-tie";
    os << rec.spec << ',' << rec.proxy_acc << ',' << rec.ref_acc << ',' << rec.rank_proxy << ','
       << rec.rank_ref << ',' << status << '\n';
  }
  os << "summary,rho=";
  if (r.spearman_rho) os << *r.spearman_rho;
  else os << "nan";
  os << ",proxy_ms=" << r.proxy_time_ms << ",reference_ms=" << r.reference_time_ms << ",,\n";
  return os.str();
}

}  // namespace atom::nas
