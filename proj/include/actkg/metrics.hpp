#pragma once

// Full-ranking top-K evaluation (Recall@K, NDCG@K with log2 discounts).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "actkg/data.hpp"
#include "actkg/tensor.hpp"

namespace actkg {

enum class SplitKind { validation, test };

struct RankingMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;  // users with at least one held-out positive
};

/// Ranks the K best candidates for one user: all items minus `excluded` (sorted).
/// Ties break toward the lower item index.
inline std::vector<std::uint32_t> top_k(std::span<const double> scores, std::span<const std::uint32_t> excluded,
                                        std::size_t k) {
  std::vector<std::uint32_t> candidates;
  candidates.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i)
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) candidates.push_back(i);
  const std::size_t n = std::min(k, candidates.size());
  auto better = [&scores](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n), candidates.end(),
                    better);
  candidates.resize(n);
  return candidates;
}

/// Recall and NDCG of one ranked list against the sorted held-out positives.
inline std::pair<double, double> score_ranking(std::span<const std::uint32_t> ranked,
                                               std::span<const std::uint32_t> positives, std::size_t k) {
  if (positives.empty()) return {0.0, 0.0};
  double hits = 0.0;
  double dcg = 0.0;
  for (std::size_t r = 0; r < ranked.size() && r < k; ++r) {
    if (std::binary_search(positives.begin(), positives.end(), ranked[r])) {
      hits += 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, positives.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return {hits / static_cast<double>(positives.size()), dcg / idcg};
}

/// Averages over users with held-out positives. `score(user, item)` gives the
/// preference score; training (and, for the test split, validation) positives are
/// excluded from the candidates.
template <typename ScoreFn>
RankingMetrics evaluate_with(const KgDataset& ds, ScoreFn&& score, std::size_t k, SplitKind which = SplitKind::test) {
  if (k < 1) throw ConfigError("evaluate: K must be >= 1");
  std::vector<std::vector<std::uint32_t>> seen(ds.num_users), held_out(ds.num_users);
  for (const auto& x : ds.train) seen[x.user].push_back(x.item);
  if (which == SplitKind::test) {
    for (const auto& x : ds.validation) seen[x.user].push_back(x.item);
    for (const auto& x : ds.test) held_out[x.user].push_back(x.item);
  } else {
    for (const auto& x : ds.validation) held_out[x.user].push_back(x.item);
  }
  RankingMetrics m;
  std::vector<double> scores(ds.num_items);
  for (std::uint32_t u = 0; u < ds.num_users; ++u) {
    if (held_out[u].empty()) continue;
    std::sort(seen[u].begin(), seen[u].end());
    std::sort(held_out[u].begin(), held_out[u].end());
    for (std::uint32_t i = 0; i < ds.num_items; ++i) scores[i] = static_cast<double>(score(u, i));
    const auto ranked = top_k(scores, seen[u], k);
    const auto [recall, ndcg] = score_ranking(ranked, held_out[u], k);
    m.recall += recall;
    m.ndcg += ndcg;
    ++m.users;
  }
  if (m.users == 0) throw ConfigError("evaluate: no users with held-out interactions");
  m.recall /= static_cast<double>(m.users);
  m.ndcg /= static_cast<double>(m.users);
  return m;
}

/// Dot-product scores from the readout embeddings (node-space rows).
template <typename T>
RankingMetrics evaluate(const KgDataset& ds, const DenseMatrix<T>& readout, std::size_t k,
                        SplitKind which = SplitKind::test) {
  if (readout.rows() != ds.num_nodes()) throw DimensionError("evaluate: readout rows do not match node count");
  return evaluate_with(
      ds,
      [&](std::uint32_t u, std::uint32_t i) { return dot<T>(readout.row(ds.user_node(u)), readout.row(ds.item_node(i))); },
      k, which);
}

}  // namespace actkg
