#pragma once

// Partition post-processing: duration filtering, outlier cleaning, greedy
// centroid merging, and NMI against reference labels.

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/partition.hpp"

namespace spkback {

/// Ids whose duration is strictly greater than min_duration.
inline std::set<std::string> filter_short(const MetadataMap& metadata, double min_duration = 1.0) {
  std::set<std::string> kept;
  for (const auto& [id, m] : metadata) {
    if (m.duration > min_duration) kept.insert(id);
  }
  return kept;
}

/// Single pass: drop members whose cosine to their cluster's current
/// centroid is below min_similarity, then drop clusters left with fewer than
/// min_size members. Dropped utterances become unassigned.
inline Partition clean_clusters(const Partition& partition, const EmbeddingSet& embeddings, double min_similarity,
                                std::size_t min_size = 10) {
  Partition out;
  for (const auto& [label, members] : partition.clusters()) {
    const Vector c = Partition::cluster_centroid(members, embeddings);
    std::vector<std::string> kept;
    for (const auto& id : members) {
      if (unit_cosine(l2_normalize(embeddings.row(embeddings.at(id))), c) >= min_similarity) kept.push_back(id);
    }
    if (kept.size() < min_size) continue;
    for (const auto& id : kept) out.assign(id, label);
  }
  out.refresh_centroids(embeddings);
  return out;
}

struct MergeStats {
  std::size_t merges = 0;
};

/// Greedy agglomeration: while the most similar pair of cluster centroids
/// has cosine >= min_similarity, merge that pair (the lower label survives)
/// and recompute the merged centroid from all of its members.
inline Partition merge_clusters(const Partition& partition, const EmbeddingSet& embeddings, double min_similarity,
                                MergeStats* stats = nullptr) {
  auto groups = partition.clusters();
  std::vector<int> labels;
  std::vector<std::vector<std::string>> members;
  std::vector<Vector> centroids;
  for (auto& [label, ids] : groups) {
    labels.push_back(label);
    centroids.push_back(Partition::cluster_centroid(ids, embeddings));
    members.push_back(std::move(ids));
  }
  const std::size_t c = labels.size();
  std::vector<char> alive(c, 1);
  // sim[i][j] for i < j
  std::vector<std::vector<double>> sim(c, std::vector<double>(c, -std::numeric_limits<double>::infinity()));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i + 1; j < c; ++j) sim[i][j] = unit_cosine(centroids[i], centroids[j]);
  }
  MergeStats local;
  while (true) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < c; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < c; ++j) {
        if (alive[j] && sim[i][j] > best) {
          best = sim[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    if (!(best >= min_similarity)) break;
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    members[bj].clear();
    alive[bj] = 0;
    centroids[bi] = Partition::cluster_centroid(members[bi], embeddings);
    for (std::size_t k = 0; k < c; ++k) {
      if (!alive[k] || k == bi) continue;
      const double s = unit_cosine(centroids[bi], centroids[k]);
      if (k < bi) sim[k][bi] = s; else sim[bi][k] = s;
    }
    ++local.merges;
  }
  Partition out;
  for (std::size_t i = 0; i < c; ++i) {
    if (!alive[i]) continue;
    for (const auto& id : members[i]) out.assign(id, labels[i]);
  }
  out.refresh_centroids(embeddings);
  if (stats) *stats = local;
  return out;
}

/// Normalized mutual information, I / ((H_a + H_b) / 2), over the ids
/// assigned in `predicted` (each must have a reference label). Two single
/// cluster labelings score 1.
inline double nmi(const Partition& predicted, const std::map<std::string, std::string>& reference) {
  std::map<int, double> a;
  std::map<std::string, double> b;
  std::map<std::pair<int, std::string>, double> joint;
  double n = 0.0;
  for (const auto& [id, label] : predicted.assignment()) {
    auto it = reference.find(id);
    if (it == reference.end()) throw ValidationError("no reference label for '" + id + "'");
    a[label] += 1.0;
    b[it->second] += 1.0;
    joint[{label, it->second}] += 1.0;
    n += 1.0;
  }
  if (n == 0.0) throw ValidationError("NMI of an empty partition");
  auto entropy = [n](const auto& counts) {
    double h = 0.0;
    for (const auto& [k, c] : counts) h -= c / n * std::log(c / n);
    return h;
  };
  const double ha = entropy(a), hb = entropy(b);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (a.at(key.first) * b.at(key.second)));
  return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

}  // namespace spkback
