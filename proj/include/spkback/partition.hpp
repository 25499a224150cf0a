#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spkback/embed.hpp"

namespace spkback {

/// Assignment of utterance ids to integer cluster labels, with a cache of
/// per-cluster unit centroids. Ids absent from the map are unassigned.
class Partition {
 public:
  void assign(const std::string& id, int label) {
    assignment_[id] = label;
    centroids_.clear();
  }

  void unassign(const std::string& id) {
    assignment_.erase(id);
    centroids_.clear();
  }

  std::optional<int> label_of(const std::string& id) const {
    auto it = assignment_.find(id);
    if (it == assignment_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, int>& assignment() const { return assignment_; }
  std::size_t size() const { return assignment_.size(); }
  bool empty() const { return assignment_.empty(); }

  /// Members per label; member lists are sorted by id.
  std::map<int, std::vector<std::string>> clusters() const {
    std::map<int, std::vector<std::string>> out;
    for (const auto& [id, label] : assignment_) out[label].push_back(id);
    return out;
  }

  std::size_t cluster_count() const { return clusters().size(); }

  /// Recomputes the unit centroid of every cluster from its members.
  void refresh_centroids(const EmbeddingSet& embeddings) {
    centroids_.clear();
    for (const auto& [label, members] : clusters()) {
      centroids_[label] = cluster_centroid(members, embeddings);
    }
  }

  const std::map<int, Vector>& centroids() const { return centroids_; }

  /// Dense relabeling 0..C-1 by descending cluster size, ties broken by the
  /// lexicographically smallest member id.
  Partition canonical() const {
    auto groups = clusters();
    std::vector<std::pair<int, const std::vector<std::string>*>> order;
    order.reserve(groups.size());
    for (const auto& [label, members] : groups) order.emplace_back(label, &members);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.second->size() != b.second->size()) return a.second->size() > b.second->size();
      return a.second->front() < b.second->front();
    });
    Partition out;
    for (std::size_t dense = 0; dense < order.size(); ++dense) {
      for (const auto& id : *order[dense].second) out.assignment_[id] = static_cast<int>(dense);
    }
    return out;
  }

  static Vector cluster_centroid(const std::vector<std::string>& members,
                                 const EmbeddingSet& embeddings) {
    std::vector<Vector> rows;
    rows.reserve(members.size());
    for (const auto& id : members) rows.push_back(l2_normalize(embeddings.row(embeddings.at(id))));
    return centroid(rows);
  }

  friend bool operator==(const Partition& a, const Partition& b) {
    return a.assignment_ == b.assignment_;
  }

 private:
  std::map<std::string, int> assignment_;
  std::map<int, Vector> centroids_;
};

}  // namespace spkback
