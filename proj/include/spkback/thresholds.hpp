#pragma once

// Target-domain thresholds derived from a small labeled set:
//   T1 edge pruning, T2 outlier removal, T3 class merging.

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/parallel.hpp"

namespace spkback {

struct Thresholds {
  double t1 = 0.0;
  double t2 = 0.0;
  double t3 = 0.0;
};

/// Unit embeddings with dense class indices (classes ordered by label name).
struct LabeledEmbeddings {
  UnitMatrix units;
  std::vector<std::string> ids;
  std::vector<int> label;
  std::vector<std::string> class_names;

  std::size_t size() const { return ids.size(); }
  std::size_t num_classes() const { return class_names.size(); }

  static LabeledEmbeddings from(const EmbeddingSet& embeddings, const MetadataMap& metadata) {
    LabeledEmbeddings out;
    out.units = UnitMatrix(embeddings);
    out.ids = embeddings.ids();
    std::map<std::string, int> index;
    std::vector<std::string> names;
    for (const auto& id : out.ids) {
      auto it = metadata.find(id);
      if (it == metadata.end() || !it->second.speaker) throw ValidationError("utterance '" + id + "' has no speaker label");
      index.emplace(*it->second.speaker, 0);
    }
    int next = 0;
    for (auto& [name, k] : index) {
      k = next++;
      out.class_names.push_back(name);
    }
    for (const auto& id : out.ids) out.label.push_back(index.at(*metadata.at(id).speaker));
    return out;
  }

  /// Unit centroid of every class, indexed by class.
  std::vector<Vector> class_centroids() const {
    std::vector<std::vector<ConstRow>> members(num_classes());
    for (std::size_t i = 0; i < size(); ++i) members[label[i]].push_back(units.row(i));
    std::vector<Vector> out;
    out.reserve(num_classes());
    for (std::size_t c = 0; c < num_classes(); ++c) {
      try {
        out.push_back(centroid(std::span<const ConstRow>(members[c])));
      } catch (const ValidationError&) {
        throw ValidationError("class '" + class_names[c] + "' has a degenerate centroid");
      }
    }
    return out;
  }
};

/// For each embedding, the highest similarity to any embedding of another
/// class (the first differently-labeled entry of its descending similarity
/// list); T1 is the maximum of these.
inline double determine_t1(const LabeledEmbeddings& data, unsigned threads = 1) {
  if (data.num_classes() < 2) throw ValidationError("T1 needs at least two speakers");
  std::vector<double> first_impostor(data.size(), -std::numeric_limits<double>::infinity());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (data.label[j] != data.label[i]) best = std::max(best, unit_cosine(data.units.row(i), data.units.row(j)));
    }
    first_impostor[i] = best;
  });
  return *std::max_element(first_impostor.begin(), first_impostor.end());
}

/// Per class, the smallest member-to-centroid similarity; T2 is the largest
/// of these minima.
inline double determine_t2(const LabeledEmbeddings& data) {
  if (data.num_classes() < 1) throw ValidationError("T2 needs at least one labeled class");
  const auto centroids = data.class_centroids();
  std::vector<double> min_sim(data.num_classes(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int c = data.label[i];
    min_sim[c] = std::min(min_sim[c], unit_cosine(data.units.row(i), centroids[c]));
  }
  return *std::max_element(min_sim.begin(), min_sim.end());
}

/// Largest similarity between two class centroids.
inline double determine_t3(const LabeledEmbeddings& data) {
  if (data.num_classes() < 2) throw ValidationError("T3 needs at least two speakers");
  const auto centroids = data.class_centroids();
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < centroids.size(); ++a) {
    for (std::size_t b = a + 1; b < centroids.size(); ++b) best = std::max(best, unit_cosine(centroids[a], centroids[b]));
  }
  return best;
}

inline Thresholds determine_thresholds(const LabeledEmbeddings& data, unsigned threads = 1) {
  return {determine_t1(data, threads), determine_t2(data), determine_t3(data)};
}

}  // namespace spkback
