#pragma once

// Cosine trial scoring, cohort construction, AS-Norm and score fusion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/io.hpp"
#include "spkback/parallel.hpp"
#include "spkback/rng.hpp"

namespace spkback {

inline std::vector<ScoredTrial> score_trials(const std::vector<TrialRecord>& trials,
                                             const EmbeddingSet& embeddings, unsigned threads = 1) {
  std::vector<ScoredTrial> out(trials.size());
  for (const auto& t : trials) {
    if (!embeddings.contains(t.enroll)) throw ValidationError("missing embedding for '" + t.enroll + "'");
    if (!embeddings.contains(t.test)) throw ValidationError("missing embedding for '" + t.test + "'");
  }
  parallel_for(trials.size(), threads, [&](std::size_t i) {
    const auto& t = trials[i];
    const double s = cosine(embeddings.row(embeddings.at(t.enroll)), embeddings.row(embeddings.at(t.test)));
    out[i] = ScoredTrial{t.enroll, t.test, s, t.target};
  });
  return out;
}

enum class CohortSource { SpeakerMean, UtteranceSample };

/// Reference embeddings for score normalization; every entry is unit norm.
struct Cohort {
  EmbeddingSet entries;
  CohortSource source = CohortSource::SpeakerMean;

  std::size_t size() const { return entries.size(); }
};

/// One entry per training speaker: the renormalized mean of that speaker's
/// length-normalized utterance embeddings. Entries ordered by speaker name.
inline Cohort build_speaker_cohort(const EmbeddingSet& embeddings, const MetadataMap& metadata) {
  std::map<std::string, std::vector<Vector>> by_speaker;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    auto it = metadata.find(embeddings.id(i));
    if (it == metadata.end() || !it->second.speaker) {
      throw ValidationError("utterance '" + embeddings.id(i) + "' has no speaker label");
    }
    by_speaker[*it->second.speaker].push_back(l2_normalize(embeddings.row(i)));
  }
  if (by_speaker.empty()) throw ValidationError("cannot build a cohort from an empty embedding set");
  Cohort cohort{EmbeddingSet(embeddings.dim()), CohortSource::SpeakerMean};
  for (const auto& [speaker, rows] : by_speaker) {
    try {
      cohort.entries.add(speaker, centroid(rows));
    } catch (const ValidationError&) {
      throw ValidationError("speaker '" + speaker + "' has a degenerate mean embedding");
    }
  }
  return cohort;
}

/// Seeded uniform draw of n distinct utterances (partial Fisher-Yates over the
/// id-sorted set). Entries are returned sorted by id.
inline Cohort sample_utterance_cohort(const EmbeddingSet& embeddings, std::size_t n, std::uint64_t seed) {
  if (n > embeddings.size()) {
    throw ValidationError("cohort size " + std::to_string(n) + " exceeds " + std::to_string(embeddings.size()) +
                          " available utterances");
  }
  if (n == 0) throw ValidationError("cohort size must be positive");
  std::vector<std::size_t> order(embeddings.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return embeddings.id(a) < embeddings.id(b); });
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
  }
  order.resize(n);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return embeddings.id(a) < embeddings.id(b); });
  Cohort cohort{EmbeddingSet(embeddings.dim()), CohortSource::UtteranceSample};
  for (std::size_t i : order) cohort.entries.add(embeddings.id(i), l2_normalize(embeddings.row(i)));
  return cohort;
}

struct AsNormConfig {
  std::size_t top_k = 300;
};

struct CohortStats {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Mean and population standard deviation of the top_k largest cosine scores
/// between `unit` and the cohort. The selected scores are summed in
/// descending order so the result does not depend on cohort entry order.
inline CohortStats top_cohort_stats(ConstRow unit, const Cohort& cohort, std::size_t top_k) {
  std::vector<double> scores(cohort.size());
  for (std::size_t j = 0; j < cohort.size(); ++j) scores[j] = unit_cosine(unit, cohort.entries.row(j));
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(top_k), scores.end(),
                    std::greater<>());
  double sum = 0.0;
  for (std::size_t j = 0; j < top_k; ++j) sum += scores[j];
  const double mean = sum / static_cast<double>(top_k);
  double ss = 0.0;
  for (std::size_t j = 0; j < top_k; ++j) ss += (scores[j] - mean) * (scores[j] - mean);
  return {mean, std::sqrt(ss / static_cast<double>(top_k))};
}

/// Adaptive symmetric score normalization:
///   s' = ((s - mu_e) / sd_e + (s - mu_t) / sd_t) / 2
/// with (mu, sd) the top-k cohort statistics of each side of the trial.
inline std::vector<ScoredTrial> as_norm(const std::vector<ScoredTrial>& scored, const EmbeddingSet& embeddings,
                                        const Cohort& cohort, const AsNormConfig& config = {},
                                        unsigned threads = 1) {
  if (config.top_k == 0) throw ValidationError("AS-Norm top_k must be positive");
  if (cohort.size() < config.top_k) {
    throw ValidationError("cohort of " + std::to_string(cohort.size()) + " entries is smaller than top_k " +
                          std::to_string(config.top_k));
  }
  if (cohort.entries.dim() != embeddings.dim()) throw ValidationError("cohort dimension mismatch");

  // Distinct utterances in first-appearance order; stats are computed once each.
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::size_t> rows;
  for (const auto& s : scored) {
    for (const auto* id : {&s.enroll, &s.test}) {
      if (!slot.contains(*id)) {
        slot.emplace(*id, rows.size());
        rows.push_back(embeddings.at(*id));
      }
    }
  }
  std::vector<CohortStats> stats(rows.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    stats[i] = top_cohort_stats(l2_normalize(embeddings.row(rows[i])), cohort, config.top_k);
  });
  for (const auto& st : stats) {
    if (st.stddev < 1e-12) throw ValidationError("degenerate cohort variance");
  }

  std::vector<ScoredTrial> out = scored;
  for (auto& s : out) {
    const auto& e = stats[slot.at(s.enroll)];
    const auto& t = stats[slot.at(s.test)];
    s.score = ((s.score - e.mean) / e.stddev + (s.score - t.mean) / t.stddev) / 2.0;
  }
  return out;
}

/// Weighted sum of several systems' scores over an identical trial multiset.
/// Output follows the first system's trial order.
inline std::vector<ScoredTrial> fuse(const std::vector<std::vector<ScoredTrial>>& systems,
                                     const std::vector<double>& weights) {
  if (systems.empty()) throw ValidationError("fusion needs at least one score set");
  if (weights.size() != systems.size()) {
    throw ValidationError("got " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(systems.size()) + " score sets");
  }
  if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) {
    throw ValidationError("fusion weights are all zero");
  }
  const auto& base = systems.front();
  std::vector<ScoredTrial> out = base;
  for (auto& s : out) s.score = weights[0] * s.score;

  for (std::size_t k = 1; k < systems.size(); ++k) {
    if (systems[k].size() != base.size()) throw ValidationError("score sets cover different trial sets");
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> pending;
    for (std::size_t i = systems[k].size(); i-- > 0;) {
      pending[{systems[k][i].enroll, systems[k][i].test}].push_back(i);
    }
    for (auto& s : out) {
      auto it = pending.find({s.enroll, s.test});
      if (it == pending.end() || it->second.empty()) {
        throw ValidationError("score sets cover different trial sets: " + s.enroll + " " + s.test);
      }
      s.score += weights[k] * systems[k][it->second.back()].score;
      it->second.pop_back();
    }
  }
  return out;
}

}  // namespace spkback
