#pragma once

// Seeded synthetic corpora with planted ground truth.
//
// Speaker centroids are normalized standard Gaussian vectors. An utterance is
// normalize(centroid + noise), noise coordinates ~ N(0, (noise_sigma^2)/dim),
// so noise_sigma is the expected norm of the perturbation independent of the
// dimension. Durations are log-uniform in [0.5, 30] s and SNR uniform in
// [0, 30] dB. Random numbers come from spkback::Rng (see rng.hpp), drawn in
// this order: all centroids (speaker order), then per utterance its noise
// vector, duration and SNR.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/io.hpp"
#include "spkback/partition.hpp"
#include "spkback/qmf.hpp"
#include "spkback/rng.hpp"

namespace spkback {

struct SynthConfig {
  std::size_t speakers = 50;
  std::size_t utts_per_speaker = 20;
  std::size_t dim = 64;
  double noise_sigma = 0.3;
  double impure_fraction = 0.0;
  std::uint64_t seed = 0;
  std::string id_prefix = "";
};

struct PlantedPartition {
  Partition partition;
  std::set<int> impure;  // labels of planted two-speaker classes
};

struct SynthCorpus {
  EmbeddingSet embeddings;
  MetadataMap metadata;  // speaker set to the true speaker
  std::vector<Vector> centroids;
  PlantedPartition pseudo_labels;

  std::map<std::string, std::string> truth() const {
    std::map<std::string, std::string> out;
    for (const auto& [id, m] : metadata) out[id] = *m.speaker;
    return out;
  }
};

inline std::string synth_speaker_name(const std::string& prefix, std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%04zu", s);
  return prefix + buf;
}

inline std::string synth_utterance_id(const std::string& prefix, std::size_t s, std::size_t u) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "spk%04zu-u%03zu", s, u);
  return prefix + buf;
}

/// Merges pairs of clusters into planted two-source classes. The number of
/// merged classes m satisfies m / (C - m) ~= fraction; pairs are taken from a
/// seeded shuffle of the labels and each merged class keeps its lower label.
inline PlantedPartition plant_merges(const Partition& partition, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("impure fraction must lie in [0, 1]");
  auto groups = partition.clusters();
  std::vector<int> labels;
  for (const auto& [label, members] : groups) labels.push_back(label);
  const auto c = static_cast<double>(labels.size());
  auto merges = static_cast<std::size_t>(std::llround(fraction * c / (1.0 + fraction)));
  merges = std::min(merges, labels.size() / 2);
  Rng rng(seed);
  rng.shuffle(labels);
  std::map<int, int> target;
  PlantedPartition out;
  for (std::size_t i = 0; i < merges; ++i) {
    const int a = std::min(labels[2 * i], labels[2 * i + 1]);
    const int b = std::max(labels[2 * i], labels[2 * i + 1]);
    target[b] = a;
    out.impure.insert(a);
  }
  for (const auto& [id, label] : partition.assignment()) {
    auto it = target.find(label);
    out.partition.assign(id, it == target.end() ? label : it->second);
  }
  return out;
}

inline SynthCorpus generate_embeddings(const SynthConfig& config) {
  if (config.speakers == 0 || config.utts_per_speaker == 0 || config.dim == 0) {
    throw ValidationError("synthetic corpus counts must be positive");
  }
  if (!(config.noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
  Rng rng(config.seed);
  SynthCorpus corpus{EmbeddingSet(config.dim), {}, {}, {}};
  for (std::size_t s = 0; s < config.speakers; ++s) {
    Vector c(config.dim);
    for (auto& x : c) x = rng.gaussian();
    corpus.centroids.push_back(l2_normalize(c));
  }
  const double coord_sigma = config.noise_sigma / std::sqrt(static_cast<double>(config.dim));
  const double log_lo = std::log(0.5), log_hi = std::log(30.0);
  Partition truth;
  for (std::size_t s = 0; s < config.speakers; ++s) {
    const std::string speaker = synth_speaker_name(config.id_prefix, s);
    for (std::size_t u = 0; u < config.utts_per_speaker; ++u) {
      Vector v = corpus.centroids[s];
      for (auto& x : v) x += coord_sigma * rng.gaussian();
      const std::string id = synth_utterance_id(config.id_prefix, s, u);
      corpus.embeddings.add(id, l2_normalize(v));
      const double duration = std::exp(rng.uniform(log_lo, log_hi));
      const double snr = rng.uniform(0.0, 30.0);
      corpus.metadata.emplace(id, UtteranceMetadata{id, duration, snr, speaker});
      truth.assign(id, static_cast<int>(s));
    }
  }
  corpus.pseudo_labels = plant_merges(truth, config.impure_fraction, config.seed ^ 0x5eed5eedULL);
  return corpus;
}

/// Labeled trials: targets share the true speaker, nontargets do not; no
/// unordered pair repeats. Order is a seeded shuffle.
inline std::vector<TrialRecord> generate_trials(const MetadataMap& metadata, std::size_t n_target,
                                                std::size_t n_nontarget, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<std::size_t> spk;
  std::map<std::string, std::size_t> speaker_index;
  std::vector<std::vector<std::size_t>> by_speaker;
  for (const auto& [id, m] : metadata) {
    if (!m.speaker) throw ValidationError("utterance '" + id + "' has no speaker label");
    auto [it, fresh] = speaker_index.emplace(*m.speaker, by_speaker.size());
    if (fresh) by_speaker.emplace_back();
    by_speaker[it->second].push_back(ids.size());
    spk.push_back(it->second);
    ids.push_back(id);
  }
  const std::size_t n = ids.size();
  std::size_t target_pairs = 0;
  for (const auto& g : by_speaker) target_pairs += g.size() * (g.size() - 1) / 2;
  const std::size_t all_pairs = n * (n > 0 ? n - 1 : 0) / 2;
  const std::size_t nontarget_pairs = all_pairs - target_pairs;
  if (n_target > target_pairs) throw ValidationError("not enough same-speaker pairs for the requested target trials");
  if (n_nontarget > nontarget_pairs) {
    throw ValidationError("not enough different-speaker pairs for the requested nontarget trials");
  }

  Rng rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<TrialRecord> out;
  auto sample = [&](std::size_t want, std::size_t available, bool target) {
    if (want == 0) return;
    std::vector<std::pair<std::size_t, std::size_t>> picked;
    if (want * 2 > available) {
      // dense request: enumerate and shuffle
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if ((spk[i] == spk[j]) == target) picked.emplace_back(i, j);
        }
      }
      rng.shuffle(picked);
      picked.resize(want);
    } else {
      while (picked.size() < want) {
        const std::size_t i = rng.below(n);
        std::size_t j;
        if (target) {
          const auto& g = by_speaker[spk[i]];
          if (g.size() < 2) continue;
          j = g[rng.below(g.size())];
        } else {
          j = rng.below(n);
        }
        if (i == j || (spk[i] == spk[j]) != target) continue;
        if (!used.emplace(std::min(i, j), std::max(i, j)).second) continue;
        picked.emplace_back(i, j);
      }
    }
    for (const auto& [i, j] : picked) out.push_back({ids[i], ids[j], target});
  };
  sample(n_target, target_pairs, true);
  sample(n_nontarget, nontarget_pairs, false);
  rng.shuffle(out);
  return out;
}

struct QmfScenario {
  std::vector<QmfFeatures> features;
  std::vector<bool> is_target;
};

/// Trials drawn from a planted logistic model: label ~ Bernoulli(sigmoid(w.f + b)).
/// Features: log durations (log-uniform 0.5-30 s), magnitudes U[0.5, 1.5],
/// normalized SNRs U[0, 1], score N(0, 2^2).
inline QmfScenario planted_qmf_trials(const std::array<double, kQmfFeatureCount>& weights, double bias,
                                      std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  QmfScenario out;
  const double log_lo = std::log(0.5), log_hi = std::log(30.0);
  for (std::size_t i = 0; i < n; ++i) {
    QmfFeatures f{rng.uniform(log_lo, log_hi), rng.uniform(log_lo, log_hi), rng.uniform(0.5, 1.5),
                  rng.uniform(0.5, 1.5),        rng.uniform(),                rng.uniform(),
                  2.0 * rng.gaussian()};
    double s = bias;
    for (std::size_t j = 0; j < kQmfFeatureCount; ++j) s += weights[j] * f[j];
    out.features.push_back(f);
    out.is_target.push_back(rng.uniform() < 1.0 / (1.0 + std::exp(-s)));
  }
  return out;
}

/// Calibration scenario where short utterances inflate nontarget scores:
/// targets score N(4, 1), nontargets N(0, 1) + 3 (1 - r) where r in [0, 1]
/// is the position of the shorter duration on the log scale of [0.5, 30] s.
/// Features follow extract_features' layout with the score in slot 6.
inline QmfScenario duration_degradation_trials(std::size_t n_target, std::size_t n_nontarget, std::uint64_t seed) {
  Rng rng(seed);
  QmfScenario out;
  const double log_lo = std::log(0.5), log_hi = std::log(30.0);
  auto make = [&](bool target) {
    const double d1 = rng.uniform(log_lo, log_hi), d2 = rng.uniform(log_lo, log_hi);
    const double r = (std::min(d1, d2) - log_lo) / (log_hi - log_lo);
    const double score = target ? 4.0 + rng.gaussian() : rng.gaussian() + 3.0 * (1.0 - r);
    out.features.push_back({d1, d2, rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(), rng.uniform(), score});
    out.is_target.push_back(target);
  };
  for (std::size_t i = 0; i < n_target; ++i) make(true);
  for (std::size_t i = 0; i < n_nontarget; ++i) make(false);
  return out;
}

}  // namespace spkback
