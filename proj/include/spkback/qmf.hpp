#pragma once

// Quality measure function (QMF) calibration.
//
// Feature order is fixed:
//   0 log enroll duration   1 log test duration
//   2 enroll raw magnitude  3 test raw magnitude
//   4 enroll SNR (max-min)  5 test SNR (max-min)
//   6 AS-Norm score
// The calibrated score is the logistic-regression log-odds w.f + b.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/io.hpp"

namespace spkback {

inline constexpr std::size_t kQmfFeatureCount = 7;

using QmfFeatures = std::array<double, kQmfFeatureCount>;

struct SnrRange {
  double min = 0.0;
  double max = 0.0;
};

struct QmfModel {
  std::array<double, kQmfFeatureCount> weights{};
  double bias = 0.0;
  SnrRange snr;
};

/// Exact min/max SNR over the given utterances.
inline SnrRange fit_snr_range(const std::vector<double>& snrs) {
  if (snrs.empty()) throw ValidationError("cannot fit an SNR range on empty input");
  auto [lo, hi] = std::minmax_element(snrs.begin(), snrs.end());
  if (!(*hi > *lo)) throw ValidationError("SNR range is empty (max <= min)");
  return {*lo, *hi};
}

/// SNR range over the utterances referenced by a QMF training trial list.
inline SnrRange fit_snr_range(const std::vector<TrialRecord>& trials, const MetadataMap& metadata) {
  std::vector<double> snrs;
  for (const auto& t : trials) {
    for (const auto* id : {&t.enroll, &t.test}) {
      auto it = metadata.find(*id);
      if (it == metadata.end()) throw ValidationError("missing metadata for '" + *id + "'");
      snrs.push_back(it->second.snr);
    }
  }
  return fit_snr_range(snrs);
}

struct FeatureOptions {
  /// Durations above this many seconds are capped before the log.
  std::optional<double> duration_cap;
};

inline QmfFeatures extract_features(const TrialRecord& trial, const EmbeddingSet& embeddings,
                                    const MetadataMap& metadata, double asnorm_score, SnrRange snr,
                                    const FeatureOptions& options = {}) {
  if (!(snr.max > snr.min)) throw ValidationError("SNR range is empty (max <= min)");
  auto meta = [&](const std::string& id) -> const UtteranceMetadata& {
    auto it = metadata.find(id);
    if (it == metadata.end()) throw ValidationError("missing metadata for '" + id + "'");
    return it->second;
  };
  auto log_dur = [&](double d) {
    if (options.duration_cap) d = std::min(d, *options.duration_cap);
    return std::log(d);
  };
  auto snr_norm = [&](double v) { return std::clamp((v - snr.min) / (snr.max - snr.min), 0.0, 1.0); };
  const auto& e = meta(trial.enroll);
  const auto& t = meta(trial.test);
  return {log_dur(e.duration),
          log_dur(t.duration),
          magnitude(embeddings.row(embeddings.at(trial.enroll))),
          magnitude(embeddings.row(embeddings.at(trial.test))),
          snr_norm(e.snr),
          snr_norm(t.snr),
          asnorm_score};
}

struct QmfTrainOptions {
  double learning_rate = 0.1;
  int max_iterations = 10000;
  double gradient_tolerance = 1e-7;
};

struct QmfTrainTrace {
  std::vector<double> loss;  // mean cross-entropy at each iterate, starting from zero weights
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// Logistic regression by full-batch gradient descent on standardized
/// features; the standardization is folded back into the returned weights.
/// Targets are label 1, nontargets 0.
inline QmfModel train_qmf(const std::vector<QmfFeatures>& features, const std::vector<bool>& is_target,
                          SnrRange snr, const QmfTrainOptions& options = {}, QmfTrainTrace* trace = nullptr) {
  const std::size_t n = features.size();
  if (n != is_target.size()) throw ValidationError("feature and label counts differ");
  const auto positives = static_cast<std::size_t>(std::count(is_target.begin(), is_target.end(), true));
  if (positives == 0 || positives == n) throw ValidationError("QMF training needs both target and nontarget trials");

  constexpr std::size_t F = kQmfFeatureCount;
  std::array<double, F> mean{}, scale{};
  for (const auto& f : features) {
    for (std::size_t j = 0; j < F; ++j) {
      if (!std::isfinite(f[j])) throw ValidationError("non-finite QMF feature");
      mean[j] += f[j];
    }
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (const auto& f : features) {
    for (std::size_t j = 0; j < F; ++j) scale[j] += (f[j] - mean[j]) * (f[j] - mean[j]);
  }
  for (std::size_t j = 0; j < F; ++j) {
    scale[j] = std::sqrt(scale[j] / static_cast<double>(n));
    if (!(scale[j] > 1e-12 * std::max(1.0, std::abs(mean[j])))) {
      throw ValidationError("QMF feature " + std::to_string(j + 1) + " is constant across trials");
    }
  }

  std::vector<std::array<double, F>> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < F; ++j) z[i][j] = (features[i][j] - mean[j]) / scale[j];
  }

  std::array<double, F> w{};
  double b = 0.0;
  QmfTrainTrace local;
  std::vector<double> residual(n);
  for (int it = 0;; ++it) {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = b;
      for (std::size_t j = 0; j < F; ++j) s += w[j] * z[i][j];
      loss += detail::softplus(s) - (is_target[i] ? s : 0.0);
      residual[i] = detail::sigmoid(s) - (is_target[i] ? 1.0 : 0.0);
    }
    local.loss.push_back(loss / static_cast<double>(n));

    std::array<double, F> gw{};
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      gb += residual[i];
      for (std::size_t j = 0; j < F; ++j) gw[j] += residual[i] * z[i][j];
    }
    gb /= static_cast<double>(n);
    double gmax = std::abs(gb);
    for (auto& g : gw) {
      g /= static_cast<double>(n);
      gmax = std::max(gmax, std::abs(g));
    }
    local.iterations = it;
    if (gmax < options.gradient_tolerance) {
      local.converged = true;
      break;
    }
    if (it == options.max_iterations) break;
    b -= options.learning_rate * gb;
    for (std::size_t j = 0; j < F; ++j) w[j] -= options.learning_rate * gw[j];
  }

  QmfModel model;
  model.snr = snr;
  model.bias = b;
  for (std::size_t j = 0; j < F; ++j) {
    model.weights[j] = w[j] / scale[j];
    model.bias -= w[j] * mean[j] / scale[j];
  }
  if (trace) *trace = std::move(local);
  return model;
}

inline double apply_qmf(const QmfModel& model, std::span<const double> features) {
  if (features.size() != kQmfFeatureCount) {
    throw ValidationError("QMF expects 7 features, got " + std::to_string(features.size()));
  }
  double s = model.bias;
  for (std::size_t j = 0; j < kQmfFeatureCount; ++j) s += model.weights[j] * features[j];
  return s;
}

inline std::vector<double> apply_qmf(const QmfModel& model, const std::vector<QmfFeatures>& features) {
  std::vector<double> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(apply_qmf(model, f));
  return out;
}

/// Nine lines: seven weights, the bias, then "snr_min snr_max"; %.17g.
inline void write_qmf_model(const QmfModel& model, const std::string& path) {
  auto out = detail::open_out(path);
  for (double w : model.weights) out << detail::format_g17(w) << '\n';
  out << detail::format_g17(model.bias) << '\n';
  out << detail::format_g17(model.snr.min) << ' ' << detail::format_g17(model.snr.max) << '\n';
  detail::finish(out, path);
}

inline QmfModel read_qmf_model(const std::string& path) {
  auto lines = detail::read_lines(path);
  if (lines.size() != 9) throw ValidationError("QMF model file must have 9 lines, found " + std::to_string(lines.size()));
  QmfModel model;
  for (std::size_t j = 0; j < kQmfFeatureCount; ++j) model.weights[j] = detail::parse_double(lines[j], "QMF weight");
  model.bias = detail::parse_double(lines[7], "QMF bias");
  auto cols = detail::split_ws(lines[8]);
  if (cols.size() != 2) throw ValidationError("QMF model SNR line must hold two numbers");
  model.snr = {detail::parse_double(cols[0], "QMF snr_min"), detail::parse_double(cols[1], "QMF snr_max")};
  if (!(model.snr.max > model.snr.min)) throw ValidationError("QMF model has snr_max <= snr_min");
  return model;
}

}  // namespace spkback
