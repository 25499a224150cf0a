#pragma once

// Detection metrics over labeled scores. Decision rule: accept iff
// score >= threshold. The sweep visits every distinct score plus +inf
// (reject everything), so both trivial operating points are present.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "spkback/error.hpp"
#include "spkback/io.hpp"

namespace spkback {

struct DetPoint {
  double threshold;
  double false_alarm;
  double miss;
};

using DetCurve = std::vector<DetPoint>;

struct ClassScores {
  std::vector<double> target;
  std::vector<double> nontarget;
};

inline ClassScores split_by_label(const std::vector<ScoredTrial>& scored) {
  ClassScores out;
  for (const auto& s : scored) {
    if (!s.target) throw ValidationError("trial " + s.enroll + " " + s.test + " has no label");
    (*s.target ? out.target : out.nontarget).push_back(s.score);
  }
  return out;
}

inline DetCurve det_sweep(std::vector<double> target, std::vector<double> nontarget) {
  if (target.empty() || nontarget.empty()) {
    throw ValidationError("detection metrics need at least one target and one nontarget trial");
  }
  std::sort(target.begin(), target.end());
  std::sort(nontarget.begin(), nontarget.end());
  std::vector<double> thresholds;
  thresholds.reserve(target.size() + nontarget.size() + 1);
  std::merge(target.begin(), target.end(), nontarget.begin(), nontarget.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double nt = static_cast<double>(target.size());
  const double nn = static_cast<double>(nontarget.size());
  DetCurve curve;
  curve.reserve(thresholds.size());
  std::size_t below_t = 0;  // targets with score < threshold
  std::size_t below_n = 0;  // nontargets with score < threshold
  for (double thr : thresholds) {
    while (below_t < target.size() && target[below_t] < thr) ++below_t;
    while (below_n < nontarget.size() && nontarget[below_n] < thr) ++below_n;
    curve.push_back({thr, static_cast<double>(nontarget.size() - below_n) / nn, static_cast<double>(below_t) / nt});
  }
  return curve;
}

inline DetCurve det_sweep(const std::vector<ScoredTrial>& scored) {
  auto split = split_by_label(scored);
  return det_sweep(std::move(split.target), std::move(split.nontarget));
}

/// Equal error rate by linear interpolation between the two sweep points
/// that bracket the FA == miss crossing.
inline double eer_from_curve(const DetCurve& curve) {
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const double d0 = curve[i].false_alarm - curve[i].miss;
    const double d1 = curve[i + 1].false_alarm - curve[i + 1].miss;
    if (d0 >= 0.0 && d1 <= 0.0) {
      if (d0 == 0.0) return curve[i].false_alarm;
      const double t = d0 / (d0 - d1);
      return curve[i].false_alarm + t * (curve[i + 1].false_alarm - curve[i].false_alarm);
    }
  }
  // The sweep starts at FA=1, miss=0 and ends at FA=0, miss=1; unreachable.
  return curve.back().miss;
}

inline double eer(const std::vector<ScoredTrial>& scored) { return eer_from_curve(det_sweep(scored)); }

struct DcfCosts {
  double c_miss = 1.0;
  double c_fa = 1.0;
};

inline double min_dcf_from_curve(const DetCurve& curve, double p_target, DcfCosts costs = {}) {
  if (!(p_target > 0.0 && p_target < 1.0)) throw ValidationError("p_target must lie in (0, 1)");
  const double wm = costs.c_miss * p_target;
  const double wf = costs.c_fa * (1.0 - p_target);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : curve) best = std::min(best, wm * p.miss + wf * p.false_alarm);
  return best / std::min(wm, wf);
}

inline double min_dcf(const std::vector<ScoredTrial>& scored, double p_target, DcfCosts costs = {}) {
  if (!(p_target > 0.0 && p_target < 1.0)) throw ValidationError("p_target must lie in (0, 1)");
  return min_dcf_from_curve(det_sweep(scored), p_target, costs);
}

}  // namespace spkback
