#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spkback/metrics.hpp"
#include "spkback/qmf.hpp"
#include "spkback/synth.hpp"
#include "support.hpp"

using namespace spkback;

namespace {

const std::array<double, 7> kPlanted{0.6, -0.4, 1.2, -0.8, 1.0, -0.7, 0.9};
constexpr double kPlantedBias = -0.5;

double eer_of(const std::vector<double>& scores, const std::vector<bool>& is_target) {
  std::vector<double> t, n;
  for (std::size_t i = 0; i < scores.size(); ++i) (is_target[i] ? t : n).push_back(scores[i]);
  return eer_from_curve(det_sweep(t, n));
}

}  // namespace

TEST(QmfFeaturesTest, Layout) {
  auto emb = oracle::make_set({{"e", {0.6, 0.8}}, {"t", {3, 4}}});
  MetadataMap meta{{"e", {"e", 1.0, 3.0, {}}}, {"t", {"t", 20.0, 7.0, {}}}};
  auto f = extract_features({"e", "t", {}}, emb, meta, 1.75, {3.0, 7.0});
  EXPECT_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], std::log(20.0));
  EXPECT_DOUBLE_EQ(f[2], 1.0);
  EXPECT_DOUBLE_EQ(f[3], 5.0);
  EXPECT_EQ(f[4], 0.0);
  EXPECT_EQ(f[5], 1.0);
  EXPECT_EQ(f[6], 1.75);
  auto capped = extract_features({"e", "t", {}}, emb, meta, 0.0, {3.0, 7.0}, {10.0});
  EXPECT_DOUBLE_EQ(capped[1], std::log(10.0));
  // Out-of-range SNR clamps into [0, 1].
  auto wide = extract_features({"e", "t", {}}, emb, meta, 0.0, {4.0, 6.0});
  EXPECT_EQ(wide[4], 0.0);
  EXPECT_EQ(wide[5], 1.0);
  EXPECT_THROW(extract_features({"e", "t", {}}, emb, meta, 0.0, {5.0, 5.0}), ValidationError);
  EXPECT_THROW(extract_features({"e", "x", {}}, emb, meta, 0.0, {3.0, 7.0}), ValidationError);
}

TEST(SnrRangeTest, Examples) {
  auto r = fit_snr_range(std::vector<double>{3, 7, 5});
  EXPECT_EQ(r.min, 3.0);
  EXPECT_EQ(r.max, 7.0);
  EXPECT_THROW(fit_snr_range(std::vector<double>{4}), ValidationError);
  EXPECT_THROW(fit_snr_range(std::vector<double>{}), ValidationError);

  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd(10, 5);
  std::vector<double> v(1000);
  for (auto& x : v) x = nd(gen);
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = x < lo ? x : lo;
    hi = x > hi ? x : hi;
  }
  auto fit = fit_snr_range(v);
  EXPECT_EQ(fit.min, lo);
  EXPECT_EQ(fit.max, hi);
}

TEST(QmfTrain, RecoversPlantedModel) {
  auto data = planted_qmf_trials(kPlanted, kPlantedBias, 50000, 77);
  QmfTrainTrace trace;
  auto model = train_qmf(data.features, data.is_target, {0, 1}, {}, &trace);
  for (std::size_t j = 0; j < 7; ++j) {
    EXPECT_LT(std::abs(model.weights[j] - kPlanted[j]) / std::abs(kPlanted[j]), 0.10) << "weight " << j;
  }
  // The mean over 50k terms carries ~1e-12 relative summation noise near convergence.
  for (std::size_t i = 1; i < trace.loss.size(); ++i)
    EXPECT_LE(trace.loss[i], trace.loss[i - 1] * (1 + 1e-12));
}

TEST(QmfTrain, SeparableScore) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<QmfFeatures> f;
  std::vector<bool> y;
  for (int i = 0; i < 400; ++i) {
    const bool t = i % 2 == 0;
    f.push_back({u(gen), u(gen), u(gen), u(gen), u(gen), u(gen), t ? 2 + u(gen) : -2 - u(gen)});
    y.push_back(t);
  }
  QmfTrainTrace trace;
  auto model = train_qmf(f, y, {0, 1}, {}, &trace);
  EXPECT_LT(trace.loss.back(), 0.01);
  EXPECT_EQ(eer_of(apply_qmf(model, f), y), 0.0);
}

TEST(QmfTrain, Errors) {
  std::vector<QmfFeatures> same(10, QmfFeatures{1, 2, 3, 4, 0.5, 0.5, 1});
  std::vector<bool> y{true, false, true, false, true, false, true, false, true, false};
  EXPECT_THROW(train_qmf(same, y, {0, 1}), ValidationError);
  auto one_const = same;
  for (std::size_t i = 0; i < one_const.size(); ++i)
    for (std::size_t j = 0; j < 7; ++j) one_const[i][j] += (j == 3 ? 0.0 : 0.1 * double(i * (j + 1) % 7));
  EXPECT_THROW(train_qmf(one_const, y, {0, 1}), ValidationError);
  std::vector<bool> all_true(10, true);
  EXPECT_THROW(train_qmf(same, all_true, {0, 1}), ValidationError);
  EXPECT_THROW(train_qmf(same, std::vector<bool>(3, true), {0, 1}), ValidationError);
}

TEST(QmfApply, Examples) {
  QmfModel zero;
  std::vector<QmfFeatures> f{{1, 2, 3, 4, 5, 6, 7}, {-1, 0, 1, 0, 1, 0, -3.5}};
  for (double s : apply_qmf(zero, f)) EXPECT_EQ(s, 0.0);
  QmfModel id;
  id.weights = {0, 0, 0, 0, 0, 0, 1};
  auto out = apply_qmf(id, f);
  EXPECT_EQ(out[0], 7.0);
  EXPECT_EQ(out[1], -3.5);
  std::vector<double> short_row{1, 2};
  EXPECT_THROW(apply_qmf(id, std::span<const double>(short_row)), ValidationError);
}

TEST(QmfApply, RankingFollowsLogOdds) {
  auto data = planted_qmf_trials(kPlanted, kPlantedBias, 500, 3);
  QmfModel planted;
  planted.weights = kPlanted;
  planted.bias = kPlantedBias;
  auto s = apply_qmf(planted, data.features);
  std::vector<double> direct;
  for (const auto& f : data.features) {
    double v = kPlantedBias;
    for (std::size_t j = 0; j < 7; ++j) v += kPlanted[j] * f[j];
    direct.push_back(v);
  }
  std::vector<std::size_t> a(s.size()), b(s.size());
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  std::sort(a.begin(), a.end(), [&](auto i, auto j) { return s[i] < s[j]; });
  std::sort(b.begin(), b.end(), [&](auto i, auto j) { return direct[i] < direct[j]; });
  EXPECT_EQ(a, b);
}

TEST(QmfModelFile, RoundTrip) {
  oracle::TempDir dir;
  QmfModel m;
  m.weights = {0.1, -1e-9, 3.25, 1.0 / 3.0, -7, 0, 2e10};
  m.bias = -0.123456789012345678;
  m.snr = {-2.5, 31.0};
  write_qmf_model(m, dir.file("q.model"));
  auto back = read_qmf_model(dir.file("q.model"));
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.snr.min, m.snr.min);
  EXPECT_EQ(back.snr.max, m.snr.max);
}

TEST(QmfTrain, MonotoneScoreTransformKeepsRanking) {
  // Rescaling the score feature only rescales its weight; calibrated ranking is unchanged.
  auto data = planted_qmf_trials(kPlanted, kPlantedBias, 5000, 9);
  auto scaled = data.features;
  for (auto& f : scaled) f[6] = 2 * f[6] + 3;
  auto a = apply_qmf(train_qmf(data.features, data.is_target, {0, 1}), data.features);
  auto b = apply_qmf(train_qmf(scaled, data.is_target, {0, 1}), scaled);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(QmfTrain, DurationDegradationImproves) {
  auto train = duration_degradation_trials(2000, 2000, 1);
  auto test = duration_degradation_trials(2000, 2000, 2);
  auto model = train_qmf(train.features, train.is_target, {0, 1});
  std::vector<double> raw;
  for (const auto& f : test.features) raw.push_back(f[6]);
  const double pre = eer_of(raw, test.is_target);
  const double post = eer_of(apply_qmf(model, test.features), test.is_target);
  EXPECT_LE(post, pre);
}
