#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "spkback/scoring.hpp"
#include "support.hpp"

using namespace spkback;
using V = std::vector<double>;

namespace {

struct Fixture {
  EmbeddingSet emb{32};
  std::vector<TrialRecord> trials;
  std::vector<std::vector<double>> cohort_rows;
  EmbeddingSet cohort_set{32};
};

Fixture random_fixture(std::uint64_t seed, std::size_t n_utts, std::size_t n_trials, std::size_t n_cohort) {
  std::mt19937_64 gen(seed);
  Fixture f;
  for (std::size_t i = 0; i < n_utts; ++i) f.emb.add("u" + std::to_string(i), oracle::gaussian_vector(gen, 32));
  std::uniform_int_distribution<std::size_t> pick(0, n_utts - 1);
  for (std::size_t i = 0; i < n_trials; ++i) {
    f.trials.push_back({"u" + std::to_string(pick(gen)), "u" + std::to_string(pick(gen)), std::nullopt});
  }
  for (std::size_t i = 0; i < n_cohort; ++i) {
    f.cohort_rows.push_back(oracle::gaussian_vector(gen, 32));
    f.cohort_set.add("c" + std::to_string(i), f.cohort_rows.back());
  }
  return f;
}

Cohort as_cohort(const EmbeddingSet& set) {
  Cohort c{EmbeddingSet(set.dim()), CohortSource::UtteranceSample};
  for (std::size_t i = 0; i < set.size(); ++i) c.entries.add(set.id(i), l2_normalize(set.row(i)));
  return c;
}

}  // namespace

TEST(ScoreTrials, Examples) {
  auto emb = oracle::make_set({{"a", {1, 0}}, {"b", {0, 2}}});
  auto s = score_trials({{"a", "a", {}}, {"a", "b", true}}, emb);
  EXPECT_DOUBLE_EQ(s[0].score, 1.0);
  EXPECT_DOUBLE_EQ(s[1].score, 0.0);
  EXPECT_EQ(s[1].target, true);
  try {
    score_trials({{"a", "ghost", {}}}, emb);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(ScoreTrials, MatchesPairwiseOracle) {
  auto f = random_fixture(11, 60, 100, 0);
  for (unsigned threads : {1u, 3u}) {
    auto s = score_trials(f.trials, f.emb, threads);
    ASSERT_EQ(s.size(), 100u);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_NEAR(s[i].score, oracle::naive_cos(oracle::row_of(f.emb, f.trials[i].enroll),
                                                oracle::row_of(f.emb, f.trials[i].test)),
                  1e-12);
    }
  }
}

TEST(SpeakerCohort, OneUnitEntryPerSpeaker) {
  auto emb = oracle::make_set({{"a1", {0, 2}}, {"a2", {0, 2}}, {"b1", {3, 0}}, {"b2", {3, 0}}});
  MetadataMap meta{{"a1", {"a1", 2, 0, "spkA"}}, {"a2", {"a2", 2, 0, "spkA"}},
                   {"b1", {"b1", 2, 0, "spkB"}}, {"b2", {"b2", 2, 0, "spkB"}}};
  auto c = build_speaker_cohort(emb, meta);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.entries.id(0), "spkA");
  EXPECT_EQ(oracle::row_of(c.entries, "spkA"), (V{0, 1}));
  EXPECT_EQ(oracle::row_of(c.entries, "spkB"), (V{1, 0}));

  auto bad = oracle::make_set({{"x1", {1, 0}}, {"x2", {-1, 0}}});
  MetadataMap bm{{"x1", {"x1", 2, 0, "s"}}, {"x2", {"x2", 2, 0, "s"}}};
  EXPECT_THROW(build_speaker_cohort(bad, bm), ValidationError);
  MetadataMap unlabeled{{"x1", {"x1", 2, 0, {}}}, {"x2", {"x2", 2, 0, "s"}}};
  EXPECT_THROW(build_speaker_cohort(bad, unlabeled), ValidationError);
}

TEST(SpeakerCohort, CountEqualsSpeakerCount) {
  std::mt19937_64 gen(3);
  EmbeddingSet emb(8);
  MetadataMap meta;
  for (int s = 0; s < 300; ++s) {
    for (int u = 0; u < 2; ++u) {
      const std::string id = "s" + std::to_string(s) + "u" + std::to_string(u);
      emb.add(id, oracle::gaussian_vector(gen, 8));
      meta[id] = {id, 2.0, 0.0, "spk" + std::to_string(s)};
    }
  }
  auto c = build_speaker_cohort(emb, meta);
  EXPECT_EQ(c.size(), 300u);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(magnitude(c.entries.row(i)), 1.0, 1e-9);
}

TEST(UtteranceCohort, SamplingProperties) {
  std::mt19937_64 gen(5);
  EmbeddingSet small(3);
  for (int i = 0; i < 5; ++i) small.add("u" + std::to_string(4 - i), oracle::gaussian_vector(gen, 3));
  auto all = sample_utterance_cohort(small, 5, 1);
  EXPECT_EQ(all.entries.ids(), (std::vector<std::string>{"u0", "u1", "u2", "u3", "u4"}));
  EXPECT_EQ(sample_utterance_cohort(small, 2, 7).entries, sample_utterance_cohort(small, 2, 7).entries);
  EXPECT_THROW(sample_utterance_cohort(small, 6, 7), ValidationError);

  EmbeddingSet big(4);
  for (int i = 0; i < 30000; ++i) big.add("x" + std::to_string(i), oracle::gaussian_vector(gen, 4));
  auto c = sample_utterance_cohort(big, 20000, 42);
  std::set<std::string> ids(c.entries.ids().begin(), c.entries.ids().end());
  EXPECT_EQ(ids.size(), 20000u);
  EXPECT_TRUE(std::is_sorted(c.entries.ids().begin(), c.entries.ids().end()));
  // Different seeds give different draws.
  EXPECT_NE(sample_utterance_cohort(big, 100, 1).entries.ids(), sample_utterance_cohort(big, 100, 2).entries.ids());
}

TEST(AsNorm, HandComputedExample) {
  // Enrollment-side cohort cosines {0.5, 0.1}, test-side {0.3, 0.1}.
  auto emb = oracle::make_set({{"e", {0.5, 0.1, std::sqrt(1 - 0.26), 0}}, {"t", {0.3, 0.1, 0, std::sqrt(0.9)}}});
  Cohort c{oracle::make_set({{"c1", {1, 0, 0, 0}}, {"c2", {0, 1, 0, 0}}}), CohortSource::UtteranceSample};
  auto out = as_norm({{"e", "t", 0.6, true}}, emb, c, {2});
  EXPECT_NEAR(out[0].score, 2.75, 1e-12);
  EXPECT_EQ(out[0].target, true);
  // s at both means: mu_e = 0.3, mu_t = 0.2 differ, so use a symmetric probe.
  auto sym = oracle::make_set({{"e", {0.5, 0.1, std::sqrt(1 - 0.26), 0}}, {"t", {0.5, 0.1, 0, std::sqrt(1 - 0.26)}}});
  EXPECT_NEAR(as_norm({{"e", "t", 0.3, {}}}, sym, c, {2})[0].score, 0.0, 1e-15);
}

TEST(AsNorm, Errors) {
  auto emb = oracle::make_set({{"e", {1, 0}}, {"t", {0, 1}}});
  Cohort same{oracle::make_set({{"c1", {1, 1}}, {"c2", {1, 1}}}), CohortSource::UtteranceSample};
  try {
    as_norm({{"e", "t", 0.1, {}}}, emb, same, {2});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "degenerate cohort variance");
  }
  EXPECT_THROW(as_norm({{"e", "t", 0.1, {}}}, emb, same, {3}), ValidationError);
  EXPECT_THROW(as_norm({{"e", "t", 0.1, {}}}, emb, same, {0}), ValidationError);
}

TEST(AsNorm, MatchesDirectFormula) {
  auto f = random_fixture(21, 80, 150, 400);
  auto raw = score_trials(f.trials, f.emb);
  auto out = as_norm(raw, f.emb, as_cohort(f.cohort_set), {50}, 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double want = oracle::direct_as_norm(oracle::row_of(f.emb, f.trials[i].enroll),
                                               oracle::row_of(f.emb, f.trials[i].test), f.cohort_rows, 50);
    EXPECT_NEAR(out[i].score, want, 1e-10);
  }
}

TEST(AsNorm, AffineInRawScoreAndOrderInvariant) {
  auto f = random_fixture(22, 40, 60, 200);
  auto cohort = as_cohort(f.cohort_set);
  auto raw = score_trials(f.trials, f.emb);
  auto base = as_norm(raw, f.emb, cohort, {30});
  auto shifted = raw;
  for (auto& s : shifted) s.score += 0.25;
  auto moved = as_norm(shifted, f.emb, cohort, {30});
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_GT(moved[i].score, base[i].score);

  // Reversed cohort and reversed trial list give the same per-trial values.
  EmbeddingSet rev(32);
  for (std::size_t i = cohort.size(); i-- > 0;) rev.add(cohort.entries.id(i), cohort.entries.row(i));
  Cohort rc{rev, CohortSource::UtteranceSample};
  auto rtrials = raw;
  std::reverse(rtrials.begin(), rtrials.end());
  auto r = as_norm(rtrials, f.emb, rc, {30});
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_EQ(r[raw.size() - 1 - i].score, base[i].score);

  // Swapping enrollment and test leaves the normalized score unchanged.
  auto swapped = raw;
  for (auto& s : swapped) std::swap(s.enroll, s.test);
  auto sw = as_norm(swapped, f.emb, cohort, {30});
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(sw[i].score, base[i].score, 1e-12);
}

TEST(Fuse, Examples) {
  std::vector<ScoredTrial> a{{"x", "y", 1.5, true}, {"x", "z", -0.5, false}};
  std::vector<ScoredTrial> b{{"x", "z", 2.0, {}}, {"x", "y", 4.0, {}}};
  auto first = fuse({a, b}, {1, 0});
  EXPECT_EQ(first[0].score, 1.5);
  EXPECT_EQ(first[1].score, -0.5);
  auto same = fuse({a, a}, {0.5, 0.5});
  EXPECT_EQ(same[0].score, 1.5);
  EXPECT_EQ(same[1].score, -0.5);
  EXPECT_THROW(fuse({a, b}, {1}), ValidationError);
  EXPECT_THROW(fuse({a, b}, {0, 0}), ValidationError);
  std::vector<ScoredTrial> c{{"x", "y", 1.0, {}}, {"q", "z", 1.0, {}}};
  EXPECT_THROW(fuse({a, c}, {0.5, 0.5}), ValidationError);
}

TEST(Fuse, WeightedSumOracle) {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  std::vector<std::vector<ScoredTrial>> sys(3);
  for (int i = 0; i < 200; ++i) {
    for (auto& s : sys) s.push_back({"e" + std::to_string(i % 17), "t" + std::to_string(i), nd(gen), i % 3 == 0});
  }
  // Shuffle the later systems so alignment must go by key.
  std::shuffle(sys[1].begin(), sys[1].end(), gen);
  std::shuffle(sys[2].begin(), sys[2].end(), gen);
  std::map<std::string, std::vector<double>> by_key;
  for (const auto& s : sys)
    for (const auto& t : s) by_key[t.enroll + "|" + t.test].push_back(t.score);
  auto out = fuse(sys, {0.5, 0.3, 0.2});
  ASSERT_EQ(out.size(), 200u);
  for (const auto& t : out) {
    const auto& v = by_key[t.enroll + "|" + t.test];
    EXPECT_NEAR(t.score, 0.5 * v[0] + 0.3 * v[1] + 0.2 * v[2], 1e-12);
  }
}
