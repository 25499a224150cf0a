#pragma once

// Shared fixtures and slow reference implementations used as oracles by the
// unit tests and the acceptance runner. Nothing here calls into the library's
// algorithms; only plain data types are shared.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "spkback/embed.hpp"
#include "spkback/io.hpp"
#include "spkback/knn.hpp"

namespace oracle {

using spkback::EmbeddingSet;

// Scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("spkback-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline EmbeddingSet make_set(const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  EmbeddingSet set(rows.front().second.size());
  for (const auto& [id, v] : rows) set.add(id, v);
  return set;
}

// std::mt19937_64 keeps fixtures independent of the library's generator.
inline std::vector<double> gaussian_vector(std::mt19937_64& gen, std::size_t dim, double sigma = 1.0) {
  std::normal_distribution<double> nd(0.0, sigma);
  std::vector<double> v(dim);
  for (auto& x : v) x = nd(gen);
  return v;
}

inline double naive_cos(const std::vector<double>& a, const std::vector<double>& b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (long double)a[i] * b[i];
    aa += (long double)a[i] * a[i];
    bb += (long double)b[i] * b[i];
  }
  return static_cast<double>(ab / std::sqrt(aa * bb));
}

inline std::vector<double> row_of(const EmbeddingSet& set, const std::string& id) {
  auto r = set.row(set.at(id));
  return {r.begin(), r.end()};
}

inline std::vector<double> unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

inline std::vector<double> mean_direction(const std::vector<std::vector<double>>& rows) {
  std::vector<double> m(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    auto u = unit(r);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += u[i];
  }
  return unit(m);
}

// --- detection metrics -----------------------------------------------------

// Error rates at threshold t by direct counting; accept iff score >= t.
inline std::pair<double, double> rates_at(const std::vector<double>& tgt, const std::vector<double>& non, double t) {
  double miss = 0, fa = 0;
  for (double s : tgt) miss += s < t;
  for (double s : non) fa += s >= t;
  return {fa / non.size(), miss / tgt.size()};
}

inline std::vector<double> candidate_thresholds(const std::vector<double>& tgt, const std::vector<double>& non) {
  std::vector<double> t(tgt);
  t.insert(t.end(), non.begin(), non.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(std::numeric_limits<double>::infinity());
  return t;
}

// EER: first threshold step where miss catches up with false alarm, then the
// crossing of the two straight segments.
inline double brute_eer(const std::vector<double>& tgt, const std::vector<double>& non) {
  auto ts = candidate_thresholds(tgt, non);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    auto [f0, m0] = rates_at(tgt, non, ts[i]);
    auto [f1, m1] = rates_at(tgt, non, ts[i + 1]);
    if (f0 == m0) return f0;
    if (m0 < f0 && m1 >= f1) {
      const double d0 = f0 - m0, d1 = m1 - f1;
      const double a = d0 / (d0 + d1);
      return f0 + a * (f1 - f0);
    }
  }
  auto [f, m] = rates_at(tgt, non, ts.back());
  return (f + m) / 2;
}

inline double brute_min_dcf(const std::vector<double>& tgt, const std::vector<double>& non, double p,
                            double c_miss = 1, double c_fa = 1) {
  double best = std::numeric_limits<double>::infinity();
  for (double t : candidate_thresholds(tgt, non)) {
    auto [f, m] = rates_at(tgt, non, t);
    best = std::min(best, c_miss * p * m + c_fa * (1 - p) * f);
  }
  return best / std::min(c_miss * p, c_fa * (1 - p));
}

// --- AS-Norm -----------------------------------------------------------------

inline std::pair<double, double> top_stats(const std::vector<double>& probe, const std::vector<std::vector<double>>& cohort,
                                           std::size_t k) {
  std::vector<double> s;
  for (const auto& c : cohort) s.push_back(naive_cos(probe, c));
  std::sort(s.begin(), s.end(), std::greater<>());
  k = std::min(k, s.size());
  long double mean = 0;
  for (std::size_t i = 0; i < k; ++i) mean += s[i];
  mean /= k;
  long double var = 0;
  for (std::size_t i = 0; i < k; ++i) var += (s[i] - mean) * (s[i] - mean);
  return {double(mean), double(std::sqrt(var / k))};
}

inline double direct_as_norm(const std::vector<double>& e, const std::vector<double>& t,
                             const std::vector<std::vector<double>>& cohort, std::size_t k) {
  const double s = naive_cos(e, t);
  auto [me, se] = top_stats(e, cohort, k);
  auto [mt, st] = top_stats(t, cohort, k);
  return 0.5 * ((s - me) / se + (s - mt) / st);
}

// --- thresholds ----------------------------------------------------------------

struct Labeled {
  std::vector<std::vector<double>> x;
  std::vector<std::string> label;
};

inline double brute_t1(const Labeled& d) {
  double best = -2;
  for (std::size_t i = 0; i < d.x.size(); ++i)
    for (std::size_t j = 0; j < d.x.size(); ++j)
      if (d.label[i] != d.label[j]) best = std::max(best, std::clamp(naive_cos(d.x[i], d.x[j]), -1.0, 1.0));
  return best;
}

inline std::map<std::string, std::vector<double>> class_means(const Labeled& d) {
  std::map<std::string, std::vector<std::vector<double>>> groups;
  for (std::size_t i = 0; i < d.x.size(); ++i) groups[d.label[i]].push_back(d.x[i]);
  std::map<std::string, std::vector<double>> out;
  for (const auto& [l, rows] : groups) out[l] = mean_direction(rows);
  return out;
}

inline double brute_t2(const Labeled& d) {
  auto means = class_means(d);
  std::map<std::string, double> worst;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    double c = std::clamp(naive_cos(d.x[i], means[d.label[i]]), -1.0, 1.0);
    auto it = worst.find(d.label[i]);
    if (it == worst.end()) worst[d.label[i]] = c; else it->second = std::min(it->second, c);
  }
  double best = -2;
  for (auto& [l, v] : worst) best = std::max(best, v);
  return best;
}

inline double brute_t3(const Labeled& d) {
  auto means = class_means(d);
  double best = -2;
  for (auto& [a, va] : means)
    for (auto& [b, vb] : means)
      if (a < b) best = std::max(best, std::clamp(naive_cos(va, vb), -1.0, 1.0));
  return best;
}

// --- KNN -------------------------------------------------------------------------

// Edge set {(id_a, id_b) -> weight} with id_a < id_b.
inline std::map<std::pair<std::string, std::string>, double> brute_knn(const EmbeddingSet& set, std::size_t k,
                                                                       double min_weight) {
  std::vector<std::string> ids = set.ids();
  std::sort(ids.begin(), ids.end());
  std::map<std::pair<std::string, std::string>, double> edges;
  for (const auto& a : ids) {
    std::vector<std::pair<double, std::string>> nb;
    for (const auto& b : ids)
      if (a != b) nb.emplace_back(std::clamp(naive_cos(row_of(set, a), row_of(set, b)), -1.0, 1.0), b);
    std::sort(nb.begin(), nb.end(), [](auto& x, auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
    for (std::size_t i = 0; i < std::min(k, nb.size()); ++i) {
      if (nb[i].first < min_weight) continue;
      edges[std::minmax(a, nb[i].second)] = nb[i].first;
    }
  }
  return edges;
}

// --- Infomap -----------------------------------------------------------------------

struct SmallGraph {
  std::size_t n = 0;
  std::vector<std::vector<double>> w;  // symmetric, zero diagonal
};

// Stationary visit rates of the teleporting walk, by dense power iteration.
inline std::vector<double> visit_rates(const SmallGraph& g, double tau) {
  const std::size_t n = g.n;
  std::vector<double> p(n, 1.0 / n), strength(n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) strength[a] += g.w[a][b];
  for (int it = 0; it < 100000; ++it) {
    std::vector<double> q(n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      if (strength[a] == 0) {
        for (auto& x : q) x += p[a] / n;
        continue;
      }
      for (auto& x : q) x += tau * p[a] / n;
      for (std::size_t b = 0; b < n; ++b) q[b] += (1 - tau) * p[a] * g.w[a][b] / strength[a];
    }
    double diff = 0;
    for (std::size_t a = 0; a < n; ++a) diff = std::max(diff, std::abs(q[a] - p[a]));
    p = q;
    if (diff < 1e-15) break;
  }
  return p;
}

// Two-level map equation, textbook form q H(Q) + sum_m p_m H(P_m).
inline double direct_codelength(const SmallGraph& g, double tau, const std::vector<int>& module) {
  const auto p = visit_rates(g, tau);
  std::vector<double> strength(g.n, 0.0);
  for (std::size_t a = 0; a < g.n; ++a)
    for (std::size_t b = 0; b < g.n; ++b) strength[a] += g.w[a][b];
  const int m = *std::max_element(module.begin(), module.end()) + 1;
  std::vector<double> exit(m, 0.0), inside(m, 0.0);
  for (std::size_t a = 0; a < g.n; ++a) {
    inside[module[a]] += p[a];
    if (strength[a] == 0) continue;
    for (std::size_t b = 0; b < g.n; ++b)
      if (module[a] != module[b]) exit[module[a]] += (1 - tau) * p[a] * g.w[a][b] / strength[a];
  }
  auto H = [](const std::vector<double>& parts) {
    double total = 0, h = 0;
    for (double x : parts) total += x;
    if (total <= 0) return 0.0;
    for (double x : parts)
      if (x > 0) h -= (x / total) * std::log2(x / total);
    return h;
  };
  double q = 0;
  for (double e : exit) q += e;
  double L = q * H(exit);
  for (int k = 0; k < m; ++k) {
    std::vector<double> parts{exit[k]};
    for (std::size_t a = 0; a < g.n; ++a)
      if (module[a] == k) parts.push_back(p[a]);
    double pm = 0;
    for (double x : parts) pm += x;
    L += pm * H(parts);
  }
  return L;
}

// Minimum codelength over every set partition (restricted growth strings).
inline double brute_min_codelength(const SmallGraph& g, double tau) {
  std::vector<int> rgs(g.n, 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int used) {
    if (i == g.n) {
      best = std::min(best, direct_codelength(g, tau, rgs));
      return;
    }
    for (int k = 0; k <= used; ++k) {
      rgs[i] = k;
      rec(i + 1, std::max(used, k + 1));
    }
  };
  rgs[0] = 0;
  rec(1, 1);
  return best;
}

inline SmallGraph random_small_graph(std::mt19937_64& gen, std::size_t n, double edge_prob) {
  SmallGraph g;
  g.n = n;
  g.w.assign(n, std::vector<double>(n, 0.0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (u(gen) < edge_prob) g.w[a][b] = g.w[b][a] = 0.05 + u(gen);
  return g;
}

inline spkback::KnnGraph to_knn_graph(const SmallGraph& g) {
  spkback::KnnGraph out;
  for (std::size_t a = 0; a < g.n; ++a) out.nodes.push_back("n" + std::to_string(a));
  for (std::size_t a = 0; a < g.n; ++a)
    for (std::size_t b = a + 1; b < g.n; ++b)
      if (g.w[a][b] > 0) out.edges.push_back({a, b, g.w[a][b]});
  return out;
}

// --- partitions ---------------------------------------------------------------------

inline double nmi_of(const std::map<std::string, int>& a, const std::map<std::string, std::string>& b) {
  std::map<int, double> ca;
  std::map<std::string, double> cb;
  std::map<std::pair<int, std::string>, double> joint;
  double n = 0;
  for (const auto& [id, la] : a) {
    auto it = b.find(id);
    if (it == b.end()) continue;
    ca[la] += 1;
    cb[it->second] += 1;
    joint[{la, it->second}] += 1;
    n += 1;
  }
  double ha = 0, hb = 0, mi = 0;
  for (auto& [k, c] : ca) ha -= c / n * std::log(c / n);
  for (auto& [k, c] : cb) hb -= c / n * std::log(c / n);
  for (auto& [k, c] : joint) mi += c / n * std::log(c * n / (ca[k.first] * cb[k.second]));
  if (ha + hb == 0) return 1.0;
  return 2 * mi / (ha + hb);
}

}  // namespace oracle
