#pragma once

// Two-level Infomap: minimizes the map equation
//
//   L(M) = q H(Q) + sum_m p_m H(P_m)
//
// over partitions M of a weighted undirected graph. Visit rates p_a are the
// stationary distribution of the weight-proportional random walk with
// uniform teleportation; link flows (1 - tau) p_a w_ab / w_a carry the exit
// rates q_m (teleportation steps are not coded). In expanded form, with
// plogp(x) = x log2 x:
//
//   L = plogp(sum q_m) - 2 sum plogp(q_m) - sum_a plogp(p_a)
//       + sum_m plogp(q_m + sum_{a in m} p_a)
//
// Optimization is Louvain-style: nodes are visited in descending visit rate
// (ties by index) and moved to the neighboring module with the largest
// strictly negative change in L (ties to the lowest module id), sweeps repeat
// until none moves, modules are then aggregated into super-nodes and the
// procedure recurses. The coarsened solution is unfolded to the leaves and
// refined while L keeps dropping: by repeating the procedure from that
// partition, by splitting modules into sub-modules that may move as units,
// and by moving adjacent node pairs together. The same refinement is also started from the solution with each
// connected component collapsed and from the one-module partition; the
// lowest L wins.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "spkback/error.hpp"
#include "spkback/knn.hpp"
#include "spkback/partition.hpp"
#include "spkback/rng.hpp"

namespace spkback {

struct InfomapConfig {
  double teleport = 0.15;
  std::uint64_t seed = 0;
  /// Additional optimization trials with seeded random sweep orders; the
  /// partition with the lowest L wins (the deterministic trial on ties).
  int extra_trials = 0;
};

/// Visit rates and directed link flows of a graph.
struct FlowNetwork {
  struct Link {
    std::size_t source;
    std::size_t target;
    double flow;
  };
  std::vector<double> node_flow;
  std::vector<Link> links;
  int power_iterations = 0;

  std::size_t size() const { return node_flow.size(); }
};

/// Edges with non-positive weight carry no flow.
inline FlowNetwork compute_flow(const KnnGraph& graph, double teleport) {
  if (!(teleport > 0.0 && teleport < 1.0)) throw ValidationError("teleportation probability must lie in (0, 1)");
  const std::size_t n = graph.node_count();
  FlowNetwork net;
  if (n == 0) return net;
  std::vector<double> strength(n, 0.0);
  for (const auto& e : graph.edges) {
    if (e.weight > 0.0) {
      strength[e.a] += e.weight;
      strength[e.b] += e.weight;
    }
  }
  struct Arc {
    std::size_t source, target;
    double prob;
  };
  std::vector<Arc> arcs;
  for (const auto& e : graph.edges) {
    if (e.weight <= 0.0) continue;
    arcs.push_back({e.a, e.b, e.weight / strength[e.a]});
    arcs.push_back({e.b, e.a, e.weight / strength[e.b]});
  }

  const double nd = static_cast<double>(n);
  std::vector<double> p(n, 1.0 / nd), next(n);
  for (int it = 1; it <= 1000; ++it) {
    double dangling = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (strength[i] == 0.0) dangling += p[i];
    }
    const double base = (teleport + (1.0 - teleport) * dangling) / nd;
    std::fill(next.begin(), next.end(), base);
    for (const auto& a : arcs) next[a.target] += (1.0 - teleport) * p[a.source] * a.prob;
    const double total = std::accumulate(next.begin(), next.end(), 0.0);
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] /= total;
      residual = std::max(residual, std::abs(next[i] - p[i]));
    }
    p.swap(next);
    net.power_iterations = it;
    if (residual < 1e-12) break;
  }
  net.node_flow = p;
  net.links.reserve(arcs.size());
  for (const auto& a : arcs) net.links.push_back({a.source, a.target, (1.0 - teleport) * p[a.source] * a.prob});
  return net;
}

namespace detail {

inline double plogp(double x) { return x > 0.0 ? x * std::log2(x) : 0.0; }

struct LevelGraph {
  std::vector<double> flow;
  std::vector<std::vector<std::pair<std::size_t, double>>> out, in;
  std::vector<double> out_total, in_total;

  std::size_t size() const { return flow.size(); }
};

inline LevelGraph leaf_level(const FlowNetwork& net) {
  LevelGraph g;
  const std::size_t n = net.size();
  g.flow = net.node_flow;
  g.out.resize(n);
  g.in.resize(n);
  g.out_total.assign(n, 0.0);
  g.in_total.assign(n, 0.0);
  for (const auto& l : net.links) {
    g.out[l.source].emplace_back(l.target, l.flow);
    g.in[l.target].emplace_back(l.source, l.flow);
    g.out_total[l.source] += l.flow;
    g.in_total[l.target] += l.flow;
  }
  return g;
}

/// Relabels modules densely in order of first appearance; returns the count.
inline std::size_t densify(std::vector<std::size_t>& module) {
  std::vector<std::size_t> remap(module.size(), SIZE_MAX);
  std::size_t next = 0;
  for (auto& m : module) {
    if (remap[m] == SIZE_MAX) remap[m] = next++;
    m = remap[m];
  }
  return next;
}

inline LevelGraph aggregate(const LevelGraph& g, const std::vector<std::size_t>& module, std::size_t count) {
  LevelGraph h;
  h.flow.assign(count, 0.0);
  h.out.resize(count);
  h.in.resize(count);
  h.out_total.assign(count, 0.0);
  h.in_total.assign(count, 0.0);
  std::map<std::pair<std::size_t, std::size_t>, double> links;
  for (std::size_t v = 0; v < g.size(); ++v) {
    h.flow[module[v]] += g.flow[v];
    for (const auto& [u, f] : g.out[v]) {
      if (module[u] != module[v]) links[{module[v], module[u]}] += f;
    }
  }
  for (const auto& [key, f] : links) {
    h.out[key.first].emplace_back(key.second, f);
    h.in[key.second].emplace_back(key.first, f);
    h.out_total[key.first] += f;
    h.in_total[key.second] += f;
  }
  return h;
}

/// Local moving on one level starting from `module`. Returns true if any
/// node changed module.
inline bool move_nodes(const LevelGraph& g, std::vector<std::size_t>& module, const std::vector<std::size_t>& order) {
  constexpr double kMinGain = 1e-12;
  const std::size_t n = g.size();
  std::vector<double> exit(n, 0.0), flow(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    flow[module[v]] += g.flow[v];
    for (const auto& [u, f] : g.out[v]) {
      if (module[u] != module[v]) exit[module[v]] += f;
    }
  }
  double total_exit = std::accumulate(exit.begin(), exit.end(), 0.0);
  auto term = [](double q, double p) { return -2.0 * plogp(q) + plogp(q + p); };

  std::vector<std::size_t> members(n, 0);
  for (std::size_t v = 0; v < n; ++v) ++members[module[v]];
  std::vector<std::size_t> empty;
  for (std::size_t m = n; m-- > 0;) {
    if (members[m] == 0) empty.push_back(m);
  }

  std::vector<double> out_to(n, 0.0), in_from(n, 0.0);
  std::vector<char> touched(n, 0);
  std::vector<std::size_t> candidates;
  bool any = false;
  while (true) {
    bool moved = false;
    for (std::size_t v : order) {
      const std::size_t cur = module[v];
      candidates.clear();
      auto touch = [&](std::size_t m) {
        if (!touched[m]) {
          touched[m] = 1;
          candidates.push_back(m);
        }
      };
      touch(cur);
      // A node sharing its module may also split off into an empty one.
      if (members[cur] > 1 && !empty.empty()) touch(empty.back());
      for (const auto& [u, f] : g.out[v]) {
        touch(module[u]);
        out_to[module[u]] += f;
      }
      for (const auto& [u, f] : g.in[v]) {
        touch(module[u]);
        in_from[module[u]] += f;
      }
      std::sort(candidates.begin(), candidates.end());

      const double fv = g.flow[v];
      const double ov = g.out_total[v];
      const double exit_cur = exit[cur] - (ov - out_to[cur]) + in_from[cur];
      const double flow_cur = flow[cur] - fv;
      double best_delta = -kMinGain;
      std::size_t best = cur;
      double best_exit = 0.0;
      for (std::size_t m : candidates) {
        if (m == cur) continue;
        const double exit_m = exit[m] + (ov - out_to[m]) - in_from[m];
        const double q_new = total_exit - exit[cur] - exit[m] + exit_cur + exit_m;
        const double delta = plogp(q_new) - plogp(total_exit) + term(exit_cur, flow_cur) +
                             term(exit_m, flow[m] + fv) - term(exit[cur], flow[cur]) - term(exit[m], flow[m]);
        if (delta < best_delta) {
          best_delta = delta;
          best = m;
          best_exit = exit_m;
        }
      }
      if (best != cur) {
        total_exit += exit_cur + best_exit - exit[cur] - exit[best];
        exit[cur] = exit_cur;
        flow[cur] = flow_cur;
        exit[best] = best_exit;
        flow[best] += fv;
        module[v] = best;
        if (members[best]++ == 0) empty.pop_back();
        if (--members[cur] == 0) empty.push_back(cur);
        moved = true;
        any = true;
      }
      for (std::size_t m : candidates) {
        touched[m] = 0;
        out_to[m] = 0.0;
        in_from[m] = 0.0;
      }
    }
    if (!moved) break;
  }
  return any;
}

/// One full coarsening run from an initial leaf partition. Returns the leaf
/// module of every node, densely labeled.
inline std::vector<std::size_t> coarsen(const LevelGraph& leaves, std::vector<std::size_t> initial, Rng* shuffle) {
  LevelGraph g = leaves;
  std::vector<std::size_t> leaf_to_node(leaves.size());
  std::iota(leaf_to_node.begin(), leaf_to_node.end(), 0);
  std::vector<std::size_t> module = std::move(initial);
  while (true) {
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
      shuffle->shuffle(order);
    } else {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g.flow[a] > g.flow[b]; });
    }
    move_nodes(g, module, order);
    const std::size_t count = densify(module);
    for (auto& x : leaf_to_node) x = module[x];
    if (count == g.size()) break;
    g = aggregate(g, module, count);
    module.resize(count);
    std::iota(module.begin(), module.end(), 0);
  }
  densify(leaf_to_node);
  return leaf_to_node;
}

/// Moves adjacent node pairs that share a module as one unit, which escapes
/// optima where each single move raises L. Returns true if anything moved.
inline bool move_pairs(const LevelGraph& g, std::vector<std::size_t>& module) {
  constexpr double kMinGain = 1e-12;
  const std::size_t n = g.size();
  std::vector<double> exit(n, 0.0), flow(n, 0.0);
  std::vector<std::size_t> members(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    flow[module[v]] += g.flow[v];
    ++members[module[v]];
    for (const auto& [u, f] : g.out[v]) {
      if (module[u] != module[v]) exit[module[v]] += f;
    }
  }
  double total_exit = std::accumulate(exit.begin(), exit.end(), 0.0);
  auto term = [](double q, double p) { return -2.0 * plogp(q) + plogp(q + p); };
  std::vector<std::size_t> empty;
  for (std::size_t m = n; m-- > 0;) {
    if (members[m] == 0) empty.push_back(m);
  }

  std::vector<double> out_to(n, 0.0), in_from(n, 0.0);
  std::vector<char> touched(n, 0);
  std::vector<std::size_t> candidates;
  bool any = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::size_t a = 0; a < n; ++a) {
      for (const auto& [b, unused] : g.out[a]) {
        if (b <= a || module[a] != module[b]) continue;
        const std::size_t cur = module[a];
        candidates.clear();
        auto touch = [&](std::size_t m) {
          if (!touched[m]) {
            touched[m] = 1;
            candidates.push_back(m);
          }
        };
        touch(cur);
        double internal = 0.0;  // flow between a and b, both directions
        for (std::size_t v : {a, b}) {
          const std::size_t other = v == a ? b : a;
          for (const auto& [u, f] : g.out[v]) {
            if (u == other) {
              internal += f;
              continue;
            }
            touch(module[u]);
            out_to[module[u]] += f;
          }
          for (const auto& [u, f] : g.in[v]) {
            if (u == other) continue;
            touch(module[u]);
            in_from[module[u]] += f;
          }
        }
        if (members[cur] > 2 && !empty.empty()) touch(empty.back());
        std::sort(candidates.begin(), candidates.end());

        const double fv = g.flow[a] + g.flow[b];
        const double ov = g.out_total[a] + g.out_total[b] - internal;
        const double exit_cur = exit[cur] - (ov - out_to[cur]) + in_from[cur];
        const double flow_cur = flow[cur] - fv;
        double best_delta = -kMinGain;
        std::size_t best = cur;
        double best_exit = 0.0;
        for (std::size_t m : candidates) {
          if (m == cur) continue;
          const double exit_m = exit[m] + (ov - out_to[m]) - in_from[m];
          const double q_new = total_exit - exit[cur] - exit[m] + exit_cur + exit_m;
          const double delta = plogp(q_new) - plogp(total_exit) + term(exit_cur, flow_cur) +
                               term(exit_m, flow[m] + fv) - term(exit[cur], flow[cur]) - term(exit[m], flow[m]);
          if (delta < best_delta) {
            best_delta = delta;
            best = m;
            best_exit = exit_m;
          }
        }
        if (best != cur) {
          total_exit += exit_cur + best_exit - exit[cur] - exit[best];
          exit[cur] = exit_cur;
          flow[cur] = flow_cur;
          exit[best] = best_exit;
          flow[best] += fv;
          module[a] = module[b] = best;
          if (members[best] == 0) empty.pop_back();
          members[best] += 2;
          members[cur] -= 2;
          if (members[cur] == 0) empty.push_back(cur);
          moved = any = true;
        }
        for (std::size_t m : candidates) {
          touched[m] = 0;
          out_to[m] = 0.0;
          in_from[m] = 0.0;
        }
      }
    }
  }
  return any;
}

/// Standalone subgraph induced by `nodes`; links leaving the set are dropped.
inline LevelGraph induced(const LevelGraph& g, const std::vector<std::size_t>& nodes,
                          std::vector<std::size_t>& local) {
  LevelGraph h;
  const std::size_t k = nodes.size();
  for (std::size_t i = 0; i < k; ++i) local[nodes[i]] = i;
  h.flow.resize(k);
  h.out.resize(k);
  h.in.resize(k);
  h.out_total.resize(k);
  h.in_total.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t v = nodes[i];
    h.flow[i] = g.flow[v];
    for (const auto& [u, f] : g.out[v]) {
      if (local[u] == SIZE_MAX) continue;
      h.out[i].emplace_back(local[u], f);
      h.out_total[i] += f;
    }
    for (const auto& [u, f] : g.in[v]) {
      if (local[u] == SIZE_MAX) continue;
      h.in[i].emplace_back(local[u], f);
      h.in_total[i] += f;
    }
  }
  return h;
}

/// Splits every module into sub-modules found by optimizing its interior,
/// then lets whole sub-modules move between modules.
inline std::vector<std::size_t> coarse_tune(const LevelGraph& leaves, const std::vector<std::size_t>& module) {
  const std::size_t n = leaves.size();
  std::size_t modules = *std::max_element(module.begin(), module.end()) + 1;
  std::vector<std::vector<std::size_t>> groups(modules);
  for (std::size_t v = 0; v < n; ++v) groups[module[v]].push_back(v);

  std::vector<std::size_t> sub(n, 0), local(n, SIZE_MAX);
  std::vector<std::size_t> sub_parent;
  for (const auto& nodes : groups) {
    std::vector<std::size_t> part(nodes.size(), 0);
    if (nodes.size() > 1) {
      LevelGraph h = induced(leaves, nodes, local);
      std::vector<std::size_t> singletons(nodes.size());
      std::iota(singletons.begin(), singletons.end(), 0);
      part = coarsen(h, singletons, nullptr);
    }
    const std::size_t base = sub_parent.size();
    const std::size_t count = part.empty() ? 0 : *std::max_element(part.begin(), part.end()) + 1;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      sub[nodes[i]] = base + part[i];
      local[nodes[i]] = SIZE_MAX;
    }
    for (std::size_t c = 0; c < count; ++c) sub_parent.push_back(module[nodes.front()]);
  }

  LevelGraph g = aggregate(leaves, sub, sub_parent.size());
  auto sub_module = coarsen(g, sub_parent, nullptr);
  std::vector<std::size_t> out(n);
  for (std::size_t v = 0; v < n; ++v) out[v] = sub_module[sub[v]];
  densify(out);
  return out;
}

}  // namespace detail

/// Map equation value (bits) of a leaf partition given as a module index per node.
inline double map_equation(const FlowNetwork& net, const std::vector<std::size_t>& module) {
  using detail::plogp;
  const std::size_t modules = module.empty() ? 0 : *std::max_element(module.begin(), module.end()) + 1;
  std::vector<double> exit(modules, 0.0), flow(modules, 0.0);
  double node_entropy = 0.0;
  for (std::size_t v = 0; v < net.size(); ++v) {
    flow[module[v]] += net.node_flow[v];
    node_entropy += plogp(net.node_flow[v]);
  }
  for (const auto& l : net.links) {
    if (module[l.source] != module[l.target]) exit[module[l.source]] += l.flow;
  }
  double total_exit = 0.0, L = -node_entropy;
  for (std::size_t m = 0; m < modules; ++m) {
    total_exit += exit[m];
    L += -2.0 * plogp(exit[m]) + plogp(exit[m] + flow[m]);
  }
  return L + plogp(total_exit);
}

struct InfomapResult {
  Partition partition;
  std::vector<std::size_t> module;  // per graph node, dense
  double codelength = 0.0;
  double one_module_codelength = 0.0;
};

inline InfomapResult infomap(const KnnGraph& graph, const InfomapConfig& config = {}) {
  if (graph.node_count() == 0) throw ValidationError("Infomap needs a nonempty graph");
  const FlowNetwork net = compute_flow(graph, config.teleport);
  const detail::LevelGraph leaves = detail::leaf_level(net);
  const std::size_t n = net.size();

  auto refine = [&](std::vector<std::size_t> module) {
    double L = map_equation(net, module);
    while (true) {
      bool improved = false;
      auto paired = module;
      detail::move_pairs(leaves, paired);
      detail::densify(paired);
      for (auto refined : {detail::coarsen(leaves, module, nullptr), detail::coarse_tune(leaves, module), paired}) {
        const double L2 = map_equation(net, refined);
        if (L2 < L - 1e-12) {
          module = std::move(refined);
          L = L2;
          improved = true;
        }
      }
      if (!improved) break;
    }
    return std::pair{module, L};
  };
  std::vector<std::size_t> singletons(n);
  std::iota(singletons.begin(), singletons.end(), 0);
  auto consider = [](std::pair<std::vector<std::size_t>, double>& best, std::pair<std::vector<std::size_t>, double> cand) {
    if (cand.second < best.second - 1e-12) best = std::move(cand);
  };

  auto best = refine(detail::coarsen(leaves, singletons, nullptr));
  for (int t = 0; t < config.extra_trials; ++t) {
    Rng rng(config.seed + static_cast<std::uint64_t>(t));
    consider(best, refine(detail::coarsen(leaves, singletons, &rng)));
  }

  // Greedy moves cannot reach solutions that need several simultaneous
  // merges (a ring, for instance). Collapse each connected component into a
  // single module, and the whole graph into one, and refine from there.
  std::vector<std::size_t> component(n);
  std::iota(component.begin(), component.end(), 0);
  auto find = [&](std::size_t x) {
    while (component[x] != x) x = component[x] = component[component[x]];
    return x;
  };
  for (const auto& l : net.links) {
    const std::size_t a = find(l.source), b = find(l.target);
    if (a != b) component[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::vector<std::size_t>> components(n);
  for (std::size_t v = 0; v < n; ++v) components[find(v)].push_back(v);
  for (const auto& nodes : components) {
    if (nodes.size() < 2) continue;
    auto collapsed = best.first;
    const std::size_t target = collapsed[nodes.front()];
    bool split = false;
    for (std::size_t u : nodes) {
      split = split || collapsed[u] != target;
      collapsed[u] = target;
    }
    if (!split) continue;
    detail::densify(collapsed);
    consider(best, refine(std::move(collapsed)));
  }
  const std::vector<std::size_t> one(n, 0);
  const double L_one = map_equation(net, one);
  consider(best, {one, L_one});
  consider(best, refine(one));
  auto& [module, L] = best;

  InfomapResult result;
  result.module = module;
  result.codelength = L;
  result.one_module_codelength = L_one;
  for (std::size_t v = 0; v < n; ++v) result.partition.assign(graph.nodes[v], static_cast<int>(module[v]));
  return result;
}

}  // namespace spkback
