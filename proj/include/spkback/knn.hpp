#pragma once

// Union k-nearest-neighbor similarity graph with threshold pruning.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/io.hpp"
#include "spkback/parallel.hpp"

namespace spkback {

struct GraphEdge {
  std::size_t a;  // a < b
  std::size_t b;
  double weight;

  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

/// Undirected weighted graph over utterance ids. Nodes are sorted by id;
/// edges are unique unordered pairs sorted by (a, b), no self-loops.
struct KnnGraph {
  std::vector<std::string> nodes;
  std::vector<GraphEdge> edges;

  std::size_t node_count() const { return nodes.size(); }
};

/// Candidate edges i->j for the k most similar j != i (ties to the smaller
/// id); an undirected edge survives if either direction proposed it and its
/// cosine is >= min_weight.
inline KnnGraph build_knn_graph(const EmbeddingSet& embeddings, std::size_t k, double min_weight,
                                unsigned threads = 1) {
  if (k == 0) throw ValidationError("KNN k must be at least 1");
  KnnGraph graph;
  std::vector<std::size_t> order(embeddings.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return embeddings.id(x) < embeddings.id(y); });
  const std::size_t n = order.size();
  graph.nodes.reserve(n);
  std::vector<double> units;
  units.reserve(n * embeddings.dim());
  for (std::size_t i : order) {
    graph.nodes.push_back(embeddings.id(i));
    auto u = l2_normalize(embeddings.row(i));
    units.insert(units.end(), u.begin(), u.end());
  }
  const std::size_t dim = embeddings.dim();
  auto row = [&](std::size_t i) { return ConstRow(units.data() + i * dim, dim); };
  const std::size_t kk = std::min(k, n > 0 ? n - 1 : 0);

  std::vector<std::vector<GraphEdge>> proposed(n);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> sims;
    sims.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sims.emplace_back(unit_cosine(row(i), row(j)), j);
    }
    auto better = [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); };
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(kk), sims.end(), better);
    for (std::size_t r = 0; r < kk; ++r) {
      const auto [w, j] = sims[r];
      if (w >= min_weight) proposed[i].push_back({std::min(i, j), std::max(i, j), w});
    }
  });
  for (auto& list : proposed) graph.edges.insert(graph.edges.end(), list.begin(), list.end());
  std::sort(graph.edges.begin(), graph.edges.end(),
            [](const GraphEdge& x, const GraphEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  graph.edges.erase(std::unique(graph.edges.begin(), graph.edges.end(),
                                [](const GraphEdge& x, const GraphEdge& y) { return x.a == y.a && x.b == y.b; }),
                    graph.edges.end());
  return graph;
}

// Graph file: "v\t<id>" per node, then "e\t<id>\t<id>\t<weight %.17g>" per edge.

inline void write_graph(const KnnGraph& graph, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& id : graph.nodes) out << "v\t" << id << '\n';
  for (const auto& e : graph.edges) {
    out << "e\t" << graph.nodes[e.a] << '\t' << graph.nodes[e.b] << '\t' << detail::format_g17(e.weight) << '\n';
  }
  detail::finish(out, path);
}

inline KnnGraph read_graph(const std::string& path) {
  KnnGraph graph;
  std::vector<std::tuple<std::string, std::string, double>> raw;
  for (const auto& line : detail::read_lines(path)) {
    auto cols = detail::split_tab(line);
    if (cols[0] == "v" && cols.size() == 2) {
      graph.nodes.push_back(cols[1]);
    } else if (cols[0] == "e" && cols.size() == 4) {
      raw.emplace_back(cols[1], cols[2], detail::parse_double(cols[3], "graph edge weight"));
    } else {
      throw ValidationError("malformed graph line: '" + line + "'");
    }
  }
  std::sort(graph.nodes.begin(), graph.nodes.end());
  if (std::adjacent_find(graph.nodes.begin(), graph.nodes.end()) != graph.nodes.end()) {
    throw ValidationError("duplicate node in graph file");
  }
  auto index_of = [&](const std::string& id) {
    auto it = std::lower_bound(graph.nodes.begin(), graph.nodes.end(), id);
    if (it == graph.nodes.end() || *it != id) throw ValidationError("edge references unknown node '" + id + "'");
    return static_cast<std::size_t>(it - graph.nodes.begin());
  };
  for (const auto& [x, y, w] : raw) {
    const std::size_t a = index_of(x), b = index_of(y);
    if (a == b) throw ValidationError("self-loop on '" + x + "'");
    graph.edges.push_back({std::min(a, b), std::max(a, b), w});
  }
  std::sort(graph.edges.begin(), graph.edges.end(),
            [](const GraphEdge& x, const GraphEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  for (std::size_t i = 1; i < graph.edges.size(); ++i) {
    if (graph.edges[i].a == graph.edges[i - 1].a && graph.edges[i].b == graph.edges[i - 1].b) {
      throw ValidationError("duplicate edge in graph file");
    }
  }
  return graph;
}

}  // namespace spkback
