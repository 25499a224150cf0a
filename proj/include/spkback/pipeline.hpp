#pragma once

// Pseudo-labeling pipeline: duration filter, thresholds from the labeled
// set, KNN graph + Infomap, cleaning, sub-center purification, merging.
//
// Config files are flat UTF-8 "key = value" lines; '#' starts a comment and
// sections are dotted key prefixes ("infomap.teleport = 0.15"). Relative
// paths are resolved against the config file's directory.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spkback/cluster_ops.hpp"
#include "spkback/error.hpp"
#include "spkback/infomap.hpp"
#include "spkback/io.hpp"
#include "spkback/knn.hpp"
#include "spkback/subcenter.hpp"
#include "spkback/thresholds.hpp"

namespace spkback {

struct PipelineConfig {
  std::string embeddings;
  std::string metadata;
  std::string labeled_embeddings;
  std::string labeled_metadata;
  std::string labels_out;
  std::string report_out;

  std::size_t knn_k = 200;
  std::size_t asnorm_top_k = 300;
  std::size_t min_cluster_size = 10;
  double min_duration = 1.0;
  SubCenterConfig subcenter;
  double purity_threshold = 0.7;
  InfomapConfig infomap;
  std::vector<double> fusion_weights;
  std::vector<double> qmf_p_targets{0.01, 0.05};
  unsigned threads = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::string cleaned = text;
  // "a, b", "a b" and "[a, b]" are all accepted
  for (char& ch : cleaned) {
    if (ch == ',' || ch == '[' || ch == ']') ch = ' ';
  }
  for (const auto& tok : split_ws(cleaned)) out.push_back(parse_double(tok, key));
  return out;
}

inline std::uint64_t parse_uint(const std::string& text, const std::string& key) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw ValidationError("malformed integer for " + key);
  return v;
}

}  // namespace detail

inline PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  PipelineConfig cfg;
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  };
  std::map<std::string, std::function<void(const std::string&)>> setters = {
      {"paths.embeddings", [&](const std::string& v) { cfg.embeddings = path(v); }},
      {"paths.metadata", [&](const std::string& v) { cfg.metadata = path(v); }},
      {"paths.labeled_embeddings", [&](const std::string& v) { cfg.labeled_embeddings = path(v); }},
      {"paths.labeled_metadata", [&](const std::string& v) { cfg.labeled_metadata = path(v); }},
      {"paths.labels_out", [&](const std::string& v) { cfg.labels_out = path(v); }},
      {"paths.report_out", [&](const std::string& v) { cfg.report_out = path(v); }},
      {"knn_k", [&](const std::string& v) { cfg.knn_k = detail::parse_uint(v, "knn_k"); }},
      {"asnorm_top_k", [&](const std::string& v) { cfg.asnorm_top_k = detail::parse_uint(v, "asnorm_top_k"); }},
      {"min_cluster_size", [&](const std::string& v) { cfg.min_cluster_size = detail::parse_uint(v, "min_cluster_size"); }},
      {"min_duration", [&](const std::string& v) { cfg.min_duration = detail::parse_double(v, "min_duration"); }},
      {"threads", [&](const std::string& v) { cfg.threads = static_cast<unsigned>(detail::parse_uint(v, "threads")); }},
      {"subcenter.K", [&](const std::string& v) { cfg.subcenter.sub_centers = static_cast<int>(detail::parse_uint(v, "subcenter.K")); }},
      {"subcenter.margin", [&](const std::string& v) { cfg.subcenter.margin = detail::parse_double(v, "subcenter.margin"); }},
      {"subcenter.scale", [&](const std::string& v) { cfg.subcenter.scale = detail::parse_double(v, "subcenter.scale"); }},
      {"subcenter.epochs", [&](const std::string& v) { cfg.subcenter.epochs = static_cast<int>(detail::parse_uint(v, "subcenter.epochs")); }},
      {"subcenter.batch_size", [&](const std::string& v) { cfg.subcenter.batch_size = detail::parse_uint(v, "subcenter.batch_size"); }},
      {"subcenter.learning_rate", [&](const std::string& v) { cfg.subcenter.learning_rate = detail::parse_double(v, "subcenter.learning_rate"); }},
      {"subcenter.seed", [&](const std::string& v) { cfg.subcenter.seed = detail::parse_uint(v, "subcenter.seed"); }},
      {"subcenter.purity_threshold", [&](const std::string& v) { cfg.purity_threshold = detail::parse_double(v, "subcenter.purity_threshold"); }},
      {"infomap.teleport", [&](const std::string& v) { cfg.infomap.teleport = detail::parse_double(v, "infomap.teleport"); }},
      {"infomap.seed", [&](const std::string& v) { cfg.infomap.seed = detail::parse_uint(v, "infomap.seed"); }},
      {"infomap.extra_trials", [&](const std::string& v) { cfg.infomap.extra_trials = static_cast<int>(detail::parse_uint(v, "infomap.extra_trials")); }},
      {"fusion.weights", [&](const std::string& v) { cfg.fusion_weights = detail::parse_list(v, "fusion.weights"); }},
      {"qmf.p_targets", [&](const std::string& v) { cfg.qmf_p_targets = detail::parse_list(v, "qmf.p_targets"); }},
  };
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(value);
  }
  if (cfg.knn_k == 0) throw ValidationError("knn_k must be positive");
  if (!(cfg.infomap.teleport > 0.0 && cfg.infomap.teleport < 1.0)) throw ValidationError("infomap.teleport must lie in (0, 1)");
  if (cfg.subcenter.sub_centers < 2) throw ValidationError("subcenter.K must be at least 2");
  return cfg;
}

inline PipelineConfig read_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config '" + file + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(file).parent_path());
}

struct PipelineResult {
  Partition labels;
  Thresholds thresholds;
  PurityReport purity;
  std::size_t utterances_input = 0;
  std::size_t utterances_retained = 0;
  std::size_t graph_edges = 0;
  std::size_t clusters_initial = 0;
  std::size_t clusters_cleaned = 0;
  std::size_t clusters_purified = 0;
  std::size_t clusters_final = 0;
  std::size_t merges = 0;
  double infomap_codelength = 0.0;
};

/// Optional transform applied to the cleaned partition before purification.
using StageHook = std::function<Partition(const Partition&)>;

inline PipelineResult run_pipeline(const EmbeddingSet& embeddings, const MetadataMap& metadata,
                                   const EmbeddingSet& labeled, const MetadataMap& labeled_metadata,
                                   const PipelineConfig& cfg, const StageHook& after_cleaning = {}) {
  PipelineResult r;
  r.utterances_input = embeddings.size();
  for (const auto& id : embeddings.ids()) {
    if (!metadata.contains(id)) throw ValidationError("no metadata for utterance '" + id + "'");
  }

  // Step 1: keep utterances longer than min_duration.
  const auto kept = filter_short(metadata, cfg.min_duration);
  const EmbeddingSet data = embeddings.filter([&](const std::string& id) { return kept.contains(id); });
  r.utterances_retained = data.size();
  if (data.size() < 2) throw ValidationError("fewer than two utterances survive duration filtering");

  r.thresholds = determine_thresholds(LabeledEmbeddings::from(labeled, labeled_metadata), cfg.threads);

  // Step 3: KNN graph pruned at T1, then Infomap.
  const KnnGraph graph = build_knn_graph(data, cfg.knn_k, r.thresholds.t1, cfg.threads);
  r.graph_edges = graph.edges.size();
  auto clustered = infomap(graph, cfg.infomap);
  r.infomap_codelength = clustered.codelength;
  r.clusters_initial = clustered.partition.cluster_count();

  // Step 4: outliers below T2 and small classes.
  Partition current = clean_clusters(clustered.partition, data, r.thresholds.t2, cfg.min_cluster_size);
  if (after_cleaning) current = after_cleaning(current);
  r.clusters_cleaned = current.cluster_count();

  // Step 5: sub-center purification.
  if (current.cluster_count() >= 2) {
    const auto model = train_subcenter(data, current, cfg.subcenter);
    r.purity = assignment_report(model, data, current);
    current = purge_impure(current, r.purity, cfg.purity_threshold);
  }
  r.clusters_purified = current.cluster_count();

  // Step 6: merge classes whose centroids are at least T3 apart in cosine.
  MergeStats ms;
  current = merge_clusters(current, data, r.thresholds.t3, &ms);
  r.merges = ms.merges;
  r.clusters_final = current.cluster_count();
  r.labels = current.canonical();
  return r;
}

inline std::string format_report(const PipelineResult& r) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f", r.thresholds.t1, r.thresholds.t2, r.thresholds.t3);
  out << "utterances_input\t" << r.utterances_input << '\n'
      << "utterances_retained\t" << r.utterances_retained << '\n'
      << "thresholds\t" << buf << '\n'
      << "graph_edges\t" << r.graph_edges << '\n'
      << "clusters_initial\t" << r.clusters_initial << '\n'
      << "clusters_cleaned\t" << r.clusters_cleaned << '\n'
      << "clusters_purified\t" << r.clusters_purified << '\n'
      << "merges\t" << r.merges << '\n'
      << "clusters\t" << r.clusters_final << '\n'
      << "utterances_labeled\t" << r.labels.size() << '\n';
  return out.str();
}

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  for (const auto* p : {&cfg.embeddings, &cfg.metadata, &cfg.labeled_embeddings, &cfg.labeled_metadata, &cfg.labels_out,
                        &cfg.report_out}) {
    if (p->empty()) throw ValidationError("pipeline config is missing a required path");
  }
  const auto embeddings = read_embeddings(cfg.embeddings);
  const auto metadata = read_metadata(cfg.metadata);
  const auto labeled = read_embeddings(cfg.labeled_embeddings);
  const auto labeled_metadata = read_metadata(cfg.labeled_metadata);
  auto result = run_pipeline(embeddings, metadata, labeled, labeled_metadata, cfg);
  write_labels(result.labels, cfg.labels_out);
  auto out = detail::open_out(cfg.report_out);
  out << format_report(result);
  detail::finish(out, cfg.report_out);
  return result;
}

}  // namespace spkback
