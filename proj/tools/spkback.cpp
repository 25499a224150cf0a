// spkback command-line front end. Every stage reads and writes files so
// stages can be rerun independently.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spkback/cluster_ops.hpp"
#include "spkback/infomap.hpp"
#include "spkback/io.hpp"
#include "spkback/knn.hpp"
#include "spkback/metrics.hpp"
#include "spkback/pipeline.hpp"
#include "spkback/qmf.hpp"
#include "spkback/scoring.hpp"
#include "spkback/subcenter.hpp"
#include "spkback/synth.hpp"
#include "spkback/thresholds.hpp"

namespace {

using namespace spkback;

std::vector<QmfFeatures> features_for(const std::vector<ScoredTrial>& scored, const EmbeddingSet& embeddings,
                                      const MetadataMap& metadata, SnrRange snr, const FeatureOptions& opts) {
  std::vector<QmfFeatures> out;
  out.reserve(scored.size());
  for (const auto& s : scored) {
    out.push_back(extract_features({s.enroll, s.test, s.target}, embeddings, metadata, s.score, snr, opts));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker verification back-end and pseudo-labeling toolkit"};
  app.require_subcommand(1);
  unsigned threads = 1;
  std::uint64_t seed = 0;

  // score
  std::string trials_path, emb_path, out_path, scores_path, meta_path;
  auto* score = app.add_subcommand("score", "Cosine-score a trial list");
  score->add_option("--trials", trials_path)->required();
  score->add_option("--embeddings", emb_path)->required();
  score->add_option("--out", out_path)->required();
  score->add_option("--threads", threads);

  // asnorm
  std::string cohort_emb, cohort_meta;
  std::size_t cohort_sample = 0, top_k = 300;
  auto* asnorm = app.add_subcommand("asnorm", "Adaptive symmetric score normalization");
  asnorm->add_option("--scores", scores_path)->required();
  asnorm->add_option("--embeddings", emb_path)->required();
  asnorm->add_option("--cohort-embeddings", cohort_emb)->required();
  asnorm->add_option("--cohort-metadata", cohort_meta, "speaker labels: build a speaker-wise cohort");
  asnorm->add_option("--cohort-sample", cohort_sample, "draw this many utterances as the cohort instead");
  asnorm->add_option("--top-k", top_k);
  asnorm->add_option("--out", out_path)->required();
  asnorm->add_option("--seed", seed);
  asnorm->add_option("--threads", threads);

  // qmf-train / qmf-apply
  std::string model_path;
  double duration_cap = 0.0;
  auto* qtrain = app.add_subcommand("qmf-train", "Train a QMF calibrator on labeled AS-Norm scores");
  qtrain->add_option("--trials", trials_path)->required();
  qtrain->add_option("--embeddings", emb_path)->required();
  qtrain->add_option("--metadata", meta_path)->required();
  qtrain->add_option("--scores", scores_path, "AS-Norm scores")->required();
  qtrain->add_option("--out", model_path)->required();
  qtrain->add_option("--duration-cap", duration_cap, "cap durations (s) before the log; 0 disables");
  auto* qapply = app.add_subcommand("qmf-apply", "Calibrate AS-Norm scores with a QMF model");
  qapply->add_option("--model", model_path)->required();
  qapply->add_option("--embeddings", emb_path)->required();
  qapply->add_option("--metadata", meta_path)->required();
  qapply->add_option("--scores", scores_path, "AS-Norm scores")->required();
  qapply->add_option("--out", out_path)->required();
  qapply->add_option("--duration-cap", duration_cap, "cap durations (s) before the log; 0 disables");

  // fuse
  std::vector<std::string> score_files;
  std::vector<double> weights;
  auto* fuse_cmd = app.add_subcommand("fuse", "Weighted score-level fusion");
  fuse_cmd->add_option("--scores", score_files)->required();
  fuse_cmd->add_option("--weights", weights)->required();
  fuse_cmd->add_option("--out", out_path)->required();

  // metrics
  double p_target = 0.01;
  auto* metrics_cmd = app.add_subcommand("metrics", "Print \"EER% mDCF\"");
  metrics_cmd->add_option("--trials", trials_path)->required();
  metrics_cmd->add_option("--scores", scores_path)->required();
  metrics_cmd->add_option("--ptarget", p_target);

  // thresholds
  std::string labeled_path;
  auto* thr = app.add_subcommand("thresholds", "Print \"T1 T2 T3\" from a labeled set");
  thr->add_option("--labeled", labeled_path)->required();
  thr->add_option("--meta", meta_path)->required();
  thr->add_option("--threads", threads);

  // knn
  std::size_t k = 200;
  double t1 = 0.0, t2 = 0.0, t3 = 0.0, min_duration = 1.0;
  std::string graph_path;
  auto* knn = app.add_subcommand("knn", "Build the pruned union-KNN graph");
  knn->add_option("--embeddings", emb_path)->required();
  knn->add_option("--metadata", meta_path, "drop utterances not longer than --min-duration");
  knn->add_option("--min-duration", min_duration);
  knn->add_option("--k", k);
  knn->add_option("--t1", t1)->required();
  knn->add_option("--out", graph_path)->required();
  knn->add_option("--threads", threads);

  // cluster
  InfomapConfig im;
  auto* cluster = app.add_subcommand("cluster", "Infomap clustering of a graph");
  cluster->add_option("--graph", graph_path)->required();
  cluster->add_option("--teleport", im.teleport);
  cluster->add_option("--extra-trials", im.extra_trials);
  cluster->add_option("--seed", im.seed);
  cluster->add_option("--out", out_path)->required();

  // clean
  std::string labels_path;
  std::size_t min_size = 10;
  auto* clean = app.add_subcommand("clean", "Remove outliers below T2 and small clusters");
  clean->add_option("--labels", labels_path)->required();
  clean->add_option("--embeddings", emb_path)->required();
  clean->add_option("--t2", t2)->required();
  clean->add_option("--min-size", min_size);
  clean->add_option("--out", out_path)->required();

  // purify
  SubCenterConfig sc;
  double purity = 0.7;
  std::string report_path;
  auto* purify = app.add_subcommand("purify", "Sub-center purification of pseudo-classes");
  purify->add_option("--labels", labels_path)->required();
  purify->add_option("--embeddings", emb_path)->required();
  purify->add_option("--K", sc.sub_centers);
  purify->add_option("--margin", sc.margin);
  purify->add_option("--scale", sc.scale);
  purify->add_option("--epochs", sc.epochs);
  purify->add_option("--threshold", purity);
  purify->add_option("--seed", sc.seed);
  purify->add_option("--out", out_path)->required();
  purify->add_option("--report", report_path);

  // merge
  auto* merge = app.add_subcommand("merge", "Greedy centroid merging at T3");
  merge->add_option("--labels", labels_path)->required();
  merge->add_option("--embeddings", emb_path)->required();
  merge->add_option("--t3", t3)->required();
  merge->add_option("--out", out_path)->required();

  // pipeline
  std::string config_path;
  auto* pipeline = app.add_subcommand("pipeline", "Run the pseudo-labeling pipeline from a config file");
  pipeline->add_option("--config", config_path)->required();
  pipeline->add_option("--threads", threads);

  // synth
  SynthConfig syn;
  std::string out_meta, out_trials, out_pseudo;
  std::size_t n_target = 0, n_nontarget = 0;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic corpus");
  synth->add_option("--speakers", syn.speakers);
  synth->add_option("--utts", syn.utts_per_speaker);
  synth->add_option("--dim", syn.dim);
  synth->add_option("--noise", syn.noise_sigma);
  synth->add_option("--impure-fraction", syn.impure_fraction);
  synth->add_option("--seed", syn.seed);
  synth->add_option("--prefix", syn.id_prefix);
  synth->add_option("--out-embeddings", emb_path)->required();
  synth->add_option("--out-metadata", out_meta)->required();
  synth->add_option("--out-trials", out_trials);
  synth->add_option("--targets", n_target);
  synth->add_option("--nontargets", n_nontarget);
  synth->add_option("--out-pseudo-labels", out_pseudo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const FeatureOptions fopts{duration_cap > 0.0 ? std::optional<double>(duration_cap) : std::nullopt};
    if (*score) {
      write_scores(score_trials(read_trials(trials_path), read_embeddings(emb_path), threads), out_path);
    } else if (*asnorm) {
      const auto embeddings = read_embeddings(emb_path);
      const auto pool = read_embeddings(cohort_emb);
      Cohort cohort = cohort_sample > 0 ? sample_utterance_cohort(pool, cohort_sample, seed)
                      : !cohort_meta.empty()
                          ? build_speaker_cohort(pool, read_metadata(cohort_meta))
                          : throw ValidationError("asnorm needs --cohort-metadata or --cohort-sample");
      write_scores(as_norm(read_scores(scores_path), embeddings, cohort, {top_k}, threads), out_path);
    } else if (*qtrain) {
      const auto trials = read_trials(trials_path);
      const auto metadata = read_metadata(meta_path);
      const auto scored = attach_labels(trials, read_scores(scores_path));
      const SnrRange snr = fit_snr_range(trials, metadata);
      std::vector<bool> labels;
      for (const auto& s : scored) {
        if (!s.target) throw ValidationError("QMF training trials must be labeled");
        labels.push_back(*s.target);
      }
      const auto model = train_qmf(features_for(scored, read_embeddings(emb_path), metadata, snr, fopts), labels, snr);
      write_qmf_model(model, model_path);
    } else if (*qapply) {
      const auto model = read_qmf_model(model_path);
      auto scored = read_scores(scores_path);
      const auto calibrated =
          apply_qmf(model, features_for(scored, read_embeddings(emb_path), read_metadata(meta_path), model.snr, fopts));
      for (std::size_t i = 0; i < scored.size(); ++i) scored[i].score = calibrated[i];
      write_scores(scored, out_path);
    } else if (*fuse_cmd) {
      std::vector<std::vector<ScoredTrial>> systems;
      for (const auto& f : score_files) systems.push_back(read_scores(f));
      write_scores(fuse(systems, weights), out_path);
    } else if (*metrics_cmd) {
      const auto scored = attach_labels(read_trials(trials_path), read_scores(scores_path));
      const auto curve = det_sweep(scored);
      std::printf("%.4f %.4f\n", 100.0 * eer_from_curve(curve), min_dcf_from_curve(curve, p_target));
    } else if (*thr) {
      const auto t = determine_thresholds(LabeledEmbeddings::from(read_embeddings(labeled_path), read_metadata(meta_path)),
                                          threads);
      std::printf("%.6f %.6f %.6f\n", t.t1, t.t2, t.t3);
    } else if (*knn) {
      auto embeddings = read_embeddings(emb_path);
      if (!meta_path.empty()) {
        const auto kept = filter_short(read_metadata(meta_path), min_duration);
        embeddings = embeddings.filter([&](const std::string& id) { return kept.contains(id); });
      }
      write_graph(build_knn_graph(embeddings, k, t1, threads), graph_path);
    } else if (*cluster) {
      write_labels(infomap(read_graph(graph_path), im).partition, out_path);
    } else if (*clean) {
      write_labels(clean_clusters(read_labels(labels_path), read_embeddings(emb_path), t2, min_size), out_path);
    } else if (*purify) {
      const auto embeddings = read_embeddings(emb_path);
      const auto labels = read_labels(labels_path);
      const auto model = train_subcenter(embeddings, labels, sc);
      const auto report = assignment_report(model, embeddings, labels);
      if (!report_path.empty()) write_purity_report(report, report_path);
      write_labels(purge_impure(labels, report, purity), out_path);
    } else if (*merge) {
      write_labels(merge_clusters(read_labels(labels_path), read_embeddings(emb_path), t3), out_path);
    } else if (*pipeline) {
      auto cfg = read_config(config_path);
      if (pipeline->count("--threads") > 0) cfg.threads = threads;
      const auto result = run_pipeline(cfg);
      std::cout << format_report(result);
    } else if (*synth) {
      const auto corpus = generate_embeddings(syn);
      write_embeddings(corpus.embeddings, emb_path);
      write_metadata(corpus.metadata, out_meta);
      if (!out_trials.empty()) write_trials(generate_trials(corpus.metadata, n_target, n_nontarget, syn.seed + 1), out_trials);
      if (!out_pseudo.empty()) write_labels(corpus.pseudo_labels.partition, out_pseudo);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
