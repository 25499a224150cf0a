#pragma once

// Sub-center ArcFace classifier over frozen embeddings, used to find
// pseudo-classes whose members split across several sub-centers.
//
// Class logit: scale * max_k cos(x, w_ck); the true class uses
// cos(theta + margin) of its best sub-center. Only the sub-center weights
// train (projected mini-batch gradient descent, unit-norm after each step).
//
// Sub-centers start from class geometry: the first is the class centroid,
// each further one is the member least similar to the sub-centers chosen so
// far. A single-speaker class keeps its members on the centroid sub-center;
// a class holding two speakers seeds a sub-center inside each of them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/io.hpp"
#include "spkback/partition.hpp"
#include "spkback/rng.hpp"

namespace spkback {

struct SubCenterConfig {
  int sub_centers = 3;
  double margin = 0.2;
  double scale = 32.0;
  int epochs = 20;
  std::size_t batch_size = 256;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
};

class SubCenterModel {
 public:
  SubCenterModel() = default;
  SubCenterModel(std::vector<int> class_labels, int sub_centers, std::size_t dim, double margin, double scale)
      : labels_(std::move(class_labels)),
        k_(sub_centers),
        dim_(dim),
        margin_(margin),
        scale_(scale),
        weights_(labels_.size() * static_cast<std::size_t>(sub_centers) * dim, 0.0) {
    if (sub_centers < 2) throw ValidationError("sub-center count must be at least 2");
  }

  std::size_t classes() const { return labels_.size(); }
  int sub_centers() const { return k_; }
  std::size_t dim() const { return dim_; }
  double margin() const { return margin_; }
  double scale() const { return scale_; }
  const std::vector<int>& class_labels() const { return labels_; }
  const std::vector<double>& raw_weights() const { return weights_; }

  std::span<double> weight(std::size_t c, int k) {
    return {weights_.data() + (c * static_cast<std::size_t>(k_) + static_cast<std::size_t>(k)) * dim_, dim_};
  }
  ConstRow weight(std::size_t c, int k) const {
    return {weights_.data() + (c * static_cast<std::size_t>(k_) + static_cast<std::size_t>(k)) * dim_, dim_};
  }

  void set_weight(std::size_t c, int k, ConstRow v) {
    Vector u = l2_normalize(v);
    std::copy(u.begin(), u.end(), weight(c, k).begin());
  }

  /// Best sub-center of class c for unit vector x: (cosine, index); ties to the lowest index.
  std::pair<double, int> best_sub_center(std::size_t c, ConstRow x) const {
    double best = -std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int k = 0; k < k_; ++k) {
      const double s = unit_cosine(weight(c, k), x);
      if (s > best) {
        best = s;
        arg = k;
      }
    }
    return {best, arg};
  }

  std::size_t class_index(int label) const {
    auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
    if (it == labels_.end() || *it != label) throw ValidationError("class " + std::to_string(label) + " not in model");
    return static_cast<std::size_t>(it - labels_.begin());
  }

 private:
  std::vector<int> labels_;  // sorted
  int k_ = 0;
  std::size_t dim_ = 0;
  double margin_ = 0.0;
  double scale_ = 1.0;
  std::vector<double> weights_;
};

namespace detail {

struct MarginCos {
  double value;
  double derivative;  // d value / d cos
};

inline MarginCos additive_angular_margin(double cos_theta, double margin) {
  if (margin == 0.0) return {cos_theta, 1.0};
  const double threshold = std::cos(std::numbers::pi - margin);
  if (cos_theta <= threshold) return {cos_theta - std::sin(std::numbers::pi - margin) * margin, 1.0};
  const double sin_theta = std::sqrt(std::max(1e-12, 1.0 - cos_theta * cos_theta));
  return {cos_theta * std::cos(margin) - sin_theta * std::sin(margin),
          std::cos(margin) + cos_theta * std::sin(margin) / sin_theta};
}

struct Forward {
  double loss = 0.0;
  std::vector<double> prob;      // softmax per class
  std::vector<int> chosen;       // best sub-center per class
  double margin_derivative = 1.0;
  bool correct = false;
};

inline Forward forward(const SubCenterModel& model, ConstRow x, std::size_t y) {
  Forward f;
  const std::size_t c = model.classes();
  std::vector<double> logit(c);
  f.chosen.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    auto [cos_j, k] = model.best_sub_center(j, x);
    f.chosen[j] = k;
    logit[j] = cos_j;
  }
  const double raw_y = logit[y];
  f.correct = std::all_of(logit.begin(), logit.end(), [&](double v) { return v <= raw_y; });
  const auto m = additive_angular_margin(raw_y, model.margin());
  f.margin_derivative = m.derivative;
  logit[y] = m.value;
  for (auto& v : logit) v *= model.scale();
  const double top = *std::max_element(logit.begin(), logit.end());
  double z = 0.0;
  f.prob.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    f.prob[j] = std::exp(logit[j] - top);
    z += f.prob[j];
  }
  for (auto& p : f.prob) p /= z;
  f.loss = -(logit[y] - top - std::log(z));
  return f;
}

}  // namespace detail

/// Softmax cross-entropy of one unit sample with class index y.
inline double subcenter_loss(const SubCenterModel& model, ConstRow x, std::size_t y) {
  return detail::forward(model, x, y).loss;
}

struct SubCenterTrace {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  std::vector<double> epoch_loss;  // running mean over each epoch's mini-batches
};

struct LabeledUnits {
  std::vector<Vector> x;
  std::vector<std::size_t> y;
};

inline LabeledUnits gather_units(const SubCenterModel& model, const EmbeddingSet& embeddings,
                                 const Partition& labels) {
  LabeledUnits out;
  for (const auto& [id, label] : labels.assignment()) {
    out.x.push_back(l2_normalize(embeddings.row(embeddings.at(id))));
    out.y.push_back(model.class_index(label));
  }
  return out;
}

/// Mean loss and top-1 accuracy over a sample set.
inline std::pair<double, double> evaluate_subcenter(const SubCenterModel& model, const LabeledUnits& data) {
  double loss = 0.0, correct = 0.0;
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    auto f = detail::forward(model, data.x[i], data.y[i]);
    loss += f.loss;
    correct += f.correct ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, data.x.size()));
  return {loss / n, correct / n};
}

inline SubCenterModel init_subcenter(const EmbeddingSet& embeddings, const Partition& labels,
                                     const SubCenterConfig& config) {
  auto groups = labels.clusters();
  if (groups.size() < 2) throw ValidationError("sub-center training needs at least two classes");
  std::vector<int> class_labels;
  for (const auto& [label, members] : groups) class_labels.push_back(label);
  SubCenterModel model(class_labels, config.sub_centers, embeddings.dim(), config.margin, config.scale);
  std::size_t c = 0;
  for (const auto& [label, members] : groups) {
    std::vector<Vector> rows;
    for (const auto& id : members) rows.push_back(l2_normalize(embeddings.row(embeddings.at(id))));
    model.set_weight(c, 0, centroid(rows));
    // closest chosen sub-center similarity per member
    std::vector<double> nearest(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) nearest[i] = unit_cosine(rows[i], model.weight(c, 0));
    for (int k = 1; k < config.sub_centers; ++k) {
      const auto far = static_cast<std::size_t>(std::min_element(nearest.begin(), nearest.end()) - nearest.begin());
      model.set_weight(c, k, rows[far]);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        nearest[i] = std::max(nearest[i], unit_cosine(rows[i], model.weight(c, k)));
      }
    }
    ++c;
  }
  return model;
}

/// Trains a sub-center classifier on the pseudo-labeled utterances. The
/// learning rate drops by 10x after two thirds of the epochs.
inline SubCenterModel train_subcenter(const EmbeddingSet& embeddings, const Partition& labels,
                                      const SubCenterConfig& config = {}, SubCenterTrace* trace = nullptr) {
  if (config.epochs < 0) throw ValidationError("epoch count must be non-negative");
  if (config.batch_size == 0) throw ValidationError("batch size must be positive");
  SubCenterModel model = init_subcenter(embeddings, labels, config);
  const LabeledUnits data = gather_units(model, embeddings, labels);
  const std::size_t n = data.x.size();
  const std::size_t dim = embeddings.dim();
  SubCenterTrace local;
  local.initial_loss = evaluate_subcenter(model, data).first;

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const int decay_epoch = (2 * config.epochs) / 3;
  std::vector<double> grad(model.raw_weights().size(), 0.0);
  std::vector<std::size_t> touched_rows;
  std::vector<char> touched(model.classes() * static_cast<std::size_t>(model.sub_centers()), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = epoch >= decay_epoch ? config.learning_rate * 0.1 : config.learning_rate;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const auto f = detail::forward(model, data.x[i], data.y[i]);
        epoch_loss += f.loss;
        for (std::size_t j = 0; j < model.classes(); ++j) {
          double g = f.prob[j] - (j == data.y[i] ? 1.0 : 0.0);
          g *= model.scale() * (j == data.y[i] ? f.margin_derivative : 1.0);
          if (std::abs(g) < 1e-15) continue;
          const std::size_t r = j * static_cast<std::size_t>(model.sub_centers()) + static_cast<std::size_t>(f.chosen[j]);
          if (!touched[r]) {
            touched[r] = 1;
            touched_rows.push_back(r);
          }
          double* gr = grad.data() + r * dim;
          for (std::size_t d = 0; d < dim; ++d) gr[d] += g * inv_batch * data.x[i][d];
        }
      }
      std::sort(touched_rows.begin(), touched_rows.end());
      for (std::size_t r : touched_rows) {
        const std::size_t cls = r / static_cast<std::size_t>(model.sub_centers());
        const int k = static_cast<int>(r % static_cast<std::size_t>(model.sub_centers()));
        auto w = model.weight(cls, k);
        double* gr = grad.data() + r * dim;
        Vector updated(dim);
        for (std::size_t d = 0; d < dim; ++d) {
          updated[d] = w[d] - lr * gr[d];
          gr[d] = 0.0;
        }
        model.set_weight(cls, k, updated);
        touched[r] = 0;
      }
      touched_rows.clear();
    }
    local.epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, n)));
  }
  std::tie(local.final_loss, local.final_accuracy) = evaluate_subcenter(model, data);
  if (trace) *trace = std::move(local);
  return model;
}

struct ClassPurity {
  int label = 0;
  int modal_sub_center = 0;
  double dominant_fraction = 1.0;
  std::size_t count = 0;
};

struct PurityReport {
  int sub_centers = 0;
  std::vector<ClassPurity> classes;  // sorted by label
};

/// Each member picks the nearest sub-center of its own class (ties to the
/// lowest index); the dominant fraction is the share of the modal pick.
inline PurityReport assignment_report(const SubCenterModel& model, const EmbeddingSet& embeddings,
                                      const Partition& labels) {
  PurityReport report;
  report.sub_centers = model.sub_centers();
  for (const auto& [label, members] : labels.clusters()) {
    const std::size_t c = model.class_index(label);
    std::vector<std::size_t> counts(static_cast<std::size_t>(model.sub_centers()), 0);
    for (const auto& id : members) {
      ++counts[static_cast<std::size_t>(model.best_sub_center(c, l2_normalize(embeddings.row(embeddings.at(id)))).second)];
    }
    const auto modal = std::max_element(counts.begin(), counts.end());
    report.classes.push_back({label, static_cast<int>(modal - counts.begin()),
                              static_cast<double>(*modal) / static_cast<double>(members.size()), members.size()});
  }
  return report;
}

/// Removes classes whose dominant fraction is below purity_threshold; their
/// members become unassigned.
inline Partition purge_impure(const Partition& partition, const PurityReport& report, double purity_threshold = 0.7) {
  if (report.sub_centers < 2) throw ValidationError("purity report has fewer than two sub-centers");
  if (!(purity_threshold > 1.0 / report.sub_centers && purity_threshold <= 1.0)) {
    throw ValidationError("purity threshold must lie in (1/K, 1]");
  }
  std::map<int, double> fraction;
  for (const auto& c : report.classes) fraction[c.label] = c.dominant_fraction;
  Partition out;
  for (const auto& [id, label] : partition.assignment()) {
    auto it = fraction.find(label);
    if (it == fraction.end()) throw ValidationError("purity report does not cover class " + std::to_string(label));
    if (it->second >= purity_threshold) out.assign(id, label);
  }
  return out;
}

inline void write_purity_report(const PurityReport& report, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& c : report.classes) {
    out << c.label << '\t' << c.modal_sub_center << '\t' << detail::format_fixed6(c.dominant_fraction) << '\t'
        << c.count << '\n';
  }
  detail::finish(out, path);
}

}  // namespace spkback
