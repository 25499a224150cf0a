#pragma once

// Embedding containers and the vector math shared by every stage.
//
// Vectors are stored raw (not length-normalized): QMF needs the original
// magnitude, so normalization happens at scoring/clustering time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <map>
#include <unordered_map>
#include <vector>

#include "spkback/error.hpp"

namespace spkback {

using Vector = std::vector<double>;
using ConstRow = std::span<const double>;

/// Four interleaved partial sums; symmetric in its arguments.
inline double dot(ConstRow a, ConstRow b) {
  const std::size_t n = a.size();
  const double* x = a.data();
  const double* y = b.data();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

inline double magnitude(ConstRow v) { return std::sqrt(dot(v, v)); }

inline Vector l2_normalize(ConstRow v) {
  const double norm = magnitude(v);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw ValidationError("degenerate embedding");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

/// Cosine similarity clamped to [-1, 1].
inline double cosine(ConstRow a, ConstRow b) {
  if (a.size() != b.size()) throw ValidationError("dimension mismatch in cosine");
  const double na = magnitude(a);
  const double nb = magnitude(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw ValidationError("degenerate embedding");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Dot product of two unit vectors, clamped. Callers guarantee unit norm.
inline double unit_cosine(ConstRow a, ConstRow b) { return std::clamp(dot(a, b), -1.0, 1.0); }

/// Renormalized arithmetic mean of a set of (unit) vectors.
inline Vector centroid(std::span<const ConstRow> rows) {
  if (rows.empty()) throw ValidationError("centroid of empty set");
  Vector mean(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    if (r.size() != mean.size()) throw ValidationError("dimension mismatch in centroid");
    for (std::size_t i = 0; i < r.size(); ++i) mean[i] += r[i];
  }
  for (double& x : mean) x /= static_cast<double>(rows.size());
  const double norm = magnitude(mean);
  if (norm < 1e-12) throw ValidationError("degenerate centroid: mean is the zero vector");
  for (double& x : mean) x /= norm;
  return mean;
}

inline Vector centroid(const std::vector<Vector>& rows) {
  std::vector<ConstRow> views(rows.begin(), rows.end());
  return centroid(std::span<const ConstRow>(views));
}

/// Ordered (id, raw vector) collection with a shared dimension.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ValidationError("embedding dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }

  void add(std::string id, ConstRow v) {
    if (dim_ == 0) throw ValidationError("embedding set has no dimension");
    if (v.size() != dim_) {
      throw ValidationError("embedding '" + id + "' has dimension " + std::to_string(v.size()) +
                            ", expected " + std::to_string(dim_));
    }
    if (index_.contains(id)) throw ValidationError("duplicate utterance id '" + id + "'");
    index_.emplace(id, ids_.size());
    ids_.push_back(std::move(id));
    data_.insert(data_.end(), v.begin(), v.end());
  }

  ConstRow row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("utterance id '" + id + "' not in embedding set");
    return it->second;
  }

  bool contains(const std::string& id) const { return index_.contains(id); }

  /// Rows restricted to `keep`, in this set's order.
  template <typename Pred>
  EmbeddingSet filter(Pred&& keep) const {
    EmbeddingSet out(dim_);
    for (std::size_t i = 0; i < size(); ++i) {
      if (keep(ids_[i])) out.add(ids_[i], row(i));
    }
    return out;
  }

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Row-major matrix of unit vectors, one per row of an EmbeddingSet.
class UnitMatrix {
 public:
  UnitMatrix() = default;
  explicit UnitMatrix(const EmbeddingSet& set) : dim_(set.dim()), rows_(set.size()) {
    data_.reserve(set.size() * set.dim());
    for (std::size_t i = 0; i < set.size(); ++i) {
      Vector u = l2_normalize(set.row(i));
      data_.insert(data_.end(), u.begin(), u.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  ConstRow row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

 private:
  std::size_t dim_ = 0;
  std::size_t rows_ = 0;
  std::vector<double> data_;
};

struct UtteranceMetadata {
  std::string id;
  double duration = 0.0;  // seconds
  double snr = 0.0;       // dB
  std::optional<std::string> speaker;
};

using MetadataMap = std::map<std::string, UtteranceMetadata>;

}  // namespace spkback
