#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fgdcc/tensor.hpp"

namespace fgdcc {

/// Centroids of one (class, k) K-Means model; row j is centroid j.
struct CentroidMatrix {
  std::size_t class_id = 0;
  std::size_t k = 0;
  Matrix centroids;
  double last_inertia = 0.0;
  std::size_t empty_fix_count = 0;
  std::vector<std::size_t> last_counts;
  bool initialized = false;
};

struct AssignResult {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> counts;
  double inertia = 0.0;
};

// Nearest centroid per point; ties go to the lowest centroid index.
AssignResult assign_points(const Matrix& centroids, const Matrix& points);

struct ClusteringParams {
  std::size_t max_iters = 20;
  double tol = 1e-6;           // relative inertia improvement
  double empty_epsilon = 1e-4; // perturbation relative to centroid norm
};

struct LloydStats {
  std::vector<double> inertia_history;  // one entry per assignment pass
  std::size_t iterations = 0;           // mean steps taken
  std::size_t empty_fixes = 0;
  bool skipped = false;                 // n == 0
};

// Replaces empty clusters by perturbed copies of the most populated one.
// The j-th empty centroid is nudged toward the j-th farthest member of the
// donor cluster, so each replacement is distinct and captures at least that
// member on the next assignment. Returns the number of replacements.
std::size_t fix_empty_clusters(CentroidMatrix& matrix, const Matrix& points, const AssignResult& assignment,
                               double epsilon);

// Warm-started Lloyd iterations with empty-cluster repair before each mean step.
LloydStats lloyd_update(CentroidMatrix& matrix, const Matrix& points, const ClusteringParams& params);

// D²-weighted seeding.
Matrix kmeans_plus_plus(const Matrix& points, std::size_t k, std::uint64_t seed);

struct RefreshRow {
  std::size_t epoch = 0;
  std::size_t class_id = 0;
  std::size_t k = 0;
  double inertia = 0.0;
  std::size_t empty_fixes = 0;
  std::size_t points = 0;
  std::vector<std::size_t> population;
  bool skipped = false;
};

/// Per-class, per-k K-Means models plus the bottleneck cache of the running epoch.
class ClusterBank {
 public:
  ClusterBank() = default;
  ClusterBank(std::size_t num_classes, std::vector<std::size_t> k_set, std::size_t dim, std::uint64_t seed);

  std::size_t num_classes() const noexcept { return banks_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::size_t>& k_set() const noexcept { return k_set_; }
  std::size_t k_index(std::size_t k) const;

  CentroidMatrix& at(std::size_t class_id, std::size_t k);
  const CentroidMatrix& at(std::size_t class_id, std::size_t k) const;

  AssignResult assign(std::size_t class_id, std::size_t k, const Matrix& points) const;

  // k-means++ seeding followed by Lloyd on the given per-class points.
  std::vector<RefreshRow> initialize(const std::vector<Matrix>& per_class_points, const ClusteringParams& params);

  void cache(std::size_t class_id, std::span<const double> bottleneck);
  std::size_t cached_count(std::size_t class_id) const;
  Matrix cached_points(std::size_t class_id) const;
  void clear_cache();

  // Lloyd update of every (class, k) over the cached bottlenecks; clears the cache.
  std::vector<RefreshRow> epoch_refresh(const ClusteringParams& params, std::size_t epoch);

  // Statistics rows accumulated over all refreshes.
  const std::vector<RefreshRow>& history() const noexcept { return history_; }
  std::vector<RefreshRow>& history() noexcept { return history_; }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::vector<RefreshRow> refresh_all(const std::vector<Matrix>& per_class_points, const ClusteringParams& params,
                                      std::size_t epoch, bool seed_first);

  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::size_t> k_set_;
  std::vector<std::vector<CentroidMatrix>> banks_;  // [class][k index]
  std::vector<std::vector<double>> cache_;          // [class] flattened rows
  std::vector<RefreshRow> history_;
};

// Same rows as ClusterBank::history(); kept as a free function for callers holding a const bank.
std::vector<RefreshRow> cluster_stats(const ClusterBank& bank);

struct EmptySummary {
  std::size_t k = 0;
  double mean_empty_fixes_per_epoch = 0.0;
};
// Per k: total empty fixes across classes divided by the number of refreshed epochs.
std::vector<EmptySummary> average_empty_per_k(std::span<const RefreshRow> rows);

}  // namespace fgdcc
