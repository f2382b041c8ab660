#include "fgdcc/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <fmt/core.h>

#include "fgdcc/errors.hpp"
#include "fgdcc/random.hpp"

namespace fgdcc {

AssignResult assign_points(const Matrix& centroids, const Matrix& points) {
  if (points.rows() > 0 && centroids.cols() != points.cols()) {
    throw DimensionError(fmt::format("assign: points {} vs centroids {}", points.shape_str(),
                                     centroids.shape_str()));
  }
  AssignResult out;
  out.indices.resize(points.rows());
  out.counts.assign(centroids.rows(), 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centroids.rows(); ++j) {
      const double d = squared_distance(points.row(i), centroids.row(j));
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out.indices[i] = best;
    ++out.counts[best];
    out.inertia += best_d;
  }
  return out;
}

namespace {

double norm_of(std::span<const double> v) { return std::sqrt(squared_distance(v, std::vector<double>(v.size()))); }

}  // namespace

std::size_t fix_empty_clusters(CentroidMatrix& matrix, const Matrix& points, const AssignResult& assignment,
                               double epsilon) {
  const auto& counts = assignment.counts;
  const bool any_member = std::any_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (!any_member) return 0;

  const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const std::vector<double> base(matrix.centroids.row(donor).begin(), matrix.centroids.row(donor).end());
  const double base_norm = norm_of(base);

  std::vector<std::pair<double, std::size_t>> members;  // (-distance, index): farthest first
  for (std::size_t i = 0; i < assignment.indices.size(); ++i) {
    if (assignment.indices[i] != donor) continue;
    const double d = std::sqrt(squared_distance(points.row(i), base));
    if (d > 0.0) members.emplace_back(-d, i);
  }
  std::sort(members.begin(), members.end());

  std::size_t fixes = 0;
  std::size_t next_member = 0;
  for (std::size_t e = 0; e < counts.size(); ++e) {
    if (counts[e] != 0) continue;
    std::vector<double> dir(base.size(), 0.0);
    double step = epsilon * (base_norm > 0.0 ? base_norm : 1.0);
    if (next_member < members.size()) {
      const auto [neg_d, idx] = members[next_member++];
      const double dist = -neg_d;
      for (std::size_t j = 0; j < dir.size(); ++j) dir[j] = (points(idx, j) - base[j]) / dist;
      step = std::min(step, 0.5 * dist);
    } else {
      auto rng = make_rng({stream::kPerturb, matrix.class_id, matrix.k, matrix.empty_fix_count, e});
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : dir) v = normal(rng);
      const double n = norm_of(dir);
      for (double& v : dir) v /= n;
    }
    auto row = matrix.centroids.row(e);
    for (std::size_t j = 0; j < dir.size(); ++j) row[j] = base[j] + step * dir[j];
    ++matrix.empty_fix_count;
    ++fixes;
  }
  return fixes;
}

LloydStats lloyd_update(CentroidMatrix& matrix, const Matrix& points, const ClusteringParams& params) {
  LloydStats stats;
  if (points.rows() == 0) {
    stats.skipped = true;
    return stats;
  }
  const std::size_t k = matrix.centroids.rows();
  const std::size_t dim = matrix.centroids.cols();
  AssignResult a;
  for (std::size_t it = 0;; ++it) {
    a = assign_points(matrix.centroids, points);
    if (std::find(a.counts.begin(), a.counts.end(), 0) != a.counts.end()) {
      const std::size_t fixes = fix_empty_clusters(matrix, points, a, params.empty_epsilon);
      stats.empty_fixes += fixes;
      if (fixes > 0) a = assign_points(matrix.centroids, points);
    }
    stats.inertia_history.push_back(a.inertia);
    if (it == 0 && a.inertia == 0.0) break;
    if (it > 0) {
      const double prev = stats.inertia_history[stats.inertia_history.size() - 2];
      if (prev - a.inertia <= params.tol * prev) break;
    }
    if (it == params.max_iters) break;

    Matrix sums(k, dim);
    for (std::size_t i = 0; i < points.rows(); ++i) {
      auto s = sums.row(a.indices[i]);
      const auto p = points.row(i);
      for (std::size_t j = 0; j < dim; ++j) s[j] += p[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (a.counts[c] == 0) continue;
      auto row = matrix.centroids.row(c);
      const auto s = sums.row(c);
      for (std::size_t j = 0; j < dim; ++j) row[j] = s[j] / static_cast<double>(a.counts[c]);
    }
    ++stats.iterations;
  }
  matrix.last_inertia = a.inertia;
  matrix.last_counts = a.counts;
  matrix.initialized = true;
  return stats;
}

Matrix kmeans_plus_plus(const Matrix& points, std::size_t k, std::uint64_t seed) {
  if (points.rows() == 0) throw StateError("kmeans++: no points");
  if (k == 0) throw ConfigError("kmeans++: k must be >= 1");
  auto rng = make_rng({seed, stream::kKMeans});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = points.rows();
  auto uniform_index = [&] { return std::min(n - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(n))); };

  Matrix centers(k, points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t chosen = uniform_index();
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(points.row(chosen).begin(), points.cols(), centers.row(c).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centers.row(c)));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      chosen = uniform_index();
      continue;
    }
    const double target = unit(rng) * total;
    double acc = 0.0;
    chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        chosen = i;
        break;
      }
    }
  }
  return centers;
}

// ---------------------------------------------------------------------------
// ClusterBank

ClusterBank::ClusterBank(std::size_t num_classes, std::vector<std::size_t> k_set, std::size_t dim,
                         std::uint64_t seed)
    : dim_(dim), seed_(seed), k_set_(std::move(k_set)), banks_(num_classes), cache_(num_classes) {
  if (k_set_.empty()) throw ConfigError("cluster bank: empty k_set");
  for (std::size_t i = 0; i < k_set_.size(); ++i) {
    if (k_set_[i] < 1) throw ConfigError("cluster bank: k must be >= 1");
    if (i > 0 && k_set_[i] <= k_set_[i - 1]) throw ConfigError("cluster bank: k_set must be strictly increasing");
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k : k_set_) {
      CentroidMatrix m;
      m.class_id = c;
      m.k = k;
      m.centroids = Matrix(k, dim);
      m.last_counts.assign(k, 0);
      banks_[c].push_back(std::move(m));
    }
  }
}

std::size_t ClusterBank::k_index(std::size_t k) const {
  const auto it = std::find(k_set_.begin(), k_set_.end(), k);
  if (it == k_set_.end()) throw LookupError(fmt::format("cluster bank: k={} not in k_set", k));
  return static_cast<std::size_t>(it - k_set_.begin());
}

CentroidMatrix& ClusterBank::at(std::size_t class_id, std::size_t k) {
  if (class_id >= banks_.size()) throw LookupError(fmt::format("cluster bank: unknown class {}", class_id));
  return banks_[class_id][k_index(k)];
}

const CentroidMatrix& ClusterBank::at(std::size_t class_id, std::size_t k) const {
  if (class_id >= banks_.size()) throw LookupError(fmt::format("cluster bank: unknown class {}", class_id));
  return banks_[class_id][k_index(k)];
}

AssignResult ClusterBank::assign(std::size_t class_id, std::size_t k, const Matrix& points) const {
  return assign_points(at(class_id, k).centroids, points);
}

std::vector<RefreshRow> ClusterBank::refresh_all(const std::vector<Matrix>& per_class_points,
                                                 const ClusteringParams& params, std::size_t epoch,
                                                 bool seed_first) {
  if (per_class_points.size() != banks_.size()) {
    throw DimensionError(fmt::format("cluster bank: {} point sets for {} classes", per_class_points.size(),
                                     banks_.size()));
  }
  std::vector<RefreshRow> rows;
  for (std::size_t c = 0; c < banks_.size(); ++c) {
    const Matrix& pts = per_class_points[c];
    for (auto& m : banks_[c]) {
      RefreshRow row;
      row.epoch = epoch;
      row.class_id = c;
      row.k = m.k;
      row.points = pts.rows();
      if (pts.rows() == 0) {
        row.skipped = true;
        row.inertia = 0.0;
        row.population.assign(m.k, 0);
        rows.push_back(std::move(row));
        continue;
      }
      if (seed_first || !m.initialized) m.centroids = kmeans_plus_plus(pts, m.k, mix_seed({seed_, c, m.k}));
      const auto stats = lloyd_update(m, pts, params);
      row.inertia = m.last_inertia;
      row.empty_fixes = stats.empty_fixes;
      row.population = m.last_counts;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<RefreshRow> ClusterBank::initialize(const std::vector<Matrix>& per_class_points,
                                                const ClusteringParams& params) {
  return refresh_all(per_class_points, params, 0, true);
}

void ClusterBank::cache(std::size_t class_id, std::span<const double> bottleneck) {
  if (class_id >= cache_.size()) throw LookupError(fmt::format("cluster bank: unknown class {}", class_id));
  if (bottleneck.size() != dim_) {
    throw DimensionError(fmt::format("cluster bank: cached point has {} dims, bank uses {}", bottleneck.size(), dim_));
  }
  cache_[class_id].insert(cache_[class_id].end(), bottleneck.begin(), bottleneck.end());
}

std::size_t ClusterBank::cached_count(std::size_t class_id) const { return cache_.at(class_id).size() / dim_; }

Matrix ClusterBank::cached_points(std::size_t class_id) const {
  const auto& flat = cache_.at(class_id);
  return Matrix(flat.size() / dim_, dim_, flat);
}

void ClusterBank::clear_cache() {
  for (auto& c : cache_) c.clear();
}

std::vector<RefreshRow> ClusterBank::epoch_refresh(const ClusteringParams& params, std::size_t epoch) {
  std::vector<Matrix> pts;
  pts.reserve(banks_.size());
  for (std::size_t c = 0; c < banks_.size(); ++c) pts.push_back(cached_points(c));
  auto rows = refresh_all(pts, params, epoch, false);
  clear_cache();
  history_.insert(history_.end(), rows.begin(), rows.end());
  return rows;
}

std::vector<RefreshRow> cluster_stats(const ClusterBank& bank) { return bank.history(); }

std::vector<EmptySummary> average_empty_per_k(std::span<const RefreshRow> rows) {
  std::set<std::size_t> epochs;
  std::vector<std::size_t> ks;
  for (const auto& r : rows) {
    epochs.insert(r.epoch);
    if (std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
  }
  std::sort(ks.begin(), ks.end());
  std::vector<EmptySummary> out;
  for (std::size_t k : ks) {
    double total = 0.0;
    for (const auto& r : rows) {
      if (r.k == k) total += static_cast<double>(r.empty_fixes);
    }
    out.push_back({k, epochs.empty() ? 0.0 : total / static_cast<double>(epochs.size())});
  }
  return out;
}

}  // namespace fgdcc
