#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fgdcc/layers.hpp"

namespace fgdcc {

enum class SelectionMode { kPerClass, kGlobal };

/// Parent classifier plus one sub-class classifier per (class, k).
///
/// All heads start at zero so every classifier begins from uniform logits.
class HierarchyHead {
 public:
  HierarchyHead() = default;
  HierarchyHead(std::size_t feature_dim, std::size_t num_classes, std::vector<std::size_t> k_set);

  std::size_t num_classes() const noexcept { return parent_.out_features(); }
  std::size_t feature_dim() const noexcept { return parent_.in_features(); }
  const std::vector<std::size_t>& k_set() const noexcept { return k_set_; }

  Linear& parent() noexcept { return parent_; }
  const Linear& parent() const noexcept { return parent_; }
  Linear& sub(std::size_t class_id, std::size_t k_index) { return subs_.at(class_id).at(k_index); }
  const Linear& sub(std::size_t class_id, std::size_t k_index) const { return subs_.at(class_id).at(k_index); }

  // Logits n×num_classes; gradients reach the parent weights.
  Var predict_parent(Tape& tape, Var features);
  Matrix predict_parent(const Matrix& features) const;

  // Per-class selection counts indexed [class][k index].
  std::vector<std::vector<std::uint64_t>>& tally() noexcept { return tally_; }
  const std::vector<std::vector<std::uint64_t>>& tally() const noexcept { return tally_; }
  // Most frequently selected k for a class, ties toward smaller k; 0 when never selected.
  std::size_t modal_k(std::size_t class_id) const;

  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;

 private:
  std::vector<std::size_t> k_set_;
  Linear parent_;
  std::vector<std::vector<Linear>> subs_;
  std::vector<std::vector<std::uint64_t>> tally_;
};

// Argmax per row, ties toward the lowest index.
std::vector<std::size_t> argmax_rows(const Matrix& logits);

/// Cluster targets for a batch: row-major n × |k_set|, entry (i, j) is the
/// assignment of row i under its true class's model with k = k_set[j].
struct SubclassTargets {
  std::size_t rows = 0;
  std::size_t k_count = 0;
  std::vector<std::size_t> z;

  std::size_t at(std::size_t row, std::size_t k_index) const { return z[row * k_count + k_index]; }
};

/// Sub-class losses after routing each row to the bank of its predicted class.
struct RoutedLosses {
  std::size_t batch_size = 0;
  std::vector<std::size_t> classes;            // routed classes, ascending
  std::vector<std::vector<std::size_t>> rows;  // batch rows per routed class
  std::vector<std::vector<Var>> group_loss;    // [group][k index], mean CE within the group
  std::vector<std::vector<double>> group_value;
  std::vector<double> per_k;                   // batch-mean CE per k index
};

RoutedLosses route_subclassifiers(Tape& tape, HierarchyHead& head, Var features,
                                  std::span<const std::size_t> predicted, const SubclassTargets& targets);
// Frozen variant for evaluation.
RoutedLosses route_subclassifiers(Tape& tape, const HierarchyHead& head, Var features,
                                  std::span<const std::size_t> predicted, const SubclassTargets& targets);

// Index of the smallest loss; ties toward the smaller index (smaller k).
std::size_t argmin_loss(std::span<const double> losses);

/// Chosen k index per routed group.
struct KSelection {
  std::vector<std::size_t> k_index;
};

KSelection select_best_k(const RoutedLosses& routed, SelectionMode mode);
void record_selection(HierarchyHead& head, const RoutedLosses& routed, const KSelection& selection);

// Σ_groups (n_g / n) · CE_{g, k*_g}; only the selected heads feed this node.
Var selected_subclass_loss(Tape& tape, const RoutedLosses& routed, const KSelection& selection);

struct HierStepResult {
  double parent_loss = 0.0;
  std::map<std::size_t, double> per_k_subclass_losses;     // k -> batch-mean CE
  std::map<std::size_t, std::size_t> selected_k_per_class;  // routed class -> k*
  double selected_subclass_loss = 0.0;
  double total_loss = 0.0;
  Var parent;
  Var total;
};

// Parent CE plus the selected sub-class term, both on the tape.
HierStepResult hierarchical_loss(Tape& tape, Var parent_logits, std::span<const std::size_t> labels,
                                 Var selected_subclass);
// Fills the per-k and per-class selection fields of a step result.
void annotate_selection(HierStepResult& result, const RoutedLosses& routed, const KSelection& selection,
                        std::span<const std::size_t> k_set);

// Fraction of rows whose label is among the top-k logits (lower index ranks first on ties).
std::map<std::size_t, double> topk_accuracy(const Matrix& logits, std::span<const std::size_t> labels,
                                            std::span<const std::size_t> k_values);

}  // namespace fgdcc
