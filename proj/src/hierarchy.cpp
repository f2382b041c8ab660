#include "fgdcc/hierarchy.hpp"

#include <algorithm>
#include <numeric>
#include <type_traits>

#include <fmt/core.h>

#include "fgdcc/errors.hpp"

namespace fgdcc {

HierarchyHead::HierarchyHead(std::size_t feature_dim, std::size_t num_classes, std::vector<std::size_t> k_set)
    : k_set_(std::move(k_set)), parent_("head.parent", feature_dim, num_classes, Init::kZero, 0) {
  if (k_set_.empty()) throw ConfigError("hierarchy: empty k_set");
  subs_.resize(num_classes);
  tally_.assign(num_classes, std::vector<std::uint64_t>(k_set_.size(), 0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t k : k_set_) {
      subs_[c].emplace_back(fmt::format("head.sub.{}.k{}", c, k), feature_dim, k, Init::kZero, 0);
    }
  }
}

Var HierarchyHead::predict_parent(Tape& tape, Var features) {
  if (tape.value(features).cols() != feature_dim()) {
    throw DimensionError(fmt::format("predict_parent: features {} but head expects width {}",
                                     tape.value(features).shape_str(), feature_dim()));
  }
  return parent_.forward(tape, features);
}

Matrix HierarchyHead::predict_parent(const Matrix& features) const {
  if (features.cols() != feature_dim()) {
    throw DimensionError(fmt::format("predict_parent: features {} but head expects width {}", features.shape_str(),
                                     feature_dim()));
  }
  Tape tape;
  return tape.value(parent_.apply(tape, tape.constant(features)));
}

std::size_t HierarchyHead::modal_k(std::size_t class_id) const {
  const auto& t = tally_.at(class_id);
  const auto it = std::max_element(t.begin(), t.end());
  if (*it == 0) return 0;
  return k_set_[static_cast<std::size_t>(it - t.begin())];
}

std::vector<ParamTensor*> HierarchyHead::params() {
  std::vector<ParamTensor*> out{&parent_.weight, &parent_.bias};
  for (auto& per_class : subs_) {
    for (auto& l : per_class) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<const ParamTensor*> HierarchyHead::params() const {
  std::vector<const ParamTensor*> out{&parent_.weight, &parent_.bias};
  for (const auto& per_class : subs_) {
    for (const auto& l : per_class) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Matrix& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

template <typename Head>
RoutedLosses route_impl(Tape& tape, Head& head, Var features, std::span<const std::size_t> predicted,
                        const SubclassTargets& targets) {
  const std::size_t n = tape.value(features).rows();
  if (predicted.size() != n) {
    throw DimensionError(fmt::format("route: {} predictions for {} rows", predicted.size(), n));
  }
  if (targets.rows != n || targets.k_count != head.k_set().size() || targets.z.size() != n * targets.k_count) {
    throw StateError(fmt::format("route: cluster assignments missing ({} rows x {} k for a batch of {} and {} k)",
                                 targets.rows, targets.k_count, n, head.k_set().size()));
  }
  RoutedLosses out;
  out.batch_size = n;
  std::vector<std::vector<std::size_t>> by_class(head.num_classes());
  for (std::size_t i = 0; i < n; ++i) {
    if (predicted[i] >= head.num_classes()) {
      throw IndexError(fmt::format("route: predicted class {} >= {}", predicted[i], head.num_classes()));
    }
    by_class[predicted[i]].push_back(i);
  }
  out.per_k.assign(head.k_set().size(), 0.0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) continue;
    const auto& rows = by_class[c];
    const Var group = tape.gather_rows(features, rows);
    std::vector<Var> losses;
    std::vector<double> values;
    for (std::size_t kj = 0; kj < head.k_set().size(); ++kj) {
      std::vector<std::size_t> z;
      z.reserve(rows.size());
      for (std::size_t r : rows) z.push_back(targets.at(r, kj));
      Var logits;
      if constexpr (std::is_const_v<Head>) {
        logits = head.sub(c, kj).apply(tape, group);
      } else {
        logits = head.sub(c, kj).forward(tape, group);
      }
      const Var ce = tape.softmax_cross_entropy(logits, z);
      losses.push_back(ce);
      values.push_back(tape.scalar(ce));
      out.per_k[kj] += tape.scalar(ce) * static_cast<double>(rows.size()) / static_cast<double>(n);
    }
    out.classes.push_back(c);
    out.rows.push_back(rows);
    out.group_loss.push_back(std::move(losses));
    out.group_value.push_back(std::move(values));
  }
  return out;
}

}  // namespace

RoutedLosses route_subclassifiers(Tape& tape, HierarchyHead& head, Var features,
                                  std::span<const std::size_t> predicted, const SubclassTargets& targets) {
  return route_impl(tape, head, features, predicted, targets);
}

RoutedLosses route_subclassifiers(Tape& tape, const HierarchyHead& head, Var features,
                                  std::span<const std::size_t> predicted, const SubclassTargets& targets) {
  return route_impl(tape, head, features, predicted, targets);
}

std::size_t argmin_loss(std::span<const double> losses) {
  if (losses.empty()) throw StateError("select_best_k: no k evaluated");
  std::size_t best = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (losses[i] < losses[best]) best = i;
  }
  return best;
}

KSelection select_best_k(const RoutedLosses& routed, SelectionMode mode) {
  KSelection sel;
  if (mode == SelectionMode::kGlobal) {
    const std::size_t k = routed.classes.empty() ? 0 : argmin_loss(routed.per_k);
    sel.k_index.assign(routed.classes.size(), k);
    return sel;
  }
  for (const auto& values : routed.group_value) sel.k_index.push_back(argmin_loss(values));
  return sel;
}

void record_selection(HierarchyHead& head, const RoutedLosses& routed, const KSelection& selection) {
  for (std::size_t g = 0; g < routed.classes.size(); ++g) ++head.tally()[routed.classes[g]][selection.k_index[g]];
}

Var selected_subclass_loss(Tape& tape, const RoutedLosses& routed, const KSelection& selection) {
  if (routed.classes.empty()) return tape.constant(Matrix(1, 1, 0.0));
  Var total;
  for (std::size_t g = 0; g < routed.classes.size(); ++g) {
    const double weight = static_cast<double>(routed.rows[g].size()) / static_cast<double>(routed.batch_size);
    const Var term = tape.scale(routed.group_loss[g][selection.k_index[g]], weight);
    total = g == 0 ? term : tape.add(total, term);
  }
  return total;
}

HierStepResult hierarchical_loss(Tape& tape, Var parent_logits, std::span<const std::size_t> labels,
                                 Var selected_subclass) {
  HierStepResult r;
  r.parent = tape.softmax_cross_entropy(parent_logits, labels);
  r.total = tape.add(r.parent, selected_subclass);
  r.parent_loss = tape.scalar(r.parent);
  r.selected_subclass_loss = tape.scalar(selected_subclass);
  r.total_loss = tape.scalar(r.total);
  return r;
}

void annotate_selection(HierStepResult& result, const RoutedLosses& routed, const KSelection& selection,
                        std::span<const std::size_t> k_set) {
  for (std::size_t kj = 0; kj < k_set.size(); ++kj) result.per_k_subclass_losses[k_set[kj]] = routed.per_k[kj];
  for (std::size_t g = 0; g < routed.classes.size(); ++g) {
    result.selected_k_per_class[routed.classes[g]] = k_set[selection.k_index[g]];
  }
}

std::map<std::size_t, double> topk_accuracy(const Matrix& logits, std::span<const std::size_t> labels,
                                            std::span<const std::size_t> k_values) {
  if (labels.size() != logits.rows()) {
    throw DimensionError(fmt::format("topk: {} labels for logits {}", labels.size(), logits.shape_str()));
  }
  for (std::size_t k : k_values) {
    if (k == 0 || k > logits.cols()) {
      throw ConfigError(fmt::format("topk: k={} invalid for {} classes", k, logits.cols()));
    }
  }
  std::map<std::size_t, std::size_t> hits;
  for (std::size_t k : k_values) hits[k] = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const double own = row[labels[i]];
    // Rank of the true label: classes scoring higher, or equal with a lower index, come first.
    std::size_t rank = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] > own || (row[c] == own && c < labels[i])) ++rank;
    }
    for (auto& [k, h] : hits) {
      if (rank < k) ++h;
    }
  }
  std::map<std::size_t, double> out;
  for (const auto& [k, h] : hits) {
    out[k] = logits.rows() == 0 ? 0.0 : static_cast<double>(h) / static_cast<double>(logits.rows());
  }
  return out;
}

}  // namespace fgdcc
