#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fgdcc/autoencoder.hpp"
#include "fgdcc/clustering.hpp"
#include "fgdcc/datasets.hpp"
#include "fgdcc/encoder.hpp"
#include "fgdcc/hierarchy.hpp"
#include "fgdcc/optim.hpp"

namespace fgdcc {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 96;
  // Backbone (encoder + heads) cosine schedule.
  double start_lr = 7.5e-5;
  double peak_lr = 2.5e-4;
  double final_lr = 1e-6;
  double warmup_fraction = 0.1;
  double ae_lr = 1e-3;
  double backbone_weight_decay = 0.05;
  double ae_weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  std::vector<std::size_t> k_set = {2, 3, 4, 5};
  std::size_t refresh_period = 1;
  SelectionMode selection = SelectionMode::kPerClass;
  // Lets the autoencoder loss (and with it the centroid penalty) reach the backbone.
  bool penalty_to_backbone = false;
  ClusteringParams clustering;
  EncoderConfig encoder;          // input_dim is taken from the data
  AutoencoderConfig autoencoder;  // input_dim must equal encoder.output_dim
  std::uint64_t seed = 0;

  void validate() const;
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double parent_loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double subclass_loss = 0.0;
  double ae_loss = 0.0;
  double mean_inertia = 0.0;
  std::size_t empty_fixes = 0;
  double lr = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline constexpr const char* kMetricsHeader =
    "epoch,split,parent_loss,top1,top5,subclass_loss,ae_loss,mean_inertia,empty_fixes,lr";
std::string to_csv_row(const MetricsRecord& r);

struct SelectionRow {
  std::size_t epoch = 0;
  std::size_t class_id = 0;
  std::size_t k = 0;
  std::uint64_t count = 0;
  friend bool operator==(const SelectionRow&, const SelectionRow&) = default;
};

struct DiagnosticsRow {
  std::size_t epoch = 0;
  double routing_mismatch_rate = 0.0;
  double backbone_clip_scale = 0.0;  // epoch mean
  friend bool operator==(const DiagnosticsRow&, const DiagnosticsRow&) = default;
};

/// Owns the backbone, autoencoder, hierarchy heads, centroid banks and both
/// optimizers, and runs the alternating SGD / centroid-refresh loop.
class Trainer {
 public:
  Trainer(TrainConfig config, std::size_t input_dim, std::size_t num_classes);

  // Centroids from the untrained models' bottlenecks (k-means++ then Lloyd).
  void bootstrap(const Dataset& train);
  bool bootstrapped() const noexcept { return bootstrapped_; }

  // One pass over train; epoch is 1-based and must follow the last completed one.
  MetricsRecord train_epoch(const Dataset& train, std::size_t epoch);
  MetricsRecord evaluate(const Dataset& data, const std::string& split) const;

  void save_checkpoint(const std::filesystem::path& path, const std::string& metadata = {}) const;
  void load_checkpoint(const std::filesystem::path& path);
  static std::string read_checkpoint_metadata(const std::filesystem::path& path);

  const TrainConfig& config() const noexcept { return config_; }
  std::size_t epochs_completed() const noexcept { return epochs_done_; }
  std::uint64_t global_step() const noexcept { return global_step_; }
  std::uint64_t total_steps(std::size_t train_size) const;

  Encoder& encoder() noexcept { return encoder_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  Autoencoder& autoencoder() noexcept { return autoencoder_; }
  const Autoencoder& autoencoder() const noexcept { return autoencoder_; }
  HierarchyHead& head() noexcept { return head_; }
  const HierarchyHead& head() const noexcept { return head_; }
  ClusterBank& bank() noexcept { return bank_; }
  const ClusterBank& bank() const noexcept { return bank_; }

  std::vector<ParamTensor*> all_params();
  std::vector<const ParamTensor*> all_params() const;

  const std::vector<MetricsRecord>& metrics_history() const noexcept { return metrics_; }
  const std::vector<SelectionRow>& selection_history() const noexcept { return selection_; }
  const std::vector<DiagnosticsRow>& diagnostics_history() const noexcept { return diagnostics_; }
  void record_metrics(const MetricsRecord& r) { metrics_.push_back(r); }

  // Called after every optimizer step with (trainer, batch index).
  std::function<void(const Trainer&, std::size_t)> on_step;

 private:
  SubclassTargets cluster_targets(const Matrix& bottlenecks, std::span<const std::size_t> labels,
                                  double* inertia_sum) const;
  Matrix penalty_centroids(std::span<const std::size_t> labels, const SubclassTargets& targets) const;
  std::size_t penalty_k_index(std::size_t class_id) const;

  TrainConfig config_;
  std::size_t input_dim_ = 0;
  std::size_t num_classes_ = 0;
  Encoder encoder_;
  Autoencoder autoencoder_;
  HierarchyHead head_;
  ClusterBank bank_;
  AdamW backbone_opt_;
  AdamW ae_opt_;
  bool bootstrapped_ = false;
  std::size_t epochs_done_ = 0;
  std::uint64_t global_step_ = 0;
  double last_lr_ = 0.0;
  std::vector<MetricsRecord> metrics_;
  std::vector<SelectionRow> selection_;
  std::vector<DiagnosticsRow> diagnostics_;
};

}  // namespace fgdcc
