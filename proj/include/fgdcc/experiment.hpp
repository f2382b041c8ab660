#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fgdcc/datasets.hpp"
#include "fgdcc/trainer.hpp"

namespace fgdcc {

/// Everything a run needs: data source, split, upsampling, model and training.
/// One seed drives every random stream.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> data_path;  // synthetic when empty
  SyntheticSpec synthetic;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  bool upsample = true;
  UpsampleOptions upsample_options;
  TrainConfig train;
  std::size_t checkpoint_every = 10;  // 0 writes only final.ckpt
};

// Missing keys take defaults; unknown keys and bad types raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
// Reads a JSON file, then applies FGDCC_SEED when set.
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_seed_override(ExperimentConfig& c);

Dataset load_experiment_data(const ExperimentConfig& c);

// gen-data: feature file plus "<out>.sublabels.csv" (index,parent,sublabel).
void generate_data_files(const ExperimentConfig& c, const std::filesystem::path& out);
std::filesystem::path sublabel_path(const std::filesystem::path& feature_file);

struct RunResult {
  std::filesystem::path final_checkpoint;
  MetricsRecord test;
};

/// Trains into out_dir, writing config.json, metrics.csv, cluster_stats.csv,
/// selection.csv, diagnostics.csv, test.fgdc, test_metrics.csv and checkpoints/.
/// A non-finite loss writes nan_dump.txt and rethrows with its path.
RunResult run_training(const ExperimentConfig& c, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume = {}, std::ostream* log = nullptr);

struct EvalResult {
  MetricsRecord record;
  std::map<std::size_t, double> topk;
};

// Rebuilds the model from the config stored in the checkpoint and scores data (split=test).
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                               const std::vector<std::size_t>& topk);

struct ClassChoice {
  std::size_t class_id = 0;
  std::optional<std::size_t> modal_k;  // empty: never selected
  std::uint64_t selections = 0;
};

struct ClusterReport {
  std::vector<ClassChoice> classes;
  std::vector<EmptySummary> empty;
};

ClusterReport cluster_report(const std::filesystem::path& run_dir);
std::string format_cluster_report(const ClusterReport& r);

// Writes curves_species.csv, curves_subclass_loss.csv, curves_ae_loss.csv and
// curves_inertia.csv (epoch,value,series) into run_dir.
std::vector<std::filesystem::path> export_curves(const std::filesystem::path& run_dir);

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

}  // namespace fgdcc
