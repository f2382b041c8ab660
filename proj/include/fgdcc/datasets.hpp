#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fgdcc/tensor.hpp"

namespace fgdcc {

struct LabeledSample {
  std::vector<double> features;
  std::size_t parent_label = 0;
  // Generating mode for synthetic data; never visible to training.
  std::optional<std::size_t> planted_sublabel;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t input_dim, std::size_t num_classes);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  const LabeledSample& operator[](std::size_t i) const { return samples_[i]; }
  std::span<const LabeledSample> samples() const noexcept { return samples_; }

  // Validates label range, feature width and finiteness.
  void add(LabeledSample s);

  std::vector<std::size_t> class_counts() const;
  Matrix features(std::span<const std::size_t> indices) const;
  Matrix all_features() const;
  std::vector<std::size_t> labels(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> all_labels() const;
  Dataset subset(std::span<const std::size_t> indices) const;

  // Planted mode count per class (synthetic only; empty otherwise).
  std::vector<std::size_t> planted_modes;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  std::size_t input_dim_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<LabeledSample> samples_;
};

bool operator==(const LabeledSample& a, const LabeledSample& b);

struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t input_dim = 32;
  std::vector<std::size_t> modes_per_class;    // k*_i in [1,5]
  std::vector<std::size_t> samples_per_class;  // long-tail via explicit counts
  double separation = 8.0;                     // inter-mode distance in units of within_sigma
  double within_sigma = 1.0;
  double class_separation = 24.0;              // inter-class-center distance, same units
  std::uint64_t seed = 0;
};

/// Mixture-of-Gaussians classes with planted sub-modes.
///
/// Mode centers of a class sit on a regular simplex (pairwise distance
/// exactly separation·σ) in a random orientation; class centers likewise at
/// pairwise distance class_separation·σ when num_classes ≤ input_dim.
/// Features are rounded to f32 so they survive the on-disk format unchanged.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct UpsampleOptions {
  std::size_t min_count = 10;
  // Classes with fewer than this many samples are raised to min_count.
  // Defaults to min_count; 5 reproduces the literal "< 5 samples" reading.
  std::optional<std::size_t> only_below;
  double jitter_sigma = 0.05;
  std::uint64_t seed = 0;
};

// Appends jittered copies to under-populated classes; originals untouched.
Dataset upsample_min_count(const Dataset& data, const UpsampleOptions& opts);

// Feature file: "FGDC" | version u32 | n u64 | D u32 | C u32 | n × (label u32, D × f32), all LE.
inline constexpr std::uint32_t kFeatureFileVersion = 1;
void save_feature_file(const Dataset& data, const std::filesystem::path& path);
Dataset load_feature_file(const std::filesystem::path& path);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

SplitIndices split_indices(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

struct SplitData {
  Dataset train;
  Dataset val;
  Dataset test;
};
SplitData split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

// Index batches covering 0..n-1 exactly once; permutation fixed by (seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                   std::uint64_t seed, std::uint64_t epoch);

}  // namespace fgdcc
