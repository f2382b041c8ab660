#pragma once

#include <cstdint>
#include <vector>

#include "fgdcc/layers.hpp"

namespace fgdcc {

enum class ReconstructionLoss { kSmoothL1, kL2 };

struct AutoencoderConfig {
  std::size_t input_dim = 16;
  std::size_t bottleneck_dim = 8;
  // Encoder-half hidden widths; the decoder mirrors them.
  std::vector<std::size_t> hidden = {12};
  // Corruption scale relative to the feature standard deviation of a batch.
  double noise_sigma = 0.1;
  double lambda_penalty = 0.5;
  ReconstructionLoss reconstruction = ReconstructionLoss::kSmoothL1;
  double smooth_l1_beta = 1.0;
  std::uint64_t seed = 0;
};

struct AeLossTerms {
  Var bottleneck;
  Var reconstruction;
  Var total;
};

/// Denoising autoencoder whose encoder half produces the clustering space.
class Autoencoder {
 public:
  Autoencoder() = default;
  explicit Autoencoder(const AutoencoderConfig& config);

  Var encode_bottleneck(Tape& tape, Var x);
  Matrix encode_bottleneck(const Matrix& x) const;
  Var reconstruct(Tape& tape, Var x);
  Matrix reconstruct(const Matrix& x) const;

  // reconstruction(recon(corrupted), clean) + λ/2 · mean_i ‖bottleneck(corrupted)_i − c_i‖².
  // row_centroids holds one centroid per batch row and is treated as a constant.
  AeLossTerms loss(Tape& tape, Var clean, Var corrupted, const Matrix& row_centroids, double lambda);
  // Same value without binding parameters for gradients.
  double loss_value(const Matrix& clean, const Matrix& corrupted, const Matrix& row_centroids, double lambda) const;

  const AutoencoderConfig& config() const noexcept { return config_; }
  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;

 private:
  template <typename Self>
  static AeLossTerms loss_impl(Self& self, Tape& tape, Var clean, Var corrupted, const Matrix& row_centroids,
                               double lambda);
  void check_input(const Matrix& x) const;

  AutoencoderConfig config_;
  Mlp encoder_half_;
  Mlp decoder_half_;
};

// Additive Gaussian noise, reproducible per (seed, epoch, batch).
Matrix corrupt(const Matrix& features, double noise_sigma, std::uint64_t seed, std::uint64_t epoch,
               std::uint64_t batch);

}  // namespace fgdcc
