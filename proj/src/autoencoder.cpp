#include "fgdcc/autoencoder.hpp"

#include <random>
#include <type_traits>

#include <fmt/core.h>

#include "fgdcc/errors.hpp"
#include "fgdcc/random.hpp"

namespace fgdcc {

namespace {

std::vector<std::size_t> encoder_widths(const AutoencoderConfig& c) {
  std::vector<std::size_t> w{c.input_dim};
  w.insert(w.end(), c.hidden.begin(), c.hidden.end());
  w.push_back(c.bottleneck_dim);
  return w;
}

std::vector<std::size_t> decoder_widths(const AutoencoderConfig& c) {
  auto w = encoder_widths(c);
  return {w.rbegin(), w.rend()};
}

}  // namespace

Autoencoder::Autoencoder(const AutoencoderConfig& config)
    : config_(config),
      encoder_half_("ae.encoder", encoder_widths(config), mix_seed({config.seed, 1})),
      decoder_half_("ae.decoder", decoder_widths(config), mix_seed({config.seed, 2})) {
  if (config.bottleneck_dim >= config.input_dim) {
    throw ConfigError(fmt::format("autoencoder: bottleneck_dim {} must be < input_dim {}", config.bottleneck_dim,
                                  config.input_dim));
  }
  if (config.noise_sigma < 0.0 || config.lambda_penalty < 0.0 || config.smooth_l1_beta <= 0.0) {
    throw ConfigError("autoencoder: noise_sigma and lambda must be >= 0, smooth_l1_beta > 0");
  }
}

void Autoencoder::check_input(const Matrix& x) const {
  if (x.cols() != config_.input_dim) {
    throw DimensionError(fmt::format("autoencoder: input {} but input_dim is {}", x.shape_str(), config_.input_dim));
  }
}

Var Autoencoder::encode_bottleneck(Tape& tape, Var x) {
  check_input(tape.value(x));
  return encoder_half_.forward(tape, x);
}

Matrix Autoencoder::encode_bottleneck(const Matrix& x) const {
  check_input(x);
  return encoder_half_.evaluate(x);
}

Var Autoencoder::reconstruct(Tape& tape, Var x) {
  return decoder_half_.forward(tape, encode_bottleneck(tape, x));
}

Matrix Autoencoder::reconstruct(const Matrix& x) const {
  check_input(x);
  Tape tape;
  return tape.value(decoder_half_.apply(tape, encoder_half_.apply(tape, tape.constant(x))));
}

template <typename Self>
AeLossTerms Autoencoder::loss_impl(Self& self, Tape& tape, Var clean, Var corrupted, const Matrix& row_centroids,
                                   double lambda) {
  const auto& cfg = self.config_;
  self.check_input(tape.value(corrupted));
  if (!tape.value(clean).same_shape(tape.value(corrupted))) {
    throw DimensionError(fmt::format("ae_loss: clean {} vs corrupted {}", tape.value(clean).shape_str(),
                                     tape.value(corrupted).shape_str()));
  }
  const std::size_t n = tape.value(corrupted).rows();
  if (lambda > 0.0 && row_centroids.rows() != n) {
    throw StateError(fmt::format("ae_loss: {} centroid rows for a batch of {}", row_centroids.rows(), n));
  }

  AeLossTerms out;
  Var recon;
  if constexpr (std::is_const_v<Self>) {
    out.bottleneck = self.encoder_half_.apply(tape, corrupted);
    recon = self.decoder_half_.apply(tape, out.bottleneck);
  } else {
    out.bottleneck = self.encoder_half_.forward(tape, corrupted);
    recon = self.decoder_half_.forward(tape, out.bottleneck);
  }
  out.reconstruction = cfg.reconstruction == ReconstructionLoss::kSmoothL1
                           ? tape.smooth_l1(recon, clean, cfg.smooth_l1_beta)
                           : tape.mean_squared_error(recon, clean);
  out.total = out.reconstruction;
  if (lambda > 0.0) {
    if (row_centroids.cols() != cfg.bottleneck_dim) {
      throw DimensionError(fmt::format("ae_loss: centroids {} but bottleneck_dim is {}", row_centroids.shape_str(),
                                       cfg.bottleneck_dim));
    }
    const Var penalty = tape.scale(tape.l2_penalty(out.bottleneck, row_centroids),
                                   0.5 * lambda / static_cast<double>(n));
    out.total = tape.add(out.reconstruction, penalty);
  }
  return out;
}

AeLossTerms Autoencoder::loss(Tape& tape, Var clean, Var corrupted, const Matrix& row_centroids, double lambda) {
  return loss_impl(*this, tape, clean, corrupted, row_centroids, lambda);
}

double Autoencoder::loss_value(const Matrix& clean, const Matrix& corrupted, const Matrix& row_centroids,
                               double lambda) const {
  Tape tape;
  const auto terms = loss_impl(*this, tape, tape.constant(clean), tape.constant(corrupted), row_centroids, lambda);
  return tape.scalar(terms.total);
}

std::vector<ParamTensor*> Autoencoder::params() {
  auto p = encoder_half_.params();
  auto d = decoder_half_.params();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

std::vector<const ParamTensor*> Autoencoder::params() const {
  auto p = encoder_half_.params();
  auto d = decoder_half_.params();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

Matrix corrupt(const Matrix& features, double noise_sigma, std::uint64_t seed, std::uint64_t epoch,
               std::uint64_t batch) {
  if (noise_sigma < 0.0) throw ConfigError("corrupt: noise_sigma must be >= 0");
  Matrix out = features;
  if (noise_sigma == 0.0) return out;
  auto rng = make_rng({seed, stream::kNoise, epoch, batch});
  std::normal_distribution<double> normal(0.0, noise_sigma);
  for (double& v : out.data()) v += normal(rng);
  return out;
}

}  // namespace fgdcc
