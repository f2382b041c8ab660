#pragma once

#include <cstdint>
#include <vector>

#include "fgdcc/layers.hpp"

namespace fgdcc {

struct EncoderConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t output_dim = 16;
  std::uint64_t seed = 0;
};

/// Trainable backbone mapping inputs in R^D to features in R^d.
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const EncoderConfig& config);

  Var encode(Tape& tape, Var x);
  Matrix encode(const Matrix& x) const;

  const EncoderConfig& config() const noexcept { return config_; }
  std::vector<ParamTensor*> params() { return net_.params(); }
  std::vector<const ParamTensor*> params() const { return net_.params(); }
  Mlp& net() noexcept { return net_; }

 private:
  EncoderConfig config_;
  Mlp net_;
};

}  // namespace fgdcc
