#include "fgdcc/encoder.hpp"

#include <fmt/core.h>

#include "fgdcc/errors.hpp"

namespace fgdcc {

namespace {

std::vector<std::size_t> widths_of(const EncoderConfig& c) {
  std::vector<std::size_t> w{c.input_dim};
  w.insert(w.end(), c.hidden.begin(), c.hidden.end());
  w.push_back(c.output_dim);
  return w;
}

}  // namespace

Encoder::Encoder(const EncoderConfig& config) : config_(config), net_("encoder", widths_of(config), config.seed) {}

Var Encoder::encode(Tape& tape, Var x) {
  if (tape.value(x).cols() != config_.input_dim) {
    throw DimensionError(fmt::format("encoder: input {} but input_dim is {}", tape.value(x).shape_str(),
                                     config_.input_dim));
  }
  return net_.forward(tape, x);
}

Matrix Encoder::encode(const Matrix& x) const {
  if (x.cols() != config_.input_dim) {
    throw DimensionError(fmt::format("encoder: input {} but input_dim is {}", x.shape_str(), config_.input_dim));
  }
  return net_.evaluate(x);
}

}  // namespace fgdcc
