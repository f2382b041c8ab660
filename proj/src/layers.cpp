#include "fgdcc/layers.hpp"

#include <cmath>
#include <random>

#include <fmt/core.h>

#include "fgdcc/errors.hpp"
#include "fgdcc/random.hpp"

namespace fgdcc {

Linear::Linear(std::string name, std::size_t in, std::size_t out, Init init, std::uint64_t seed)
    : weight(name + ".weight", Matrix(out, in)), bias(name + ".bias", Matrix(1, out)) {
  if (in == 0 || out == 0) throw ConfigError(fmt::format("{}: layer widths must be >= 1", name));
  if (init == Init::kHeUniform) {
    auto rng = make_rng({seed, stream::kInit});
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : weight.value.data()) w = dist(rng);
  }
}

Var Linear::forward(Tape& tape, Var x) {
  if (tape.value(x).cols() != in_features()) {
    throw DimensionError(fmt::format("{}: input {} does not match weight {}", weight.name,
                                     tape.value(x).shape_str(), weight.value.shape_str()));
  }
  return tape.linear(x, tape.param(weight), tape.param(bias));
}

Var Linear::apply(Tape& tape, Var x) const {
  if (tape.value(x).cols() != in_features()) {
    throw DimensionError(fmt::format("{}: input {} does not match weight {}", weight.name,
                                     tape.value(x).shape_str(), weight.value.shape_str()));
  }
  return tape.linear(x, tape.constant(weight.value), tape.constant(bias.value));
}

Mlp::Mlp(const std::string& name, const std::vector<std::size_t>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ConfigError(name + ": need at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.emplace_back(fmt::format("{}.{}", name, i), widths[i], widths[i + 1], Init::kHeUniform,
                         mix_seed({seed, i}));
  }
}

Var Mlp::forward(Tape& tape, Var x) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(tape, x);
    if (i + 1 < layers_.size()) x = tape.gelu(x);
  }
  return x;
}

Var Mlp::apply(Tape& tape, Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].apply(tape, x);
    if (i + 1 < layers_.size()) x = tape.gelu(x);
  }
  return x;
}

Matrix Mlp::evaluate(const Matrix& x) const {
  Tape tape;
  return tape.value(apply(tape, tape.constant(x)));
}

std::size_t Mlp::in_features() const { return layers_.front().in_features(); }
std::size_t Mlp::out_features() const { return layers_.back().out_features(); }

std::vector<ParamTensor*> Mlp::params() {
  std::vector<ParamTensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const ParamTensor*> Mlp::params() const {
  std::vector<const ParamTensor*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

}  // namespace fgdcc
