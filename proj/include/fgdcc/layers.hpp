#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fgdcc/tensor.hpp"

namespace fgdcc {

enum class Init { kHeUniform, kZero };

/// Fully connected layer; weight is out×in, bias is 1×out.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, Init init, std::uint64_t seed);

  // Trainable pass: gradients reach weight and bias.
  Var forward(Tape& tape, Var x);
  // Frozen pass: parameters enter the tape as constants.
  Var apply(Tape& tape, Var x) const;

  std::size_t in_features() const noexcept { return weight.value.cols(); }
  std::size_t out_features() const noexcept { return weight.value.rows(); }

  ParamTensor weight;
  ParamTensor bias;
};

/// Stack of Linear layers with GELU between consecutive layers (none after the last).
class Mlp {
 public:
  Mlp() = default;
  // widths = {in, h1, ..., out}; at least two entries.
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, std::uint64_t seed);

  Var forward(Tape& tape, Var x);
  Var apply(Tape& tape, Var x) const;
  Matrix evaluate(const Matrix& x) const;

  std::size_t in_features() const;
  std::size_t out_features() const;
  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;
  std::vector<Linear>& layers() noexcept { return layers_; }

 private:
  std::vector<Linear> layers_;
};

}  // namespace fgdcc
