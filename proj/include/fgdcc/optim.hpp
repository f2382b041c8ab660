#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "fgdcc/tensor.hpp"

namespace fgdcc {

// Linear warmup start_lr -> peak_lr over warmup_steps, then half-cosine
// peak_lr -> final_lr at total_steps. Endpoints are returned exactly.
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps, double start_lr,
                 double peak_lr, double final_lr);

double global_grad_norm(std::span<ParamTensor* const> params);

// Scales all gradients by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns the scale applied (1.0 when unchanged).
double clip_grad_norm(std::span<ParamTensor* const> params, double max_norm);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t step = 0;
};

// One AdamW update: p *= (1 - lr·wd), then the bias-corrected Adam step.
void adamw_step(ParamTensor& param, AdamState& state, double lr, const AdamWHyper& hyper);

/// AdamW over a set of named tensors; each tensor keeps its own step count so
/// tensors skipped on a step stay bit-identical.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWHyper hyper) : hyper_(hyper) {}

  void step(std::span<ParamTensor* const> params, double lr);

  const AdamWHyper& hyper() const noexcept { return hyper_; }
  std::map<std::string, AdamState>& states() noexcept { return states_; }
  const std::map<std::string, AdamState>& states() const noexcept { return states_; }

 private:
  AdamWHyper hyper_;
  std::map<std::string, AdamState> states_;
};

}  // namespace fgdcc
