#include "fgdcc/optim.hpp"

#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "fgdcc/errors.hpp"

namespace fgdcc {

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps, double start_lr,
                 double peak_lr, double final_lr) {
  if (step >= total_steps) return final_lr;
  if (step < warmup_steps) {
    const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
    return std::lerp(start_lr, peak_lr, t);
  }
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return std::lerp(final_lr, peak_lr, w);
}

double global_grad_norm(std::span<ParamTensor* const> params) {
  double sq = 0.0;
  for (const ParamTensor* p : params) {
    for (double g : p->grad.data()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<ParamTensor* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (ParamTensor* p : params) {
    for (double& g : p->grad.data()) g *= scale;
  }
  return scale;
}

void adamw_step(ParamTensor& param, AdamState& state, double lr, const AdamWHyper& hyper) {
  if (!state.m.same_shape(param.value)) {
    if (state.step != 0) {
      throw DimensionError(fmt::format("adamw: state {} for parameter {} {}", state.m.shape_str(), param.name,
                                       param.value.shape_str()));
    }
    state.m = Matrix(param.value.rows(), param.value.cols());
    state.v = Matrix(param.value.rows(), param.value.cols());
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * hyper.weight_decay;
  auto p = param.value.data();
  const auto g = param.grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] *= decay;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

void AdamW::step(std::span<ParamTensor* const> params, double lr) {
  for (ParamTensor* p : params) adamw_step(*p, states_[p->name], lr, hyper_);
}

}  // namespace fgdcc
