#include "landcover/optim.hpp"

#include <cmath>

#include "landcover/errors.hpp"

namespace landcover {

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("adam betas must lie in [0,1)");
  }
  if (!(eps > 0.0)) throw ValidationError("adam eps must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight decay must be non-negative");
  if (!(poly_power >= 0.0)) throw ValidationError("poly power must be non-negative");
  if (total_steps < 0) throw ValidationError("total steps must be non-negative");
}

double OptimizerConfig::lr_at(std::int64_t step) const {
  if (total_steps <= 0) return lr;
  const double progress = std::min(1.0, static_cast<double>(step) / total_steps);
  return lr * std::pow(1.0 - progress, poly_power);
}

OptimizerState OptimizerState::for_params(const ParameterSet& params) {
  return {0, params.zeros_like(), params.zeros_like()};
}

namespace {

bool is_decayed(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

OptimizerUpdate adamw_step(const ParameterSet& params,
                           const ParameterSet& grads,
                           const OptimizerState& state,
                           const OptimizerConfig& cfg) {
  cfg.validate();
  if (!params.same_layout(grads) || !params.same_layout(state.first_moment) ||
      !params.same_layout(state.second_moment)) {
    throw ValidationError("optimizer inputs have mismatched parameter layouts");
  }
  OptimizerUpdate out{params, state};
  out.state.step = state.step + 1;
  const double lr = cfg.lr_at(state.step);
  if (lr == 0.0) return out;

  const auto t = static_cast<double>(out.state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : out.params.arrays()) {
    const auto& g = grads.at(name).values;
    auto& m = out.state.first_moment.at(name).values;
    auto& v = out.state.second_moment.at(name).values;
    const double decay = is_decayed(name) ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      p.values[i] -= lr * (update + decay * p.values[i]);
    }
  }
  return out;
}

}  // namespace landcover
