#pragma once

#include <cstdint>

#include "landcover/models.hpp"

namespace landcover {

// AdamW with polynomial learning-rate decay over total_steps.
struct OptimizerConfig {
  double lr = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // applied to *.weight arrays only
  double poly_power = 1.0;
  std::int64_t total_steps = 0;  // 0 disables decay

  void validate() const;
  double lr_at(std::int64_t step) const;
};

struct OptimizerState {
  std::int64_t step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;

  static OptimizerState for_params(const ParameterSet& params);
};

struct OptimizerUpdate {
  ParameterSet params;
  OptimizerState state;
};

OptimizerUpdate adamw_step(const ParameterSet& params,
                           const ParameterSet& grads,
                           const OptimizerState& state,
                           const OptimizerConfig& cfg);

}  // namespace landcover
