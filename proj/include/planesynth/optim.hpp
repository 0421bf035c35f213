#pragma once

// Parameter groups, the adaptive-moment optimizer and the joint (U-opt) and
// two-stage (A-opt) schedules.

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "planesynth/errors.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

struct ParameterGroup {
  std::string name;
  Tensor value;
  bool enabled{true};
  double lr_multiplier{1.0};
  // Optimizer moments and the group's own step count for bias correction.
  Tensor m;
  Tensor v;
  std::size_t steps{0};
};

class ParameterSet {
 public:
  ParameterGroup& add(std::string name, Tensor value, bool enabled = true, double lr_multiplier = 1.0) {
    for (const auto& g : groups_)
      if (g.name == name) throw InvalidArgument("duplicate parameter group '" + name + "'");
    groups_.push_back(ParameterGroup{std::move(name), std::move(value), enabled, lr_multiplier, {}, {}, 0});
    return groups_.back();
  }

  bool has(const std::string& name) const {
    for (const auto& g : groups_)
      if (g.name == name) return true;
    return false;
  }
  ParameterGroup& group(const std::string& name) {
    for (auto& g : groups_)
      if (g.name == name) return g;
    throw InvalidArgument("unknown parameter group '" + name + "'");
  }
  const ParameterGroup& group(const std::string& name) const {
    for (const auto& g : groups_)
      if (g.name == name) return g;
    throw InvalidArgument("unknown parameter group '" + name + "'");
  }

  std::vector<ParameterGroup>& groups() { return groups_; }
  const std::vector<ParameterGroup>& groups() const { return groups_; }

  void validate() const {
    for (const auto& g : groups_)
      for (double x : g.value.data())
        if (!std::isfinite(x)) throw NonFiniteUpdate("parameter group '" + g.name + "' holds a non-finite value");
  }

 private:
  std::vector<ParameterGroup> groups_;
};

struct AdamConfig {
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

// One adaptive-moment step. grads are matched to groups by position; a group
// that is disabled, or whose gradient is empty, is left untouched.
inline void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, double lr, const AdamConfig& cfg = {}) {
  auto& groups = params.groups();
  if (grads.size() != groups.size()) throw DimensionMismatch("adam_step: one gradient per parameter group");
  for (std::size_t k = 0; k < groups.size(); ++k) {
    ParameterGroup& g = groups[k];
    const Tensor& grad = grads[k];
    if (!g.enabled || grad.empty()) continue;
    require_same_shape(grad.shape(), g.value.shape(), ("adam_step group '" + g.name + "'").c_str());
    if (g.m.shape() != g.value.shape()) {
      g.m = Tensor(g.value.shape());
      g.v = Tensor(g.value.shape());
    }
    ++g.steps;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(g.steps));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(g.steps));
    const double step = lr * g.lr_multiplier;
    Tensor next = g.value;
    for (std::size_t i = 0; i < next.size(); ++i) {
      g.m[i] = cfg.beta1 * g.m[i] + (1.0 - cfg.beta1) * grad[i];
      g.v[i] = cfg.beta2 * g.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double mh = g.m[i] / c1, vh = g.v[i] / c2;
      next[i] -= step * mh / (std::sqrt(vh) + cfg.eps);
      if (!std::isfinite(next[i]))
        throw NonFiniteUpdate("update of parameter group '" + g.name + "' is non-finite at entry " + std::to_string(i));
    }
    g.value = std::move(next);
  }
}

// ---------------------------------------------------------------------------
// Schedules

struct UOpt {
  double lr{0.05};
};

struct AOpt {
  std::size_t stage1_steps{0};
  double lr_stage1{0.05};
  double lr_content_stage2{0.01};
  double lr_offset_stage2{0.1};
};

// Learning rates and the placement-enabled flag in effect at one step.
struct SchedulePhase {
  double content_lr{0.0};
  double placement_lr{0.0};
  bool placement_enabled{true};
  int stage{1};
};

struct OptSchedule {
  std::variant<UOpt, AOpt> kind{UOpt{}};
  std::size_t total_steps{300};
  std::uint64_t seed{0};

  static OptSchedule uopt(std::size_t steps, double lr = 0.05, std::uint64_t seed = 0) {
    return {UOpt{lr}, steps, seed};
  }
  // Stage 1 covers 40% of the budget; stage 2 gives offsets ten times the content rate.
  static OptSchedule aopt(std::size_t steps, double lr_stage1 = 0.05, double lr_content_stage2 = 0.01,
                          std::uint64_t seed = 0) {
    return {AOpt{steps * 2 / 5, lr_stage1, lr_content_stage2, 10.0 * lr_content_stage2}, steps, seed};
  }

  bool is_aopt() const { return std::holds_alternative<AOpt>(kind); }
  std::string name() const { return is_aopt() ? "aopt" : "uopt"; }

  void validate() const {
    if (total_steps < 1) throw InvalidArgument("schedule needs at least one step");
    if (const auto* u = std::get_if<UOpt>(&kind)) {
      if (!(u->lr > 0.0)) throw InvalidArgument("U-opt learning rate must be > 0");
    } else {
      const auto& a = std::get<AOpt>(kind);
      if (!(a.lr_stage1 > 0.0) || !(a.lr_content_stage2 > 0.0) || !(a.lr_offset_stage2 > 0.0))
        throw InvalidArgument("A-opt learning rates must be > 0");
      if (!(a.lr_offset_stage2 > a.lr_content_stage2))
        throw InvalidArgument("A-opt needs lr_offset_stage2 > lr_content_stage2");
      if (a.stage1_steps > total_steps) throw InvalidArgument("A-opt stage 1 is longer than the whole budget");
    }
  }

  SchedulePhase at(std::size_t step) const {
    if (const auto* u = std::get_if<UOpt>(&kind)) return {u->lr, u->lr, true, 1};
    const auto& a = std::get<AOpt>(kind);
    if (step < a.stage1_steps) return {a.lr_stage1, 0.0, false, 1};
    return {a.lr_content_stage2, a.lr_offset_stage2, true, 2};
  }
};

}  // namespace planesynth
