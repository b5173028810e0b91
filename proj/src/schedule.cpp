// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/schedule.hpp"

#include <cmath>
#include <numbers>

#include "bamforge/errors.hpp"

namespace bamforge {

void Schedule::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("schedule: peak_lr must be positive");
  if (!(floor_fraction > 0.0 && floor_fraction <= 1.0))
    throw ConfigError("schedule: floor_fraction must lie in (0, 1]");
  if (warmup_steps > total_steps) throw ConfigError("schedule: warmup_steps exceeds total_steps");
}

double lr_at(std::size_t step, const Schedule& s) {
  s.validate();
  if (step > s.total_steps) return s.peak_lr * s.floor_fraction;
  if (step < s.warmup_steps)
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const std::size_t span = s.total_steps - s.warmup_steps;
  if (span == 0) return s.peak_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return s.peak_lr * (s.floor_fraction + (1.0 - s.floor_fraction) * cosine);
}

}  // namespace bamforge
