// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace bamforge {

// Linear warmup to peak_lr, then cosine decay to floor_fraction * peak_lr at total_steps.
struct Schedule {
  double peak_lr = 3e-3;
  std::size_t warmup_steps = 50;
  std::size_t total_steps = 1000;
  double floor_fraction = 0.1;

  void validate() const;
};

// Steps past total_steps return the floor value.
double lr_at(std::size_t step, const Schedule& schedule);

}  // namespace bamforge
