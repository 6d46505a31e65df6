// Copyright 2026 The FAC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "fac/rng.hpp"
#include "fac/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fac {

/// A finite-difference check on one random instance drawn from `rng`.
struct GradCheck {
  std::string name;
  double threshold = 1e-4;
  std::function<ad::FiniteDiffReport(CounterRng rng)> run;
};

/// Every primitive with a backward rule, the soft top-k block, the backbone,
/// the correspondence network and the three losses.
[[nodiscard]] const std::vector<GradCheck>& registered_gradchecks();

struct GradCheckOutcome {
  std::string name;
  double worst_rel_err = 0.0;
  double threshold = 0.0;
  std::size_t instances = 0;
  bool passed = false;
};

/// Runs `instances` random instances of every check whose name contains
/// `filter` (all when empty).
[[nodiscard]] std::vector<GradCheckOutcome> run_gradchecks(std::size_t instances, std::uint64_t seed,
                                                           const std::string& filter = {});

}  // namespace fac
