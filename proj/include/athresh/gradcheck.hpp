/*
 * Copyright 2026 The athresh Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "athresh/tensor.hpp"

namespace athresh {

/// Central finite-difference check of the reverse-mode gradients of a
/// scalar-valued function. The numeric side only ever evaluates the
/// forward pass, so it is independent of the tape machinery it verifies.
///
/// Per element the error is |ad - fd| / max(1, |ad|, |fd|); the maximum
/// over all elements of all inputs is returned.
double gradcheck_max_rel_error(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                               double step = 1e-3);

struct GradCheckReport {
  std::string op;
  int trials = 0;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Randomized finite-difference sweep over every differentiable operation,
/// including the composite loss graph. `trials` random shapes/values per
/// op, deterministic in `seed`.
std::vector<GradCheckReport> gradcheck_suite(int trials, std::uint64_t seed);

bool gradcheck_all_pass(const std::vector<GradCheckReport>& reports);

/// Plain-text table, one row per op.
std::string gradcheck_table(const std::vector<GradCheckReport>& reports);

}  // namespace athresh
