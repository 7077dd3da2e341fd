// Copyright (c) 2026 The contrastive-fhvae Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fhvae/diff.hpp"

namespace fhvae::diff {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool passed = true;
};

// Absolute differences at or below this are treated as agreement.
inline constexpr double kGradCheckAbsFloor = 1e-8;

inline double gradient_discrepancy(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= kGradCheckAbsFloor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

// Compares caller-supplied analytic gradients (one matrix per param, same
// order) against central differences of the tape's scalar output `loss`.
// The tape must already hold bindings from a forward pass.
inline GradCheckReport compare_gradients(Tape& tape, Var loss, const std::vector<Param*>& params,
                                         const std::vector<Matrix>& analytic, double epsilon,
                                         double tol) {
  if (!tape.deterministic())
    throw NumericError("grad_check: tape draws noise internally; feed fixed noise as an input");
  if (analytic.size() != params.size())
    throw ShapeError("grad_check: analytic gradient count does not match parameter count");

  tape.forward();
  const double base = tape.scalar(loss);
  tape.forward();
  if (tape.scalar(loss) != base)
    throw NumericError("grad_check: forward pass is not deterministic");

  GradCheckReport report;
  report.max_rel_err = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Param& param = *params[p];
    if (analytic[p].rows() != param.value.rows() || analytic[p].cols() != param.value.cols())
      throw ShapeError("grad_check: analytic gradient shape mismatch for " + param.name);
    for (Index k = 0; k < param.value.size(); ++k) {
      double& slot = param.value.data()[k];
      const double saved = slot;
      slot = saved + epsilon;
      tape.forward();
      const double up = tape.scalar(loss);
      slot = saved - epsilon;
      tape.forward();
      const double down = tape.scalar(loss);
      slot = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[p].data()[k];
      const double err = gradient_discrepancy(a, numeric);
      ++report.entries_checked;
      if (report.worst_index < 0 || err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = param.name;
        report.worst_index = k;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  tape.forward();
  report.passed = report.max_rel_err <= tol;
  return report;
}

// Full check: runs backward once for the analytic gradient, then compares it
// to central differences (f(x+e) - f(x-e)) / 2e entry by entry.
inline GradCheckReport grad_check(Tape& tape, Var loss, const std::vector<Param*>& params,
                                  double epsilon = 1e-5, double tol = 1e-4) {
  if (!tape.forwarded()) throw std::logic_error("grad_check: run forward() first");
  for (Param* p : params) p->zero_grad();
  tape.backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);
  return compare_gradients(tape, loss, params, analytic, epsilon, tol);
}

}  // namespace fhvae::diff
