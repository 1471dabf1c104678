// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <functional>
#include <vector>

#include "openmixer/autodiff.hpp"

namespace omtest {

// Compares tape gradients of a scalar-valued graph against central finite
// differences, wiggling every element of every input. The builder must
// construct a fresh graph from the given leaf Vars on each call.
//
// Relative error uses max(|analytic|, |numeric|, floor) as denominator so
// genuinely zero gradients do not divide by zero.
inline double max_rel_grad_error(
    const std::vector<openmixer::Tensor>& inputs,
    const std::function<openmixer::Var(const std::vector<openmixer::Var>&)>& builder,
    double step = 1e-5, double floor = 1e-3) {
    using namespace openmixer;

    auto eval = [&](const std::vector<Tensor>& vals) {
        std::vector<Var> leaves;
        leaves.reserve(vals.size());
        for (const auto& t : vals) leaves.push_back(parameter(t));
        return builder(leaves);
    };

    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(parameter(t));
    Var root = builder(leaves);
    backward(root);

    double worst = 0.0;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        for (std::size_t i = 0; i < inputs[which].numel(); ++i) {
            std::vector<Tensor> vals = inputs;
            vals[which][i] += step;
            const double up = eval(vals)->value.item();
            vals[which][i] -= 2.0 * step;
            const double down = eval(vals)->value.item();
            const double numeric = (up - down) / (2.0 * step);
            const double analytic =
                leaves[which]->grad.numel() == leaves[which]->value.numel() ? leaves[which]->grad[i]
                                                                             : 0.0;
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace omtest
