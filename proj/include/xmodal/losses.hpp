// SPDX-License-Identifier: Apache-2.0
//
// Token-level losses over per-example logits.

#pragma once

#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

// Mean over unmasked positions of -log softmax(logits)[target].
// label_smoothing > 0 mixes in the uniform distribution:
//   (1 - eps) * (-log p_target) + (eps / V) * sum_k(-log p_k)
inline Tensor smoothed_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                                     const BoolVec& mask, double epsilon) {
    if (logits.rank() != 2) throw ShapeError("cross entropy expects T x V logits, got " + logits.shape_str());
    const int t_len = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t_len) throw ShapeError("targets length mismatch");
    if (!mask.empty() && static_cast<int>(mask.size()) != t_len) throw ShapeError("loss mask length mismatch");
    if (epsilon < 0.0 || epsilon >= 1.0) throw UsageError("label smoothing epsilon must be in [0, 1)");

    int kept = 0;
    for (int t = 0; t < t_len; ++t) {
        if (mask.empty() || mask[static_cast<std::size_t>(t)]) ++kept;
    }
    if (kept == 0) throw DegenerateInputError("cross entropy: all positions masked");

    for (int t = 0; t < t_len; ++t) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(t)]) continue;
        if (targets[static_cast<std::size_t>(t)] < 0 || targets[static_cast<std::size_t>(t)] >= v) {
            throw IndexError("target id " + std::to_string(targets[static_cast<std::size_t>(t)]) +
                             " out of vocabulary range");
        }
    }

    Tensor lp = log_softmax(logits, 1);
    std::vector<double> pick(logits.size(), 0.0);
    for (int t = 0; t < t_len; ++t) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(t)]) continue;
        const double base = -1.0 / kept;
        if (epsilon > 0.0) {
            for (int k = 0; k < v; ++k) pick[static_cast<std::size_t>(t) * v + k] += base * (epsilon / v);
        }
        pick[static_cast<std::size_t>(t) * v + targets[static_cast<std::size_t>(t)]] += base * (1.0 - epsilon);
    }
    return sum(mul(lp, Tensor(logits.shape(), std::move(pick))));
}

inline Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& targets, const BoolVec& mask) {
    return smoothed_cross_entropy(logits, targets, mask, 0.0);
}

inline Tensor label_smoothing_loss(const Tensor& logits, const std::vector<int>& targets, const BoolVec& mask,
                                   double epsilon) {
    return smoothed_cross_entropy(logits, targets, mask, epsilon);
}

}  // namespace xmodal
