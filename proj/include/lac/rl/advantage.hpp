#pragma once

#include "lac/autodiff/tensor.hpp"

#include <vector>

namespace lac {

struct GaeResult {
    Vector advantages;  // n
    Vector returns;     // n, advantages + V(s_k)
};

// rewards has n entries, values n + 1 (the last one is the terminal value,
// 0 by convention). delta_k = r_k + gamma V_{k+1} - V_k,
// A_k = sum_l (gamma lambda)^l delta_{k+l}.
GaeResult compute_gae(const Vector& rewards, const Vector& values, double gamma, double lam);

// (A - mean) / std with the population std, zero when std < 1e-8, then
// clipped to [-clip, clip].
void normalize_advantages(Vector& adv, double clip = 10.0);

// Within-group standardisation; G >= 2.
Vector grpo_advantages(const Vector& rewards);

// Per-transition k3 estimate of KL(new || ref) from log-probabilities of
// samples drawn under the current policy, averaged: exp(d) - 1 - d with
// d = logp_ref - logp_new.
double kl_penalty(const Vector& logp_new, const Vector& logp_ref);

}  // namespace lac
