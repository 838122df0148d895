#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ei/tensor.hpp"

namespace ei {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;       // "name[flat_index]"
    std::int64_t coords_checked = 0;
    bool finite = true;            // false if any gradient came out non-finite

    bool pass(double tol) const { return finite && max_rel_err <= tol; }
};

// Compares tape gradients of the scalar-valued f against central
// differences (f(t+h) - f(t-h)) / 2h with h = eps * max(1, |theta|), on a
// random sample of coordinates (>= coords_per_tensor per tensor, or all
// when a tensor is smaller). Runs in f64 regardless of the ambient mode.
// Relative error: |a - n| / max(1e-8, |a| + |n|).
GradCheckReport gradcheck(const std::function<Tensor()>& f, std::span<const NamedParam> params,
                          double eps = 1e-6, std::uint64_t seed = 0,
                          std::int64_t coords_per_tensor = 32);

}  // namespace ei
