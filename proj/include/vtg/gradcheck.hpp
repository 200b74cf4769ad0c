#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vtg/rng.hpp"
#include "vtg/tensor.hpp"

namespace vtg {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;          // "param[flat_index]" of the worst element
    double analytic = 0.0;      // values at the worst element
    double numeric = 0.0;
    std::size_t checked = 0;    // number of elements compared
};

// Compares reverse-mode gradients of `loss_fn` against central finite
// differences.  `loss_fn` must rebuild the graph from the parameters' current
// values on every call and return a scalar.  Relative error is
//   |ad - fd| / max(|ad|, |fd|, guard)
// so elements near zero are judged against the guard scale instead of
// exploding.  With max_per_param == 0 every element is checked; otherwise a
// random subset of that size per parameter (rng required).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double h = 1e-5, double guard = 1e-3,
                           std::size_t max_per_param = 0, Rng* rng = nullptr);

} // namespace vtg
