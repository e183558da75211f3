#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dbat/tensor.hpp"

namespace dbat {

struct GradCheckFailure {
    std::string param;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    int64_t entries_checked = 0;
    double max_rel_err = 0.0;
    std::vector<GradCheckFailure> failures;
    bool ok() const { return failures.empty(); }
    std::string summary() const;
};

// Central-difference check of d(loss)/d(param) for every listed parameter.
// `loss_fn` must rebuild the graph on each call (parameters are perturbed in
// place between calls). Relative error per entry is
// |analytic - fd| / max(1, |fd|). Entries per parameter can be capped with
// `max_entries_per_param`; the subset is drawn deterministically from
// `sample_seed`. A non-finite loss raises EvaluationError.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps, double tol,
                           int64_t max_entries_per_param = -1, uint64_t sample_seed = 0);

}  // namespace dbat
