#include "dbat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dbat/rng.hpp"

namespace dbat {

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << "checked " << entries_checked << " entries, max rel err " << max_rel_err;
    if (!failures.empty()) {
        os << ", " << failures.size() << " failures; worst: " << failures.front().param << "["
           << failures.front().index << "] analytic=" << failures.front().analytic
           << " fd=" << failures.front().numeric << " rel=" << failures.front().rel_err;
    }
    return os.str();
}

static double eval_scalar(const std::function<Tensor()>& f) {
    NoGradGuard ng;
    double v = f().item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: loss is not finite");
    return v;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps, double tol, int64_t max_entries_per_param,
                           uint64_t sample_seed) {
    if (eps <= 0 || tol <= 0) throw ArgumentError("grad_check: eps and tol must be positive");

    for (const auto& [name, t] : params) t.impl()->grad.assign(static_cast<size_t>(t.numel()), 0.0);
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw EvaluationError("grad_check: loss is not finite");
    loss.backward();

    GradCheckReport report;
    for (const auto& [name, tc] : params) {
        Tensor t = tc;  // non-const handle onto the shared node
        std::vector<double> analytic = t.impl()->grad;
        if (analytic.empty()) analytic.assign(static_cast<size_t>(t.numel()), 0.0);

        std::vector<int64_t> entries(static_cast<size_t>(t.numel()));
        std::iota(entries.begin(), entries.end(), 0);
        if (max_entries_per_param > 0 && t.numel() > max_entries_per_param) {
            Rng rng(mix_seed(sample_seed, fnv1a(name)));
            // partial Fisher-Yates for the first max_entries entries
            for (int64_t i = 0; i < max_entries_per_param; ++i) {
                int64_t j = rng.uniform_int(i, t.numel() - 1);
                std::swap(entries[static_cast<size_t>(i)], entries[static_cast<size_t>(j)]);
            }
            entries.resize(static_cast<size_t>(max_entries_per_param));
        }

        std::vector<double>& data = t.data();
        for (int64_t idx : entries) {
            const double saved = data[static_cast<size_t>(idx)];
            data[static_cast<size_t>(idx)] = saved + eps;
            const double fp = eval_scalar(loss_fn);
            data[static_cast<size_t>(idx)] = saved - eps;
            const double fm = eval_scalar(loss_fn);
            data[static_cast<size_t>(idx)] = saved;

            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[static_cast<size_t>(idx)];
            const double rel = std::fabs(an - fd) / std::max(1.0, std::fabs(fd));
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.entries_checked;
            if (rel > tol) report.failures.push_back({name, idx, an, fd, rel});
        }
    }
    std::sort(report.failures.begin(), report.failures.end(),
              [](const GradCheckFailure& a, const GradCheckFailure& b) {
                  return a.rel_err > b.rel_err;
              });
    return report;
}

}  // namespace dbat
