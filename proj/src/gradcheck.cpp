#include "vtg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace vtg {

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double h, double guard, std::size_t max_per_param, Rng* rng) {
    if (params.empty()) throw ContractError("grad_check: no parameters given");
    if (max_per_param > 0 && rng == nullptr)
        throw ContractError("grad_check: sampling requires an rng");

    for (Tensor& p : params) p.zero_grad();
    Tensor loss = loss_fn();
    if (loss.size() != 1) throw DimensionError("grad_check: loss must be scalar, got " + shape_str(loss.shape()));
    backward(loss);

    std::vector<std::vector<double>> analytic;
    for (Tensor& p : params) {
        if (!p.has_grad())
            throw ContractError("grad_check: backward() never reached '" + p.name() + "'");
        analytic.push_back(p.grad());
        p.zero_grad();
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::vector<std::size_t> idx;
        if (max_per_param == 0 || p.size() <= max_per_param) {
            idx.resize(p.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        } else {
            std::vector<std::size_t> perm = rng->permutation(p.size());
            idx.assign(perm.begin(), perm.begin() + static_cast<long>(max_per_param));
        }
        for (std::size_t i : idx) {
            double saved = p.data()[i];
            double lp, lm;
            {
                NoGradGuard ng;
                p.mutable_data()[i] = saved + h;
                lp = loss_fn().value();
                p.mutable_data()[i] = saved - h;
                lm = loss_fn().value();
                p.mutable_data()[i] = saved;
            }
            double fd = (lp - lm) / (2.0 * h);
            double ad = analytic[pi][i];
            double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), guard});
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = p.name() + "[" + std::to_string(i) + "]";
                report.analytic = ad;
                report.numeric = fd;
            }
        }
    }
    return report;
}

} // namespace vtg
