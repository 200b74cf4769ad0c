#include "vtg/optim.hpp"

#include <cmath>

namespace vtg {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor& p : params_) {
        if (!p.requires_grad())
            throw ContractError("AdamW: '" + p.name() + "' is not a trainable parameter");
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad())
            throw ContractError("AdamW: no gradient for '" + p.name() + "' at step " + std::to_string(t_));
        const auto& g = p.grad();
        auto& data = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            if (!std::isfinite(g[j]))
                throw NumericError("gradient of '" + p.name() + "' is not finite");
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            data[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * data[j]);
        }
    }
    zero_grad();
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void AdamW::restore_state(std::size_t t, std::vector<std::vector<double>> m,
                          std::vector<std::vector<double>> v) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw ContractError("AdamW: restored state covers " + std::to_string(m.size()) +
                            " tensors, optimizer owns " + std::to_string(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (m[i].size() != params_[i].size() || v[i].size() != params_[i].size())
            throw ContractError("AdamW: restored state size mismatch for '" + params_[i].name() + "'");
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

} // namespace vtg
