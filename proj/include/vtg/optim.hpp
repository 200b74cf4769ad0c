#pragma once

#include <vector>

#include "vtg/tensor.hpp"

namespace vtg {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g            v <- b2*v + (1-b2)*g^2
//   mhat = m/(1-b1^t)               vhat = v/(1-b2^t)
//   p <- p - lr*(mhat/(sqrt(vhat)+eps) + wd*p)
// Parameters that never received a gradient trigger a ContractError naming
// the offending tensor; a call to step() clears gradients afterwards.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg);

    void step();
    void zero_grad();
    const std::vector<Tensor>& params() const { return params_; }

    // Optimizer state, exposed for checkpointing.
    std::size_t t() const { return t_; }
    const std::vector<std::vector<double>>& m() const { return m_; }
    const std::vector<std::vector<double>>& v() const { return v_; }
    void restore_state(std::size_t t, std::vector<std::vector<double>> m,
                       std::vector<std::vector<double>> v);

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace vtg
