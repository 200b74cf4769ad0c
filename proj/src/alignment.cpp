#include "vtg/alignment.hpp"

namespace vtg {

namespace {

void require_tnn(const Tensor& m, const char* op) {
    if (m.rank() != 3 || m.shape()[1] != m.shape()[2])
        throw DimensionError(std::string(op) + ": expected [T,N,N], got " + shape_str(m.shape()));
}

} // namespace

Tensor slot_similarity(const Tensor& attn) {
    if (attn.rank() != 3) throw DimensionError("slot_similarity: expected [T,N,n_slots], got " + shape_str(attn.shape()));
    Tensor abar = l2_normalize_axis(attn, -1);
    return add_scalar(scale(matmul(abar, transpose_last2(abar)), 2.0), -1.0);
}

Tensor feature_affinity(const Tensor& features) {
    if (features.rank() != 3)
        throw DimensionError("feature_affinity: expected [T,N,d_f], got " + shape_str(features.shape()));
    Tensor fbar = l2_normalize_axis(features, -1);
    return matmul(fbar, transpose_last2(fbar));
}

Tensor sa_loss(const Tensor& m_slot, const Tensor& m_target, bool mask_diagonal) {
    require_tnn(m_slot, "sa_loss");
    if (m_slot.shape() != m_target.shape())
        throw DimensionError("sa_loss: shapes " + shape_str(m_slot.shape()) + " and " +
                             shape_str(m_target.shape()) + " differ");
    std::size_t t = m_slot.shape()[0], n = m_slot.shape()[1];
    Tensor a = reshape(m_slot, {t, n * n});
    Tensor b = reshape(m_target, {t, n * n});
    if (mask_diagonal) {
        std::vector<double> keep(n * n, 1.0);
        for (std::size_t i = 0; i < n; ++i) keep[i * n + i] = 0.0;
        Tensor mask = Tensor::from_data({n * n}, std::move(keep));
        a = mul(a, mask);
        b = mul(b, mask);
    }
    Tensor cos = sum_axis(mul(l2_normalize_axis(a, -1), l2_normalize_axis(b, -1)), -1);  // [T]
    return add_scalar(scale(mean_all(cos), -1.0), 1.0);
}

Tensor total_loss(const Tensor& ce, const Tensor& sa, double lambda) {
    if (lambda < 0.0) throw ValueError("total_loss: lambda must be >= 0, got " + std::to_string(lambda));
    return add(ce, scale(sa, lambda));
}

} // namespace vtg
