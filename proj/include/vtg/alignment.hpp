#pragma once

#include "vtg/tensor.hpp"

namespace vtg {

// M_slot = 2 (A-bar A-bar^T) - 1 per frame, where A-bar is the slot-axis
// L2 normalization of the attention map.  attn: [T, N, n_slots] -> [T, N, N].
Tensor slot_similarity(const Tensor& attn);

// Cosine affinity of per-token features: L2-normalize rows, per-frame gram
// matrix.  features: [T, N, d_f] -> [T, N, N].
Tensor feature_affinity(const Tensor& features);

// L_SA = 1 - (1/T) sum_t cos(M_slot^t, M_target^t), the matrices flattened to
// N^2-vectors.  A zero-norm frame contributes cos = 0 (loss 1).  With
// mask_diagonal the fixed unit diagonal is dropped from the comparison
// (ablation switch; default keeps it).
Tensor sa_loss(const Tensor& m_slot, const Tensor& m_target, bool mask_diagonal = false);

// L_total = ce + lambda * sa.
Tensor total_loss(const Tensor& ce, const Tensor& sa, double lambda);

} // namespace vtg
