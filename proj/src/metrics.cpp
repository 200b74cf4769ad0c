#include "vtg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vtg {

void validate_window(const Window& w) {
    if (!std::isfinite(w.start) || !std::isfinite(w.end))
        throw ValueError("window endpoints must be finite");
    if (w.start < 0.0 || w.start > w.end)
        throw ValueError("invalid window [" + std::to_string(w.start) + ", " + std::to_string(w.end) + "]");
}

double temporal_iou(const Window& a, const Window& b) {
    validate_window(a);
    validate_window(b);
    double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    double uni = (a.end - a.start) + (b.end - b.start) - inter;
    if (uni <= 0.0) return (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
    return inter / uni;
}

namespace {

void check_lengths(std::size_t np, std::size_t ng) {
    if (np != ng)
        throw ValueError("prediction/ground-truth length mismatch: " + std::to_string(np) + " vs " +
                         std::to_string(ng));
    if (np == 0) throw ValueError("empty evaluation set");
}

} // namespace

double recall_at_iou(const std::vector<Prediction>& preds, const std::vector<Window>& gts, double tau) {
    check_lengths(preds.size(), gts.size());
    if (!(tau > 0.0) || tau > 1.0) throw ValueError("tau must be in (0, 1], got " + std::to_string(tau));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] && temporal_iou(*preds[i], gts[i]) >= tau) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mean_iou(const std::vector<Prediction>& preds, const std::vector<Window>& gts) {
    check_lengths(preds.size(), gts.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i]) sum += temporal_iou(*preds[i], gts[i]);
    }
    return sum / static_cast<double>(preds.size());
}

} // namespace vtg
