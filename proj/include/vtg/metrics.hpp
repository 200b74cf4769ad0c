#pragma once

#include <optional>
#include <vector>

#include "vtg/errors.hpp"

namespace vtg {

struct Window {
    double start = 0.0;
    double end = 0.0;
};

// A failed parse is a first-class outcome: scored as IoU 0, never skipped.
using Prediction = std::optional<Window>;

void validate_window(const Window& w);   // ValueError unless 0 <= start <= end, finite

// Intersection over union of two intervals.  A zero-measure union (two
// identical point windows) scores 1; disjoint point windows score 0.
double temporal_iou(const Window& a, const Window& b);

// Fraction of predictions whose IoU with ground truth reaches tau.
double recall_at_iou(const std::vector<Prediction>& preds, const std::vector<Window>& gts, double tau);

// Mean IoU with parse failures counted as 0.
double mean_iou(const std::vector<Prediction>& preds, const std::vector<Window>& gts);

} // namespace vtg
