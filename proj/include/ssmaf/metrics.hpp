#ifndef SSMAF_METRICS_HPP_
#define SSMAF_METRICS_HPP_

#include <cstdint>
#include <span>
#include <string>

namespace ssmaf {

struct ConfusionCounts {
	std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

	std::uint64_t total() const { return tp + fp + fn + tn; }
	ConfusionCounts& operator+=(const ConfusionCounts& o) {
		tp += o.tp;
		fp += o.fp;
		fn += o.fn;
		tn += o.tn;
		return *this;
	}
	bool operator==(const ConfusionCounts&) const = default;
};

struct OverlapScores {
	double dice = 0.0, iou = 0.0, recall = 0.0;
};

struct AucResult {
	double value = 1.0;
	bool degenerate = false;  // no positive pixel in the ground truth
};

/// Foreground-class metrics for one prediction.
struct MetricsReport {
	double dice = 0.0, iou = 0.0, recall = 0.0, auc_pr = 0.0;
	bool auc_degenerate = false;
};

/// Pixels > 0.5 count as foreground in both maps. Spans must have equal length.
ConfusionCounts confusion(std::span<const double> pred, std::span<const double> gt);

/// Empty-vs-empty foreground (tp = fp = fn = 0) scores 1 on all three.
OverlapScores dice_iou_recall(const ConfusionCounts& c);

/**
 * Area under the precision-recall curve. A pixel is predicted positive at threshold t when
 * score >= t; thresholds are every distinct score plus {0, 1}. Points are joined by trapezoids over
 * recall, with the first point's precision extended back to recall 0. Returns 1 (flagged
 * degenerate) when gt has no positive pixel.
 */
AucResult auc_pr(std::span<const double> scores, std::span<const double> gt);

/// Confusion-based scores at `threshold` (score >= threshold is foreground) plus AUC-PR.
MetricsReport evaluate_scores(std::span<const double> scores, std::span<const double> gt, double threshold);

}  // namespace ssmaf

#endif  // SSMAF_METRICS_HPP_
