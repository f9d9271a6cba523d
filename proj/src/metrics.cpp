#include "ssmaf/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ssmaf {

ConfusionCounts confusion(std::span<const double> pred, std::span<const double> gt) {
	if (pred.size() != gt.size())
		throw std::invalid_argument("confusion: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
				std::to_string(gt.size()));
	ConfusionCounts c;
	for (std::size_t i = 0; i < pred.size(); ++i) {
		const bool p = pred[i] > 0.5, g = gt[i] > 0.5;
		if (p && g)
			++c.tp;
		else if (p)
			++c.fp;
		else if (g)
			++c.fn;
		else
			++c.tn;
	}
	return c;
}

OverlapScores dice_iou_recall(const ConfusionCounts& c) {
	OverlapScores s;
	const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
	s.dice = (c.tp + c.fp + c.fn == 0) ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
	s.iou = (c.tp + c.fp + c.fn == 0) ? 1.0 : tp / (tp + fp + fn);
	s.recall = (c.tp + c.fn == 0) ? 1.0 : tp / (tp + fn);
	return s;
}

AucResult auc_pr(std::span<const double> scores, std::span<const double> gt) {
	if (scores.size() != gt.size())
		throw std::invalid_argument("auc_pr: score map and ground truth differ in size");
	std::size_t positives = 0;
	for (double g : gt) positives += g > 0.5;
	if (positives == 0) return AucResult{1.0, true};

	std::vector<std::size_t> order(scores.size());
	std::iota(order.begin(), order.end(), std::size_t{0});
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

	// Sweep thresholds from high to low; each distinct score adds its whole tie group. The extra
	// thresholds 0 and 1 add no new points: 1 either selects nothing (precision undefined) or equals
	// the top score, and 0 coincides with the lowest score group for scores in [0,1].
	struct Point {
		double recall, precision;
	};
	std::vector<Point> pts;
	const double pos = static_cast<double>(positives);
	std::size_t tp = 0, predicted = 0, i = 0;
	while (i < order.size()) {
		const double t = scores[order[i]];
		while (i < order.size() && scores[order[i]] == t) {
			tp += gt[order[i]] > 0.5;
			++predicted;
			++i;
		}
		pts.push_back({static_cast<double>(tp) / pos, static_cast<double>(tp) / static_cast<double>(predicted)});
	}

	double area = pts.front().recall * pts.front().precision;
	for (std::size_t k = 1; k < pts.size(); ++k)
		area += (pts[k].recall - pts[k - 1].recall) * 0.5 * (pts[k].precision + pts[k - 1].precision);
	return AucResult{std::clamp(area, 0.0, 1.0), false};
}

MetricsReport evaluate_scores(std::span<const double> scores, std::span<const double> gt, double threshold) {
	if (scores.size() != gt.size()) throw std::invalid_argument("evaluate_scores: size mismatch");
	std::vector<double> pred(scores.size());
	for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1.0 : 0.0;
	const OverlapScores s = dice_iou_recall(confusion(pred, gt));
	const AucResult a = auc_pr(scores, gt);
	return MetricsReport{s.dice, s.iou, s.recall, a.value, a.degenerate};
}

}  // namespace ssmaf
