#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "ssmaf/metrics.hpp"

using namespace ssmaf;

namespace {

std::vector<double> random_mask(SplitMix64& rng, std::size_t n, double p) {
	std::vector<double> m(n);
	for (double& v : m) v = rng.uniform() < p ? 1.0 : 0.0;
	return m;
}

/// Scores on the 1/1000 grid, so a 1001-threshold sweep sees every breakpoint.
std::vector<double> grid_scores(SplitMix64& rng, std::size_t n) {
	std::vector<double> s(n);
	for (double& v : s) v = static_cast<double>(rng.integer(0, 1000)) / 1000.0;
	return s;
}

}  // namespace

TEST_CASE("confusion counts match a naive loop") {
	SplitMix64 rng(201);
	for (int trial = 0; trial < 150; ++trial) {
		const std::size_t n = rng.integer(1, 300);
		auto pred = random_mask(rng, n, rng.uniform()), gt = random_mask(rng, n, rng.uniform());
		ConfusionCounts want;
		for (std::size_t i = 0; i < n; ++i) {
			if (pred[i] == 1 && gt[i] == 1) want.tp++;
			if (pred[i] == 1 && gt[i] == 0) want.fp++;
			if (pred[i] == 0 && gt[i] == 1) want.fn++;
			if (pred[i] == 0 && gt[i] == 0) want.tn++;
		}
		CHECK(confusion(pred, gt) == want);
		CHECK(confusion(pred, gt).total() == n);
	}
	CHECK_THROWS_AS(confusion(std::vector<double>(3), std::vector<double>(4)), std::invalid_argument);
}

TEST_CASE("overlap score examples") {
	OverlapScores s = dice_iou_recall({2, 2, 2, 0});
	CHECK(s.dice == 0.5);
	CHECK(s.iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
	CHECK(s.recall == 0.5);

	OverlapScores perfect = dice_iou_recall({5, 0, 0, 7});
	CHECK(perfect.dice == 1.0);
	CHECK(perfect.iou == 1.0);
	CHECK(perfect.recall == 1.0);

	OverlapScores empty = dice_iou_recall({0, 0, 0, 10});
	CHECK(empty.dice == 1.0);
	CHECK(empty.iou == 1.0);
	CHECK(empty.recall == 1.0);

	OverlapScores missed = dice_iou_recall({0, 0, 4, 10});
	CHECK(missed.dice == 0.0);
	CHECK(missed.recall == 0.0);
}

TEST_CASE("dice = 2 iou / (1 + iou) and symmetry") {
	SplitMix64 rng(202);
	for (int trial = 0; trial < 200; ++trial) {
		ConfusionCounts c{std::uint64_t(rng.integer(0, 50)), std::uint64_t(rng.integer(0, 50)),
				std::uint64_t(rng.integer(0, 50)), std::uint64_t(rng.integer(0, 50))};
		if (c.tp + c.fp + c.fn == 0) continue;
		OverlapScores s = dice_iou_recall(c);
		CHECK(std::abs(s.dice - 2 * s.iou / (1 + s.iou)) < 1e-15);
		CHECK(s.iou <= s.dice);
		OverlapScores swapped = dice_iou_recall({c.tp, c.fn, c.fp, c.tn});
		CHECK(swapped.dice == s.dice);
		CHECK(swapped.iou == s.iou);
		if (c.tp + c.fp > 0) CHECK(swapped.recall == doctest::Approx(double(c.tp) / double(c.tp + c.fp)));
	}
}

TEST_CASE("AUC-PR examples") {
	CHECK(auc_pr(std::vector<double>{0.9, 0.1}, std::vector<double>{1, 0}).value == 1.0);
	AucResult deg = auc_pr(std::vector<double>{0.3, 0.4}, std::vector<double>{0, 0});
	CHECK(deg.degenerate);
	CHECK(deg.value == 1.0);

	SplitMix64 rng(203);
	for (int trial = 0; trial < 20; ++trial) {
		const std::size_t n = rng.integer(2, 200);
		auto gt = random_mask(rng, n, 0.3);
		double p = 0;
		for (double g : gt) p += g;
		if (p == 0) continue;
		CHECK(auc_pr(std::vector<double>(n, 0.5), gt).value == doctest::Approx(p / double(n)).epsilon(1e-14));
	}
}

TEST_CASE("AUC-PR matches a dense threshold sweep") {
	SplitMix64 rng(204);
	double worst = 0;
	int checked = 0;
	while (checked < 150) {
		const std::size_t n = rng.integer(5, 400);
		auto gt = random_mask(rng, n, rng.uniform(0.05, 0.6));
		auto scores = grid_scores(rng, n);
		// Mix in signal so the curves are not all near prevalence.
		for (std::size_t i = 0; i < n; ++i)
			if (gt[i] == 1 && rng.uniform() < 0.5) scores[i] = std::min(1.0, scores[i] + 0.3);
		for (double& s : scores) s = std::round(s * 1000.0) / 1000.0;
		double pos = 0;
		for (double g : gt) pos += g;
		if (pos == 0) continue;
		worst = std::max(worst, std::abs(auc_pr(scores, gt).value - oracle::auc_dense(scores, gt)));
		++checked;
	}
	CHECK(worst <= 2e-3);
}

TEST_CASE("AUC-PR is invariant under strictly increasing score maps") {
	SplitMix64 rng(205);
	for (int trial = 0; trial < 30; ++trial) {
		const std::size_t n = rng.integer(5, 100);
		auto gt = random_mask(rng, n, 0.4);
		gt[0] = 1;
		std::vector<double> s(n), t(n);
		for (std::size_t i = 0; i < n; ++i) {
			s[i] = rng.uniform();
			t[i] = s[i] * s[i] * s[i];
		}
		CHECK(auc_pr(s, gt).value == doctest::Approx(auc_pr(t, gt).value).epsilon(1e-14));
	}
}

TEST_CASE("evaluate_scores on the ground truth itself") {
	std::vector<double> gt{0, 1, 1, 0, 0, 1};
	MetricsReport r = evaluate_scores(gt, gt, 0.5);
	CHECK(r.dice == 1.0);
	CHECK(r.iou == 1.0);
	CHECK(r.recall == 1.0);
	CHECK(r.auc_pr == 1.0);
	MetricsReport none = evaluate_scores(std::vector<double>(6, 0.0), gt, 0.5);
	CHECK(none.recall == 0.0);
	CHECK(none.dice == 0.0);
}
