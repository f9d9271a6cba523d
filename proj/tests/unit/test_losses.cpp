#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ssmaf/losses.hpp"
#include "ssmaf/ops.hpp"

using namespace ssmaf;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Channel-softmax probabilities computed independently of the library.
Tensor naive_softmax(const Tensor& z) {
	Tensor p(z.shape());
	for (std::size_t b = 0; b < z.dim(0); ++b)
		for (std::size_t i = 0; i < z.dim(2); ++i)
			for (std::size_t j = 0; j < z.dim(3); ++j) {
				double s = 0;
				for (std::size_t c = 0; c < z.dim(1); ++c) s += std::exp(z.at(b, c, i, j));
				for (std::size_t c = 0; c < z.dim(1); ++c) p.at(b, c, i, j) = std::exp(z.at(b, c, i, j)) / s;
			}
	return p;
}

}  // namespace

TEST_SUITE("cbce") {
	TEST_CASE("class weight values") {
		CHECK(cbce_class_weight(1, 0.9999) == 1.0);
		CHECK(cbce_class_weight(0, 0.9999) == 0.0);
		CHECK(rel(cbce_class_weight(10000, 0.9999), 1.581930672611049e-4) < 1e-9);
		CHECK(rel(cbce_class_weight(2, 0.9999), 0.500025001250062503) < 1e-12);
		for (std::size_t n = 1; n < 50; ++n) CHECK(cbce_class_weight(n, 0.0) == 1.0);
	}

	TEST_CASE("class weight decreases with the class count") {
		double prev = cbce_class_weight(1, 0.9999);
		for (std::size_t n = 2; n < 100000; n = n * 3 / 2 + 1) {
			const double w = cbce_class_weight(n, 0.9999);
			CHECK(w < prev);
			prev = w;
		}
	}

	TEST_CASE("matches the naive loop on random instances") {
		SplitMix64 rng(101);
		double worst = 0;
		for (int trial = 0; trial < 120; ++trial) {
			const std::size_t b = rng.integer(1, 3), c = rng.integer(2, 4), h = rng.integer(1, 6), w = rng.integer(1, 6);
			const double beta = trial % 3 == 0 ? 0.0 : rng.uniform(0.9, 0.9999);
			Tensor z = oracle::random_normal(rng, {b, c, h, w}, 3.0);
			Tensor y = oracle::random_one_hot(rng, b, c, h, w);
			const double got = cbce_loss(z, y, {beta}).item(), want = oracle::cbce(z, y, beta);
			worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
		}
		CHECK(worst <= 1e-12);
	}

	TEST_CASE("two-pixel example with uniform logits") {
		// One pixel per class, each weight 1, z = 1/2: loss = (1/2) * 2 * ln 2.
		Tensor z({1, 2, 1, 2}, 0.0);
		Tensor y({1, 2, 1, 2}, std::vector<double>{1, 0, 0, 1});
		CHECK(cbce_loss(z, y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
	}

	TEST_CASE("beta = 0 reduces to summed cross entropy over present classes / C") {
		SplitMix64 rng(5);
		Tensor z = oracle::random_normal(rng, {2, 3, 4, 4});
		Tensor y = oracle::random_one_hot(rng, 2, 3, 4, 4);
		Tensor p = naive_softmax(z);
		double s = 0;
		for (std::size_t i = 0; i < y.numel(); ++i)
			if (y.data()[i] == 1.0) s -= std::log(std::clamp(p.data()[i], 1e-6, 1 - 1e-6));
		CHECK(std::abs(cbce_loss(z, y, {0.0}).item() - s / 3.0 / 2.0) < 1e-12);
	}

	TEST_CASE("rejects non one-hot targets and bad beta") {
		Tensor z({1, 2, 2, 2}, 0.0);
		CHECK_THROWS_AS(cbce_loss(z, Tensor({1, 2, 2, 2}, 0.5)), std::invalid_argument);
		CHECK_THROWS_AS(cbce_loss(z, Tensor({1, 2, 2, 2}, 0.0)), std::invalid_argument);
		Tensor y({1, 2, 2, 2}, std::vector<double>{1, 1, 1, 1, 0, 0, 0, 0});
		CHECK_THROWS_AS(cbce_loss(z, y, {1.0}), std::invalid_argument);
		CHECK_THROWS_AS(cbce_loss(Tensor({1, 2, 2, 3}), y), std::invalid_argument);
	}
}

TEST_SUITE("mse") {
	TEST_CASE("matches the naive loop on random instances") {
		SplitMix64 rng(102);
		for (int trial = 0; trial < 120; ++trial) {
			const Shape s{std::size_t(rng.integer(1, 3)), 3, std::size_t(rng.integer(1, 8)), std::size_t(rng.integer(1, 8))};
			Tensor a = oracle::random_uniform(rng, s, 0, 1), b = oracle::random_uniform(rng, s, 0, 1);
			CHECK(std::abs(mse_loss(a, b).item() - oracle::mse(a, b)) <= 1e-12);
		}
	}

	TEST_CASE("example and shape errors") {
		CHECK(mse_loss(Tensor({2}, std::vector<double>{1, 3}), Tensor({2}, std::vector<double>{0, 0})).item() == 5.0);
		CHECK_THROWS_AS(mse_loss(Tensor({2}), Tensor({3})), std::invalid_argument);
	}
}

TEST_SUITE("rmi") {
	TEST_CASE("matches dense explicit algebra on random instances") {
		SplitMix64 rng(103);
		double worst_lb = 0, worst_total = 0;
		for (int trial = 0; trial < 100; ++trial) {
			const std::size_t b = rng.integer(1, 2), c = rng.integer(1, 3);
			const std::size_t h = 2 * rng.integer(3, 7), w = 2 * rng.integer(3, 7);
			Tensor p = naive_softmax(oracle::random_normal(rng, {b, c == 1 ? 2 : c, h, w}, 2.0));
			if (c == 1) p = slice_channels(p, 0, 1);
			Tensor y = oracle::random_one_hot(rng, b, c == 1 ? 2 : c, h, w);
			if (c == 1) y = slice_channels(y, 0, 1);
			const oracle::RmiParts want = oracle::rmi(p, y);
			worst_lb = std::max(worst_lb, std::abs(rmi_lower_bound(p, y).item() - want.lower_bound));
			worst_total = std::max(worst_total, std::abs(rmi_loss(p, y).item() - 0.5 * (want.bce + want.lower_bound)));
		}
		CHECK(worst_lb <= 1e-8);
		CHECK(worst_total <= 1e-8);
	}

	TEST_CASE("constant maps give half log eps") {
		Tensor p({1, 1, 10, 10}, 0.3), y({1, 1, 10, 10}, 1.0);
		CHECK(rmi_lower_bound(p, y).item() == doctest::Approx(0.5 * std::log(5e-4)).epsilon(1e-12));
	}

	TEST_CASE("a perfect prediction does no worse than ignoring the target") {
		SplitMix64 rng(104);
		for (int trial = 0; trial < 10; ++trial) {
			Tensor y = oracle::random_one_hot(rng, 1, 2, 12, 12);
			Tensor ignorant({1, 2, 12, 12}, 0.5);
			CHECK(rmi_lower_bound(y, y).item() <= rmi_lower_bound(ignorant, y).item());
		}
	}

	TEST_CASE("channel permutation leaves the loss unchanged") {
		SplitMix64 rng(105);
		Tensor p = naive_softmax(oracle::random_normal(rng, {1, 3, 12, 12}));
		Tensor y = oracle::random_one_hot(rng, 1, 3, 12, 12);
		auto perm = [](const Tensor& t) {
			return concat_channels({slice_channels(t, 2, 3), slice_channels(t, 0, 1), slice_channels(t, 1, 2)});
		};
		CHECK(std::abs(rmi_loss(p, y).item() - rmi_loss(perm(p), perm(y)).item()) < 1e-12);
	}

	TEST_CASE("too small inputs are rejected") {
		CHECK_THROWS(rmi_lower_bound(Tensor({1, 1, 4, 4}, 0.5), Tensor({1, 1, 4, 4}, 1.0)));
		CHECK_THROWS_AS(rmi_lower_bound(Tensor({1, 1, 8, 8}), Tensor({1, 1, 8, 6})), std::invalid_argument);
	}
}

TEST_SUITE("composite") {
	TEST_CASE("maf_loss is rmi of softmax plus mse") {
		SplitMix64 rng(106);
		Tensor z = oracle::random_normal(rng, {2, 2, 8, 8});
		Tensor y = oracle::random_one_hot(rng, 2, 2, 8, 8);
		Tensor sr = oracle::random_uniform(rng, {2, 3, 8, 8}, 0, 1), hr = oracle::random_uniform(rng, {2, 3, 8, 8}, 0, 1);
		const oracle::RmiParts r = oracle::rmi(naive_softmax(z), y);
		CHECK(std::abs(maf_loss(z, y, sr, hr).item() - (0.5 * r.bce + 0.5 * r.lower_bound + oracle::mse(sr, hr))) < 1e-8);
	}

	TEST_CASE("total loss composition per variant") {
		SplitMix64 rng(107);
		ForwardBundle b;
		b.o_seg = oracle::random_normal(rng, {1, 2, 8, 8});
		b.o_sr = oracle::random_uniform(rng, {1, 3, 8, 8}, 0, 1);
		b.o_fuseg = oracle::random_normal(rng, {1, 2, 8, 8});
		b.o_fusr = oracle::random_uniform(rng, {1, 3, 8, 8}, 0, 1);
		Tensor y = oracle::random_one_hot(rng, 1, 2, 8, 8);
		Tensor hr = oracle::random_uniform(rng, {1, 3, 8, 8}, 0, 1);
		const double c = cbce_loss(b.o_seg, y).item(), m = mse_loss(b.o_sr, hr).item();
		const double f = maf_loss(b.o_fuseg, y, b.o_fusr, hr).item();

		CHECK(total_loss(b, y, hr, Variant::Baseline).total.item() == c);
		CHECK(total_loss(b, y, hr, Variant::Interp).total.item() == c);
		CHECK(total_loss(b, y, hr, Variant::InterpSR).total.item() == c + m);
		LossBreakdown all = total_loss(b, y, hr, Variant::InterpSRMAF);
		CHECK(all.total.item() == c + m + f);
		CHECK(all.cbce == c);
		CHECK(all.mse == m);
		CHECK(all.maf == f);

		ForwardBundle missing;
		missing.o_seg = b.o_seg;
		CHECK_THROWS_AS(total_loss(missing, y, hr, Variant::InterpSR), std::invalid_argument);
	}
}
