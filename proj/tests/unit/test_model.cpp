#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "ssmaf/losses.hpp"
#include "ssmaf/model.hpp"
#include "ssmaf/trainer.hpp"

using namespace ssmaf;

namespace {

ModelConfig small_config(Variant v, int base = 4, int depth = 2) {
	ModelConfig c;
	c.base_width = base;
	c.depth = depth;
	c.fusion_dim = 8;
	c.sr_hidden = 8;
	c.variant = v;
	return c;
}

bool has_prefix(const std::set<std::string>& names, const std::string& prefix) {
	return std::any_of(names.begin(), names.end(), [&](const std::string& n) { return n.rfind(prefix, 0) == 0; });
}

}  // namespace

TEST_CASE("encoder widths and spatial reduction") {
	ModelConfig c = small_config(Variant::Baseline, 8, 3);
	SsmafModel m(c, 1);
	SplitMix64 rng(1);
	EncoderOutput enc = m.encode(oracle::random_normal(rng, {1, 3, 32, 32}));
	REQUIRE(enc.skips.size() == 3);
	CHECK(enc.skips[0].shape() == Shape{1, 8, 32, 32});
	CHECK(enc.skips[1].shape() == Shape{1, 16, 16, 16});
	CHECK(enc.skips[2].shape() == Shape{1, 32, 8, 8});
	CHECK(enc.features.same_storage(enc.skips[2]));
}

TEST_CASE("bundle contents per variant") {
	SplitMix64 rng(2);
	Tensor x = oracle::random_normal(rng, {2, 3, 8, 8});
	for (Variant v : {Variant::Baseline, Variant::Interp, Variant::InterpSR, Variant::InterpSRMAF}) {
		CAPTURE(variant_name(v));
		SsmafModel m(small_config(v), 3);
		ForwardBundle b = m.forward_train(x);
		const std::size_t s = variant_upsamples(v) ? 16 : 8;
		CHECK(b.o_seg.shape() == Shape{2, 2, s, s});
		CHECK(b.f_seg.shape() == Shape{2, 4, 8, 8});
		CHECK(b.o_sr.defined() == variant_has_sr(v));
		CHECK(b.f_sr.defined() == variant_has_sr(v));
		CHECK(b.o_fuseg.defined() == variant_has_maf(v));
		CHECK(b.o_fusr.defined() == variant_has_maf(v));
		if (b.o_sr.defined()) CHECK(b.o_sr.shape() == Shape{2, 3, 16, 16});
		if (b.o_fuseg.defined()) {
			CHECK(b.o_fuseg.shape() == b.o_seg.shape());
			CHECK(b.o_fusr.shape() == b.o_sr.shape());
		}
	}
}

TEST_CASE("variant parameter sets nest by name") {
	std::vector<std::set<std::string>> sets;
	for (Variant v : {Variant::Baseline, Variant::Interp, Variant::InterpSR, Variant::InterpSRMAF})
		sets.push_back(SsmafModel(small_config(v), 1).params().names());
	CHECK(sets[0] == sets[1]);
	CHECK(std::includes(sets[2].begin(), sets[2].end(), sets[1].begin(), sets[1].end()));
	CHECK(sets[2].size() > sets[1].size());
	CHECK(std::includes(sets[3].begin(), sets[3].end(), sets[2].begin(), sets[2].end()));
	CHECK(sets[3].size() > sets[2].size());
	CHECK(!has_prefix(sets[1], "dec_sr"));
	CHECK(has_prefix(sets[2], "dec_sr"));
	CHECK(!has_prefix(sets[2], "maf."));
	CHECK(has_prefix(sets[3], "maf."));
}

TEST_CASE("initialization is a function of the seed") {
	ModelConfig c = small_config(Variant::InterpSRMAF);
	SsmafModel a(c, 5), b(c, 5), d(c, 6);
	bool any_diff = false;
	for (const auto& [name, t] : a.params().params()) {
		CHECK(oracle::bit_equal(t, b.params().param(name)));
		any_diff = any_diff || !oracle::bit_equal(t, d.params().param(name));
	}
	CHECK(any_diff);
	// Shared parameters keep their values when the parameter set grows.
	SsmafModel base(small_config(Variant::Baseline), 5);
	for (const auto& [name, t] : base.params().params()) CHECK(oracle::bit_equal(t, a.params().param(name)));
}

TEST_CASE("fusion heads share storage with the stream heads") {
	ModelConfig c = small_config(Variant::InterpSRMAF);
	SsmafModel m(c, 7);
	SplitMix64 rng(7);
	Tensor x = oracle::random_normal(rng, {2, 3, 8, 8});
	Tensor target = oracle::random_one_hot(rng, 2, 2, 16, 16);
	Tensor hr = oracle::random_uniform(rng, {2, 3, 16, 16}, 0, 1);

	TrainConfig tc;
	OptimizerState st = OptimizerState::zeros_like(m.params());
	for (int step = 0; step < 100; ++step) {
		for (auto [n, p] : m.params().params()) p.clear_grad();
		Tape tape;
		TapeScope scope(tape);
		LossBreakdown l = total_loss(m.forward_train(x), target, hr, c.variant);
		tape.backward(l.total);
		sgd_step(m.params(), st, 0.01, tc);
	}
	// One velocity buffer per named parameter; no duplicate head parameters exist.
	CHECK(st.velocity.size() == m.params().params().size());
	CHECK(!has_prefix(m.params().names(), "maf.head"));

	// The heads applied to arbitrary features equal what the bundle's fusion outputs were built from.
	m.set_training(false);
	ForwardBundle b = m.forward_train(x);
	auto [seg_rw, sr_rw] = m.maf_forward(b.f_seg, b.f_sr);
	CHECK(oracle::bit_equal(m.seg_head(seg_rw), b.o_fuseg));
	CHECK(oracle::bit_equal(m.sr_head(sr_rw), b.o_fusr));
}

TEST_CASE("MAF output lies in the residual envelope [F, 2F]") {
	SsmafModel m(small_config(Variant::InterpSRMAF), 8);
	SplitMix64 rng(8);
	for (int trial = 0; trial < 5; ++trial) {
		Tensor f_seg = relu(oracle::random_normal(rng, {2, 4, 8, 8}));
		Tensor f_sr = relu(oracle::random_normal(rng, {2, 4, 8, 8}));
		auto [a, b] = m.maf_forward(f_seg, f_sr);
		for (std::size_t i = 0; i < a.numel(); ++i) {
			CHECK(a.data()[i] >= f_seg.data()[i]);
			CHECK(a.data()[i] <= 2 * f_seg.data()[i]);
			CHECK(b.data()[i] >= f_sr.data()[i]);
			CHECK(b.data()[i] <= 2 * f_sr.data()[i]);
		}
	}
}

TEST_CASE("saturated attention reaches the envelope ends") {
	SsmafModel m(small_config(Variant::InterpSRMAF), 9);
	SplitMix64 rng(9);
	Tensor x = oracle::random_normal(rng, {1, 3, 8, 8});
	Tensor f_seg = relu(oracle::random_normal(rng, {1, 4, 8, 8}));
	Tensor f_sr = relu(oracle::random_normal(rng, {1, 4, 8, 8}));
	Tensor& bs = m.params().param("maf.att_seg.bias");
	Tensor& br = m.params().param("maf.att_sr.bias");

	std::fill(bs.data().begin(), bs.data().end(), 1e6);
	std::fill(br.data().begin(), br.data().end(), 1e6);
	auto [hi_seg, hi_sr] = m.maf_forward(f_seg, f_sr);
	for (std::size_t i = 0; i < f_seg.numel(); ++i) {
		CHECK(hi_seg.data()[i] == 2 * f_seg.data()[i]);
		CHECK(hi_sr.data()[i] == 2 * f_sr.data()[i]);
	}

	std::fill(bs.data().begin(), bs.data().end(), -1e6);
	std::fill(br.data().begin(), br.data().end(), -1e6);
	auto [lo_seg, lo_sr] = m.maf_forward(f_seg, f_sr);
	CHECK(oracle::bit_equal(lo_seg, f_seg));
	CHECK(oracle::bit_equal(lo_sr, f_sr));

	m.set_training(false);
	ForwardBundle b = m.forward_train(x);
	CHECK(oracle::bit_equal(b.o_fuseg, b.o_seg));
	CHECK(oracle::bit_equal(b.o_fusr, b.o_sr));
}

TEST_CASE("split spatial convolution matches per-group naive dilated convolution") {
	ModelConfig c = small_config(Variant::InterpSRMAF);
	c.fusion_dim = 12;
	c.ssc_groups = 4;
	SsmafModel m(c, 10);
	m.set_training(false);
	SplitMix64 rng(10);
	Tensor fused = oracle::random_normal(rng, {2, 12, 9, 9});
	Tensor got = m.ssc_forward(fused);

	const std::size_t g = 3;
	for (std::size_t k = 0; k < 4; ++k) {
		Tensor w = m.params().param("maf.ssc.g" + std::to_string(k) + ".weight");
		CHECK(w.dim(2) == (k == 0 ? 1u : 3u));
		const int dil = k == 0 ? 1 : int(k);
		Tensor part({2, g, 9, 9});
		for (std::size_t b = 0; b < 2; ++b)
			for (std::size_t ch = 0; ch < g; ++ch)
				for (std::size_t i = 0; i < 9; ++i)
					for (std::size_t j = 0; j < 9; ++j) part.at(b, ch, i, j) = fused.at(b, k * g + ch, i, j);
		Tensor want = oracle::conv2d(part, w, nullptr, 1, k == 0 ? 0 : dil, dil);
		// eval-mode batch norm with fresh statistics: y = x / sqrt(1 + eps) * gamma + beta
		for (std::size_t b = 0; b < 2; ++b)
			for (std::size_t ch = 0; ch < g; ++ch)
				for (std::size_t i = 0; i < 9; ++i)
					for (std::size_t j = 0; j < 9; ++j) {
						const std::size_t c_all = k * g + ch;
						const double y = want.at(b, ch, i, j) / std::sqrt(1.0 + 1e-5) *
										m.params().param("maf.ssc.bn.gamma").data()[c_all] +
								m.params().param("maf.ssc.bn.beta").data()[c_all];
						CHECK(std::abs(got.at(b, c_all, i, j) - y) < 1e-12);
					}
	}
}

TEST_CASE("forward_infer returns eval-mode class probabilities") {
	ModelConfig c = small_config(Variant::InterpSRMAF);
	SsmafModel m(c, 11);
	SplitMix64 rng(11);
	Tensor x = oracle::random_normal(rng, {2, 3, 8, 8});
	// Move the running statistics away from their initial values.
	m.forward_train(x);
	REQUIRE(m.training());

	Tensor p = m.forward_infer(x);
	CHECK(m.training());
	CHECK(p.shape() == Shape{2, 2, 16, 16});
	for (std::size_t b = 0; b < 2; ++b)
		for (std::size_t i = 0; i < 16; ++i)
			for (std::size_t j = 0; j < 16; ++j) CHECK(std::abs(p.at(b, 0, i, j) + p.at(b, 1, i, j) - 1.0) <= 1e-12);

	m.set_training(false);
	Tensor manual = softmax_channels(m.forward_train(x).o_seg);
	CHECK(oracle::bit_equal(manual, p));

	// SR and MAF parameters do not influence inference.
	for (auto [name, t] : m.params().params())
		if (name.rfind("dec_sr", 0) == 0 || name.rfind("head_sr", 0) == 0 || name.rfind("maf.", 0) == 0)
			for (double& v : t.data()) v += 0.5;
	CHECK(oracle::bit_equal(m.forward_infer(x), p));
}

TEST_CASE("Baseline inference stays at input resolution") {
	SsmafModel m(small_config(Variant::Baseline), 12);
	Tensor p = m.forward_infer(Tensor({1, 3, 8, 8}, 0.3));
	CHECK(p.shape() == Shape{1, 2, 8, 8});
	CHECK(m.output_scale() == 1);
}

TEST_CASE("input validation") {
	SsmafModel m(small_config(Variant::InterpSRMAF, 4, 3), 13);
	CHECK_THROWS_AS(m.encode(Tensor({1, 3, 6, 8})), std::invalid_argument);
	CHECK_THROWS_AS(m.encode(Tensor({1, 1, 8, 8})), std::invalid_argument);
	CHECK_THROWS_AS(m.encode(Tensor({3, 8, 8})), std::invalid_argument);
	CHECK_THROWS_AS(m.maf_forward(Tensor({1, 4, 8, 8}), Tensor({1, 4, 4, 4})), std::invalid_argument);

	SsmafModel base(small_config(Variant::Baseline), 13);
	CHECK_THROWS_AS(base.forward_train(Tensor({1, 3, 8, 8}), Variant::InterpSR), std::invalid_argument);
	CHECK_THROWS_AS(base.decode_sr(base.encode(Tensor({1, 3, 8, 8}))), std::logic_error);

	ModelConfig bad = small_config(Variant::InterpSRMAF);
	bad.fusion_dim = 10;
	CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
	CHECK_THROWS_AS(parse_variant("unet"), std::invalid_argument);
	for (Variant v : {Variant::Baseline, Variant::Interp, Variant::InterpSR, Variant::InterpSRMAF})
		CHECK(parse_variant(variant_name(v)) == v);
}

TEST_CASE("batch-norm running statistics are model buffers") {
	SsmafModel m(small_config(Variant::Baseline), 14);
	const Tensor& rm = m.params().buffer("enc.s0.c1.bn.running_mean");
	const Tensor before = rm.clone();
	m.forward_train(Tensor({1, 3, 8, 8}, 1.0));
	CHECK(!oracle::bit_equal(rm, before));
}
