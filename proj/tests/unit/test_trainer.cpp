#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "ssmaf/trainer.hpp"

using namespace ssmaf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
	fs::path p = fs::temp_directory_path() / ("ssmaf_trainer_" + name);
	fs::remove_all(p);
	return p;
}

std::string slurp(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

ModelConfig tiny_model(Variant v = Variant::InterpSRMAF) {
	ModelConfig c;
	c.base_width = 4;
	c.depth = 2;
	c.fusion_dim = 8;
	c.sr_hidden = 8;
	c.variant = v;
	return c;
}

const Dataset& tiny_data() {
	static const Dataset d = [] {
		SynthParams p;
		p.hr_height = p.hr_width = 32;
		p.lesion_radius_max = 6;
		return make_dataset(p, 4, 2);
	}();
	return d;
}

TrainConfig short_run(int epochs) {
	TrainConfig t;
	t.epochs = epochs;
	t.batch_size = 2;
	t.eval_every = 2;
	t.checkpoint_every = 3;
	return t;
}

}  // namespace

TEST_CASE("poly learning rate values") {
	TrainConfig c;
	CHECK(poly_lr(0, 100, c) == 0.01);
	CHECK(poly_lr(100, 100, c) == 0.0);
	CHECK(std::abs(poly_lr(50, 100, c) - 0.0053588673126814658) / 0.0053588673126814658 < 1e-9);
	for (std::size_t i = 1; i <= 100; ++i) CHECK(poly_lr(i, 100, c) <= poly_lr(i - 1, 100, c));
	CHECK_THROWS_AS(poly_lr(101, 100, c), std::invalid_argument);
}

TEST_CASE("sgd with momentum examples") {
	TrainConfig c;
	c.weight_decay = 0.0;
	ParamStore ps;
	Tensor& w = ps.add_param("w", {1}, false);
	w.data()[0] = 1.0;
	OptimizerState st = OptimizerState::zeros_like(ps);
	w.grad_buffer()[0] = 1.0;
	sgd_step(ps, st, 0.1, c);
	CHECK(w.data()[0] == doctest::Approx(0.9).epsilon(1e-15));
	sgd_step(ps, st, 0.1, c);
	CHECK(w.data()[0] == doctest::Approx(0.71).epsilon(1e-15));
}

TEST_CASE("weight decay applies only to decaying parameters") {
	TrainConfig c;
	ParamStore ps;
	Tensor& w = ps.add_param("conv.weight", {1}, true);
	Tensor& b = ps.add_param("conv.bias", {1}, false);
	w.data()[0] = b.data()[0] = 1.0;
	w.zero_grad();
	b.zero_grad();
	OptimizerState st = OptimizerState::zeros_like(ps);
	sgd_step(ps, st, 0.01, c);
	CHECK(w.data()[0] == doctest::Approx(1.0 - 0.01 * 1e-4).epsilon(1e-15));
	CHECK(b.data()[0] == 1.0);
}

TEST_CASE("sgd rejects parameters without gradients") {
	ParamStore ps;
	ps.add_param("w", {2}, true);
	OptimizerState st = OptimizerState::zeros_like(ps);
	CHECK_THROWS_AS(sgd_step(ps, st, 0.1, TrainConfig{}), TrainingError);
}

TEST_CASE("epoch order is a seeded permutation") {
	auto a = epoch_order(1, 0, 10), b = epoch_order(1, 0, 10), c = epoch_order(1, 1, 10);
	CHECK(a == b);
	CHECK(a != c);
	auto sorted = a;
	std::sort(sorted.begin(), sorted.end());
	for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
	CHECK(steps_per_epoch(5, 2) == 3);
	CHECK(steps_per_epoch(2, 2) == 1);
}

TEST_CASE("one epoch of two samples at batch two is a single step") {
	Dataset d;
	d.train = {tiny_data().train[0], tiny_data().train[1]};
	TrainConfig t;
	t.epochs = 1;
	const fs::path out = scratch("single");
	TrainSummary s = train(tiny_model(Variant::Baseline), t, {}, d, out);
	CHECK(s.iterations == 1);
	CHECK(s.max_iter == 1);
	CHECK(fs::exists(out / "final.ckpt"));
	fs::remove_all(out);
}

TEST_CASE("training is deterministic and resume is bit-exact") {
	const fs::path a = scratch("det_a"), b = scratch("det_b"), r = scratch("det_r");
	train(tiny_model(), short_run(4), {}, tiny_data(), a);
	train(tiny_model(), short_run(4), {}, tiny_data(), b);
	CHECK(slurp(a / "final.ckpt") == slurp(b / "final.ckpt"));
	CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));

	TrainOptions stop;
	stop.stop_after = 3;
	TrainSummary partial = train(tiny_model(), short_run(4), {}, tiny_data(), r, stop);
	CHECK(partial.iterations == 3);
	TrainSummary rest = resume(partial.final_checkpoint, tiny_data(), r);
	CHECK(rest.iterations == 8);
	CHECK(slurp(a / "final.ckpt") == slurp(r / "final.ckpt"));
	CHECK(slurp(a / "metrics.jsonl") == slurp(r / "metrics.jsonl"));
	CHECK(slurp(a / "checkpoints" / "iter_000006.ckpt") == slurp(r / "checkpoints" / "iter_000006.ckpt"));

	// Every log line is a structured record.
	std::ifstream log(a / "metrics.jsonl");
	std::string line;
	std::size_t n = 0;
	while (std::getline(log, line)) {
		auto j = nlohmann::json::parse(line);
		CHECK(j["iter"].get<std::size_t>() == ++n);
		for (const char* k : {"lr", "loss_total", "loss_cbce", "loss_mse", "loss_maf", "dice", "iou", "recall", "auc_pr"})
			CHECK(j.contains(k));
		CHECK(j["dice"].is_null() == (n % 2 != 0));
	}
	CHECK(n == 8);
	for (const auto& p : {a, b, r}) fs::remove_all(p);
}

TEST_CASE("different seeds give different parameters") {
	const fs::path a = scratch("seed_a"), b = scratch("seed_b");
	TrainConfig t = short_run(1);
	train(tiny_model(), t, {}, tiny_data(), a);
	t.seed = 2;
	train(tiny_model(), t, {}, tiny_data(), b);
	CHECK(slurp(a / "final.ckpt") != slurp(b / "final.ckpt"));
	fs::remove_all(a);
	fs::remove_all(b);
}

TEST_CASE("checkpoint encoding round trip and validation") {
	SsmafModel m(tiny_model(), 3);
	OptimizerState st = OptimizerState::zeros_like(m.params());
	Checkpoint c = make_checkpoint(m, &st, TrainConfig{}, LossConfig{}, 17);
	const std::string bytes = encode_checkpoint(c);
	Checkpoint d = decode_checkpoint(bytes);
	CHECK(d.iteration == 17);
	CHECK(d.model == m.config());
	CHECK(encode_checkpoint(d) == bytes);

	SsmafModel restored = model_from_checkpoint(d);
	for (const auto& [name, t] : m.params().params()) CHECK(oracle::bit_equal(t, restored.params().param(name)));

	CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)));
	CHECK_THROWS(decode_checkpoint(bytes + "x"));
	CHECK_THROWS(decode_checkpoint("NOTACKPT"));
	std::string bad_version = bytes;
	bad_version[6] = 9;
	CHECK_THROWS(decode_checkpoint(bad_version));

	SsmafModel other(tiny_model(Variant::Baseline), 3);
	CHECK_THROWS(restore_checkpoint(d, other, nullptr));
}

TEST_CASE("evaluation composes from predictions") {
	SsmafModel m(tiny_model(), 4);
	const auto& samples = tiny_data().test;
	EvalResult direct = evaluate(m, samples, 0.5);
	std::vector<Tensor> gts;
	for (const auto& s : samples) gts.push_back(target_mask(s, Variant::InterpSRMAF));
	EvalResult composed = evaluate_predictions(predict(m, samples), gts, 0.5);
	CHECK(direct.pooled.dice == composed.pooled.dice);
	CHECK(direct.mean.auc_pr == composed.mean.auc_pr);
	CHECK(direct.per_image.size() == samples.size());

	EvalResult self = evaluate_predictions(gts, gts, 0.5);
	CHECK(self.pooled.dice == 1.0);
	CHECK(self.pooled.iou == 1.0);
	CHECK(self.pooled.recall == 1.0);
	CHECK(self.pooled.auc_pr == 1.0);

	std::vector<Tensor> blank;
	for (const auto& g : gts) blank.push_back(Tensor(g.shape(), 0.0));
	CHECK(evaluate_predictions(blank, gts, 0.5).pooled.recall == 0.0);
	CHECK(target_mask(samples[0], Variant::Baseline).shape() == Shape{16, 16});
}

TEST_CASE("training rejects an empty training split") {
	Dataset d;
	d.test = tiny_data().test;
	CHECK_THROWS_AS(train(tiny_model(), short_run(1), {}, d, scratch("empty")), TrainingError);
}

TEST_CASE("the loss decreases over ten steps for most seeds") {
	int decreased = 0;
	Dataset d;
	d.train = {tiny_data().train[0], tiny_data().train[1]};
	for (std::uint64_t seed = 1; seed <= 10; ++seed) {
		const fs::path out = scratch("descent");
		TrainConfig t;
		t.epochs = 10;
		t.seed = seed;
		train(tiny_model(), t, {}, d, out);
		std::ifstream log(out / "metrics.jsonl");
		std::string first, line, last;
		std::getline(log, first);
		while (std::getline(log, line)) last = line;
		const double l0 = nlohmann::json::parse(first)["loss_total"].get<double>();
		const double l9 = nlohmann::json::parse(last)["loss_total"].get<double>();
		decreased += l9 < l0;
		fs::remove_all(out);
	}
	CHECK(decreased >= 9);
}
