// Command-line driver: dataset generation, training, evaluation, inference, gradient checks and
// the variant ablation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssmaf/config.hpp"
#include "ssmaf/gradcheck.hpp"
#include "ssmaf/losses.hpp"
#include "ssmaf/model.hpp"
#include "ssmaf/netpbm.hpp"
#include "ssmaf/synth.hpp"
#include "ssmaf/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssmaf;

namespace {

struct Settings {
	ModelConfig model;
	TrainConfig train;
	LossConfig loss;
	SynthParams synth;
	unsigned long n_train = 16;
	unsigned long n_test = 8;
};

struct CommonArgs {
	std::string config_path;
	std::vector<std::string> overrides;
	std::string variant;
	std::optional<std::uint64_t> seed;
	std::optional<int> epochs;
	std::optional<double> threshold;
	std::string out;
	std::string checkpoint;
	std::string data;
};

/// Config file, then positional overrides, then dedicated flags; unknown keys are rejected.
Settings resolve(const CommonArgs& args, bool seed_is_synth) {
	KeyValueConfig cfg;
	if (!args.config_path.empty()) {
		if (!fs::exists(args.config_path)) throw std::runtime_error("config file not found: " + args.config_path);
		cfg = KeyValueConfig::load(args.config_path);
	}
	for (const std::string& o : args.overrides) cfg.set_override(o);
	if (!args.variant.empty()) cfg.set("model.variant", args.variant);
	if (args.seed) cfg.set(seed_is_synth ? "synth.seed" : "train.seed", std::to_string(*args.seed));
	if (args.epochs) cfg.set("train.epochs", std::to_string(*args.epochs));
	if (args.threshold) cfg.set("train.threshold", format_double(*args.threshold));

	std::set<std::string> known = ModelConfig::keys();
	for (const auto* keys : {&TrainConfig::keys(), &LossConfig::keys(), &SynthParams::keys()})
		known.insert(keys->begin(), keys->end());
	known.insert({"data.n_train", "data.n_test"});
	cfg.reject_unknown(known);

	Settings s;
	s.model.load(cfg);
	s.train.load(cfg);
	s.loss.load(cfg);
	s.synth.load(cfg);
	cfg.read("data.n_train", s.n_train);
	cfg.read("data.n_test", s.n_test);
	s.model.validate();
	s.train.validate();
	s.loss.cbce.validate();
	s.loss.rmi.validate();
	return s;
}

void add_common(CLI::App* app, CommonArgs& a) {
	app->add_option("--config", a.config_path, "key=value config file with [model], [train], [loss], [synth] sections");
	app->add_option("overrides", a.overrides, "section.key=value overrides");
}

Dataset load_data(const std::string& dir) {
	if (dir.empty()) throw std::runtime_error("--data is required");
	if (!fs::exists(fs::path(dir) / "manifest.txt"))
		throw std::runtime_error("dataset manifest not found: " + (fs::path(dir) / "manifest.txt").string());
	return read_dataset(dir);
}

Checkpoint load_ckpt(const std::string& path, const std::string& variant) {
	if (path.empty()) throw std::runtime_error("--checkpoint is required");
	if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
	Checkpoint ckpt = load_checkpoint(path);
	if (!variant.empty() && parse_variant(variant) != ckpt.model.variant)
		throw std::runtime_error("checkpoint " + path + " holds a " + std::string(variant_name(ckpt.model.variant)) +
				" model, not " + variant);
	return ckpt;
}

const std::vector<Sample>& split_of(const Dataset& d, const std::string& split) {
	if (split == "train") return d.train;
	if (split == "test") return d.test;
	throw std::runtime_error("unknown split '" + split + "' (expected train or test)");
}

void print_report(std::ostream& os, const std::string& prefix, const MetricsReport& m) {
	os << prefix << "dice=" << m.dice << ' ' << prefix << "iou=" << m.iou << ' ' << prefix << "recall=" << m.recall << ' '
	   << prefix << "auc_pr=" << m.auc_pr;
}

nlohmann::ordered_json report_json(const MetricsReport& m) {
	return {{"dice", m.dice}, {"iou", m.iou}, {"recall", m.recall}, {"auc_pr", m.auc_pr},
			{"auc_degenerate", m.auc_degenerate}};
}

/// Red: predicted only; green: ground truth only; yellow: both; elsewhere the input image.
Tensor overlay(const Tensor& image, const Tensor& pred, const Tensor& gt) {
	const std::size_t h = pred.dim(0), w = pred.dim(1);
	Tensor out({3, h, w});
	for (std::size_t y = 0; y < h; ++y)
		for (std::size_t x = 0; x < w; ++x) {
			const bool p = pred.data()[y * w + x] > 0.5, g = gt.data()[y * w + x] > 0.5;
			for (std::size_t c = 0; c < 3; ++c) {
				double v = image.data()[(c * h + y) * w + x];
				if (p || g) v = (c == 0 && p) || (c == 1 && g) ? 1.0 : 0.0;
				out.data()[(c * h + y) * w + x] = v;
			}
		}
	return out;
}

int cmd_synth(const CommonArgs& a, std::optional<unsigned long> n_train, std::optional<unsigned long> n_test) {
	Settings s = resolve(a, true);
	if (n_train) s.n_train = *n_train;
	if (n_test) s.n_test = *n_test;
	if (a.out.empty()) throw std::runtime_error("--out is required");
	if (s.n_train == 0) throw std::runtime_error("empty training split");
	s.synth.validate(s.model.depth);
	write_dataset(make_dataset(s.synth, s.n_train, s.n_test), a.out);
	std::cout << "train: " << s.n_train << "\ntest: " << s.n_test << "\nwritten to " << a.out << '\n';
	return 0;
}

int cmd_train(const CommonArgs& a, const std::string& resume_from, std::optional<std::size_t> stop_after, bool verbose) {
	if (a.out.empty()) throw std::runtime_error("--out is required");
	const Dataset data = load_data(a.data);
	TrainOptions opt;
	opt.stop_after = stop_after;
	opt.verbose = verbose;
	TrainSummary summary;
	if (!resume_from.empty()) {
		load_ckpt(resume_from, a.variant);
		summary = resume(resume_from, data, a.out, opt);
	} else {
		const Settings s = resolve(a, false);
		summary = train(s.model, s.train, s.loss, data, a.out, opt);
	}
	std::cout << "iterations=" << summary.iterations << "/" << summary.max_iter << '\n'
	          << "final_loss=" << std::setprecision(8) << summary.final_loss << '\n'
	          << "checkpoint=" << summary.final_checkpoint.string() << '\n';
	if (summary.final_eval) {
		print_report(std::cout, "test_", summary.final_eval->pooled);
		std::cout << '\n';
	}
	return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& split) {
	const Checkpoint ckpt = load_ckpt(a.checkpoint, a.variant);
	const Dataset data = load_data(a.data);
	SsmafModel model = model_from_checkpoint(ckpt);
	const double threshold = a.threshold.value_or(ckpt.train.threshold);
	const EvalResult r = evaluate(model, split_of(data, split), threshold);
	const std::vector<Sample>& samples = split_of(data, split);
	std::cout << std::setprecision(6);
	for (std::size_t i = 0; i < samples.size(); ++i) {
		std::cout << "image=" << sample_id(samples[i].index) << ' ';
		print_report(std::cout, "", r.per_image[i]);
		std::cout << '\n';
	}
	std::cout << "variant=" << variant_name(ckpt.model.variant) << " split=" << split << " images=" << samples.size()
	          << " threshold=" << threshold << ' ';
	print_report(std::cout, "pooled_", r.pooled);
	std::cout << ' ';
	print_report(std::cout, "mean_", r.mean);
	std::cout << '\n';
	if (!a.out.empty()) {
		fs::create_directories(a.out);
		nlohmann::ordered_json j;
		j["variant"] = variant_name(ckpt.model.variant);
		j["split"] = split;
		j["threshold"] = threshold;
		j["pooled"] = report_json(r.pooled);
		j["mean"] = report_json(r.mean);
		for (const MetricsReport& m : r.per_image) j["per_image"].push_back(report_json(m));
		const fs::path path = fs::path(a.out) / "metrics.json";
		std::ofstream out(path);
		if (!out) throw std::runtime_error(path.string() + ": cannot write");
		out << j.dump(2) << '\n';
	}
	return 0;
}

int cmd_infer(const CommonArgs& a, const std::string& split) {
	if (a.out.empty()) throw std::runtime_error("--out is required");
	const Checkpoint ckpt = load_ckpt(a.checkpoint, a.variant);
	const Dataset data = load_data(a.data);
	SsmafModel model = model_from_checkpoint(ckpt);
	const double threshold = a.threshold.value_or(ckpt.train.threshold);
	const std::vector<Sample>& samples = split_of(data, split);
	const std::vector<Tensor> probs = predict(model, samples);
	const fs::path out(a.out);
	fs::create_directories(out / "masks");
	fs::create_directories(out / "overlays");
	for (std::size_t i = 0; i < samples.size(); ++i) {
		Tensor mask(probs[i].shape());
		for (std::size_t k = 0; k < mask.numel(); ++k) mask.data()[k] = probs[i].data()[k] >= threshold ? 1.0 : 0.0;
		const std::string id = sample_id(samples[i].index);
		write_netpbm(out / "masks" / (id + ".pgm"), mask);
		const bool hr = variant_upsamples(ckpt.model.variant);
		const Tensor& base = hr ? samples[i].hr_image : samples[i].lr_image;
		write_netpbm(out / "overlays" / (id + ".ppm"), overlay(base, mask, target_mask(samples[i], ckpt.model.variant)));
	}
	std::cout << "wrote " << samples.size() << " masks and overlays to " << a.out << '\n';
	return 0;
}

int cmd_gradcheck(std::size_t trials, const std::vector<std::string>& faults, bool skip_model) {
	GradcheckOptions opt;
	opt.trials = trials;
	opt.corrupt.insert(faults.begin(), faults.end());
	opt.model_check = !skip_model;
	bool ok = true;
	for (const GradcheckReport& r : run_gradcheck(opt)) {
		std::cout << std::left << std::setw(22) << r.op << " worst_rel_err=" << std::scientific << std::setprecision(3)
		          << r.worst << " tol=" << r.tolerance << std::defaultfloat << " trials=" << r.trials
		          << " coords=" << r.coords << (r.passed ? "  ok" : "  FAIL") << '\n';
		ok = ok && r.passed;
	}
	std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
	return ok ? 0 : 1;
}

int cmd_ablate(const CommonArgs& a, const std::vector<std::uint64_t>& seeds, unsigned threads) {
	if (a.out.empty()) throw std::runtime_error("--out is required");
	const Settings s = resolve(a, false);
	const Dataset data = load_data(a.data);
	const AblationResult r = run_ablation(s.model, s.train, s.loss, data, seeds, a.out, threads);
	std::cout << "median test metrics over " << seeds.size() << " seed(s); baseline at input resolution, others at x"
	          << s.model.upscale << "\n"
	          << r.table();
	return 0;
}

}  // namespace

int main(int argc, char** argv) {
	CLI::App app{"Dual-stream lesion segmentation with super-resolution and multi-scale attention fusion"};
	app.require_subcommand(1, 1);

	CommonArgs args;
	auto variant_check = CLI::IsMember({"baseline", "interp", "interp_sr", "interp_sr_maf"});

	auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
	add_common(synth, args);
	std::optional<unsigned long> n_train, n_test;
	synth->add_option("--out", args.out, "output directory")->required();
	synth->add_option("--seed", args.seed, "generator seed");
	synth->add_option("--n-train", n_train, "training samples");
	synth->add_option("--n-test", n_test, "test samples");

	auto* train = app.add_subcommand("train", "train a model");
	add_common(train, args);
	std::string resume_from;
	std::optional<std::size_t> stop_after;
	bool verbose = false;
	train->add_option("--data", args.data, "dataset directory")->required();
	train->add_option("--out", args.out, "run directory")->required();
	train->add_option("--variant", args.variant)->check(variant_check);
	train->add_option("--seed", args.seed);
	train->add_option("--epochs", args.epochs);
	train->add_option("--threshold", args.threshold);
	train->add_option("--resume", resume_from, "continue from this checkpoint");
	train->add_option("--stop-after", stop_after, "stop after this many optimizer steps");
	train->add_flag("-v,--verbose", verbose);

	std::string split = "test";
	auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
	eval->add_option("--data", args.data)->required();
	eval->add_option("--checkpoint", args.checkpoint)->required();
	eval->add_option("--variant", args.variant)->check(variant_check);
	eval->add_option("--threshold", args.threshold);
	eval->add_option("--split", split);
	eval->add_option("--out", args.out, "also write metrics.json here");

	auto* infer = app.add_subcommand("infer", "write predicted masks and overlays");
	infer->add_option("--data", args.data)->required();
	infer->add_option("--checkpoint", args.checkpoint)->required();
	infer->add_option("--variant", args.variant)->check(variant_check);
	infer->add_option("--threshold", args.threshold);
	infer->add_option("--split", split);
	infer->add_option("--out", args.out)->required();

	auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
	std::size_t trials = 20;
	std::vector<std::string> faults;
	bool skip_model = false;
	gradcheck->add_option("--trials", trials);
	gradcheck->add_option("--inject-fault", faults, "perturb the analytic gradient of these ops");
	gradcheck->add_flag("--skip-model", skip_model);

	auto* ablate = app.add_subcommand("ablate", "train all four variants over several seeds");
	add_common(ablate, args);
	std::vector<std::uint64_t> seeds = {1, 2, 3};
	unsigned threads = 0;
	ablate->add_option("--data", args.data)->required();
	ablate->add_option("--out", args.out)->required();
	ablate->add_option("--seeds", seeds)->delimiter(',');
	ablate->add_option("--epochs", args.epochs);
	ablate->add_option("--threads", threads);

	CLI11_PARSE(app, argc, argv);

	try {
		if (synth->parsed()) return cmd_synth(args, n_train, n_test);
		if (train->parsed()) return cmd_train(args, resume_from, stop_after, verbose);
		if (eval->parsed()) return cmd_eval(args, split);
		if (infer->parsed()) return cmd_infer(args, split);
		if (gradcheck->parsed()) return cmd_gradcheck(trials, faults, skip_model);
		if (ablate->parsed()) return cmd_ablate(args, seeds, threads);
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << '\n';
		return 1;
	}
	return 1;
}
