#include "ssmaf/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ssmaf/ops.hpp"
#include "ssmaf/random.hpp"

namespace ssmaf {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
	auto fail = [](const std::string& m) { throw std::invalid_argument("invalid train config: " + m); };
	if (!(init_lr > 0.0)) fail("init_lr must be > 0");
	if (!(power >= 0.0)) fail("power must be >= 0");
	if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0,1)");
	if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
	if (epochs < 1) fail("epochs must be >= 1");
	if (batch_size < 1) fail("batch_size must be >= 1");
	if (!(threshold >= 0.0 && threshold <= 1.0)) fail("threshold must lie in [0,1]");
}

const std::set<std::string>& TrainConfig::keys() {
	static const std::set<std::string> k = {"train.init_lr", "train.power", "train.momentum", "train.weight_decay",
			"train.epochs", "train.batch_size", "train.seed", "train.eval_every", "train.checkpoint_every",
			"train.threshold"};
	return k;
}

void TrainConfig::store(KeyValueConfig& cfg) const {
	cfg.set("train.init_lr", format_double(init_lr));
	cfg.set("train.power", format_double(power));
	cfg.set("train.momentum", format_double(momentum));
	cfg.set("train.weight_decay", format_double(weight_decay));
	cfg.set("train.epochs", std::to_string(epochs));
	cfg.set("train.batch_size", std::to_string(batch_size));
	cfg.set("train.seed", std::to_string(seed));
	cfg.set("train.eval_every", std::to_string(eval_every));
	cfg.set("train.checkpoint_every", std::to_string(checkpoint_every));
	cfg.set("train.threshold", format_double(threshold));
}

void TrainConfig::load(const KeyValueConfig& cfg) {
	cfg.read("train.init_lr", init_lr);
	cfg.read("train.power", power);
	cfg.read("train.momentum", momentum);
	cfg.read("train.weight_decay", weight_decay);
	cfg.read("train.epochs", epochs);
	cfg.read("train.batch_size", batch_size);
	cfg.read("train.seed", seed);
	cfg.read("train.eval_every", eval_every);
	cfg.read("train.checkpoint_every", checkpoint_every);
	cfg.read("train.threshold", threshold);
}

double poly_lr(std::size_t iter, std::size_t max_iter, const TrainConfig& cfg) {
	if (max_iter == 0) throw std::invalid_argument("poly_lr: max_iter must be > 0");
	if (iter > max_iter)
		throw std::invalid_argument("poly_lr: iter " + std::to_string(iter) + " exceeds max_iter " + std::to_string(max_iter));
	const double frac = static_cast<double>(iter) / static_cast<double>(max_iter);
	return cfg.init_lr * std::pow(1.0 - frac, cfg.power);
}

OptimizerState OptimizerState::zeros_like(const ParamStore& params) {
	OptimizerState s;
	for (const auto& [name, p] : params.params()) s.velocity.emplace(name, Tensor(p.shape(), 0.0));
	return s;
}

void sgd_step(ParamStore& params, OptimizerState& state, double lr, const TrainConfig& cfg) {
	for (const auto& [name, p_const] : params.params()) {
		Tensor p = p_const;  // shared handle
		if (!p.has_grad()) throw TrainingError("sgd_step: parameter " + name + " has no gradient");
		auto vit = state.velocity.find(name);
		if (vit == state.velocity.end()) vit = state.velocity.emplace(name, Tensor(p.shape(), 0.0)).first;
		if (vit->second.shape() != p.shape())
			throw TrainingError("sgd_step: velocity for " + name + " has shape " + shape_str(vit->second.shape()));
		const double wd = params.decays(name) ? cfg.weight_decay : 0.0;
		auto w = p.data();
		auto g = std::as_const(p).grad();
		auto v = vit->second.data();
		for (std::size_t i = 0; i < w.size(); ++i) {
			v[i] = cfg.momentum * v[i] + (g[i] + wd * w[i]);
			w[i] -= lr * v[i];
		}
	}
}

// ---------------------------------------------------------------------------------------------

Tensor target_mask(const Sample& sample, Variant variant) {
	return variant_upsamples(variant) ? sample.hr_mask : downsample_mask(sample.hr_mask);
}

EvalResult evaluate_predictions(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts, double threshold) {
	if (scores.empty()) throw std::invalid_argument("evaluate: empty split");
	if (scores.size() != gts.size()) throw std::invalid_argument("evaluate: score and ground-truth counts differ");
	EvalResult r;
	ConfusionCounts pooled;
	std::vector<double> all_scores, all_gt;
	for (std::size_t i = 0; i < scores.size(); ++i) {
		if (scores[i].numel() != gts[i].numel())
			throw std::invalid_argument("evaluate: image " + std::to_string(i) + " prediction " +
					shape_str(scores[i].shape()) + " vs ground truth " + shape_str(gts[i].shape()));
		r.per_image.push_back(evaluate_scores(scores[i].data(), gts[i].data(), threshold));
		std::vector<double> pred(scores[i].numel());
		std::transform(scores[i].data().begin(), scores[i].data().end(), pred.begin(),
				[threshold](double s) { return s >= threshold ? 1.0 : 0.0; });
		pooled += confusion(pred, gts[i].data());
		all_scores.insert(all_scores.end(), scores[i].data().begin(), scores[i].data().end());
		all_gt.insert(all_gt.end(), gts[i].data().begin(), gts[i].data().end());
	}
	const double n = static_cast<double>(r.per_image.size());
	for (const MetricsReport& m : r.per_image) {
		r.mean.dice += m.dice / n;
		r.mean.iou += m.iou / n;
		r.mean.recall += m.recall / n;
		r.mean.auc_pr += m.auc_pr / n;
		r.mean.auc_degenerate = r.mean.auc_degenerate || m.auc_degenerate;
	}
	const OverlapScores s = dice_iou_recall(pooled);
	const AucResult auc = auc_pr(all_scores, all_gt);
	r.pooled = MetricsReport{s.dice, s.iou, s.recall, auc.value, auc.degenerate};
	return r;
}

namespace {

Tensor stack(const std::vector<const Tensor*>& items) {
	Shape shape = items.front()->shape();
	if (shape.size() == 2) shape.insert(shape.begin(), 1);
	const std::size_t per = shape_numel(shape);
	shape.insert(shape.begin(), items.size());
	Tensor out(shape);
	auto dst = out.data();
	for (std::size_t i = 0; i < items.size(); ++i) {
		if (items[i]->numel() != per) throw std::invalid_argument("batch items differ in size");
		std::copy(items[i]->data().begin(), items[i]->data().end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
	}
	return out;
}

/// Binary mask [B,1,H,W] -> one-hot [B,2,H,W] (background, lesion).
Tensor one_hot(const Tensor& mask) {
	const std::size_t b = mask.dim(0), h = mask.dim(2), w = mask.dim(3);
	Tensor out({b, 2, h, w});
	for (std::size_t n = 0; n < b; ++n)
		for (std::size_t y = 0; y < h; ++y)
			for (std::size_t x = 0; x < w; ++x) {
				const double fg = mask.at(n, 0, y, x) > 0.5 ? 1.0 : 0.0;
				out.at(n, 0, y, x) = 1.0 - fg;
				out.at(n, 1, y, x) = fg;
			}
	return out;
}

void check_dataset(const ModelConfig& cfg, const Dataset& data) {
	if (data.train.empty()) throw TrainingError("empty training split");
	if (cfg.num_classes != 2) throw TrainingError("the lesion datasets have 2 classes; model.num_classes must be 2");
	for (const auto* split : {&data.train, &data.test})
		for (const Sample& s : *split) {
			const Shape& lr = s.lr_image.shape();
			const Shape& hr = s.hr_mask.shape();
			if (lr.size() != 3 || lr[0] != static_cast<std::size_t>(cfg.in_channels) || hr.size() != 2 ||
					hr[0] != lr[1] * static_cast<std::size_t>(cfg.upscale) ||
					hr[1] != lr[2] * static_cast<std::size_t>(cfg.upscale))
				throw TrainingError("sample " + sample_id(s.index) + ": image " + shape_str(lr) + " and mask " +
						shape_str(hr) + " do not fit a x" + std::to_string(cfg.upscale) + " model with " +
						std::to_string(cfg.in_channels) + " input channels");
		}
}

using json = nlohmann::ordered_json;

json metrics_record(std::size_t iter, double lr, const LossBreakdown& loss, const std::optional<EvalResult>& eval) {
	json rec;
	rec["iter"] = iter;
	rec["lr"] = lr;
	rec["loss_total"] = loss.total.item();
	rec["loss_cbce"] = loss.cbce;
	rec["loss_mse"] = loss.mse;
	rec["loss_maf"] = loss.maf;
	if (eval) {
		rec["dice"] = eval->pooled.dice;
		rec["iou"] = eval->pooled.iou;
		rec["recall"] = eval->pooled.recall;
		rec["auc_pr"] = eval->pooled.auc_pr;
	} else {
		for (const char* k : {"dice", "iou", "recall", "auc_pr"}) rec[k] = nullptr;
	}
	return rec;
}

std::string checkpoint_name(std::size_t iter) {
	std::ostringstream ss;
	ss << "iter_" << std::setw(6) << std::setfill('0') << iter << ".ckpt";
	return ss.str();
}

TrainSummary run_loop(SsmafModel& model, OptimizerState& opt, const TrainConfig& cfg, const LossConfig& loss_cfg,
		const Dataset& data, const fs::path& out_dir, std::size_t start_iter, const TrainOptions& options) {
	const Variant variant = model.config().variant;
	const std::size_t n = data.train.size();
	const std::size_t spe = steps_per_epoch(n, cfg.batch_size);
	const std::size_t max_iter = static_cast<std::size_t>(cfg.epochs) * spe;
	if (start_iter > max_iter)
		throw TrainingError("checkpoint iteration " + std::to_string(start_iter) + " exceeds max_iter " +
				std::to_string(max_iter));

	const fs::path log_path = out_dir / "metrics.jsonl";
	std::ofstream log(log_path, std::ios::app);
	if (!log) throw TrainingError(log_path.string() + ": cannot open metrics log");

	TrainSummary summary;
	summary.max_iter = max_iter;
	summary.iterations = start_iter;
	std::vector<std::size_t> order;
	std::size_t order_epoch = static_cast<std::size_t>(-1);

	for (std::size_t it = start_iter; it < max_iter; ++it) {
		if (options.stop_after && it >= *options.stop_after) break;
		const std::size_t epoch = it / spe, batch = it % spe;
		if (epoch != order_epoch) {
			order = epoch_order(cfg.seed, epoch, n);
			order_epoch = epoch;
		}
		const std::size_t lo = batch * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
		std::vector<const Tensor*> xs, hrs;
		std::vector<Tensor> masks;
		std::vector<std::size_t> ids;
		for (std::size_t k = lo; k < hi; ++k) {
			const Sample& s = data.train[order[k]];
			xs.push_back(&s.lr_image);
			hrs.push_back(&s.hr_image);
			masks.push_back(target_mask(s, variant));
			ids.push_back(s.index);
		}
		std::vector<const Tensor*> mask_ptrs;
		for (const Tensor& m : masks) mask_ptrs.push_back(&m);
		const Tensor x = stack(xs);
		const Tensor hr = stack(hrs);
		const Tensor target = one_hot(stack(mask_ptrs));

		for (const auto& [name, p] : model.params().params()) Tensor(p).clear_grad();
		model.set_training(true);
		LossBreakdown loss;
		{
			Tape tape;
			TapeScope scope(tape);
			const ForwardBundle bundle = model.forward_train(x);
			loss = total_loss(bundle, target, hr, variant, loss_cfg);
			if (!std::isfinite(loss.total.item())) {
				std::ostringstream msg;
				msg << "non-finite loss " << loss.total.item() << " at iteration " << it << " (epoch " << epoch
				    << ", batch " << batch << ", samples";
				for (std::size_t id : ids) msg << ' ' << sample_id(id);
				msg << "; cbce=" << loss.cbce << " mse=" << loss.mse << " maf=" << loss.maf << ")";
				std::ofstream dump(out_dir / "nan_dump.txt", std::ios::trunc);
				dump << msg.str() << '\n';
				throw TrainingError(msg.str());
			}
			tape.backward(loss.total);
		}
		const double lr = poly_lr(it, max_iter, cfg);
		sgd_step(model.params(), opt, lr, cfg);
		const std::size_t done = it + 1;
		summary.iterations = done;
		summary.final_loss = loss.total.item();

		std::optional<EvalResult> eval;
		const bool eval_now = (cfg.eval_every != 0 && done % cfg.eval_every == 0) || done == max_iter;
		if (eval_now && !data.test.empty()) {
			eval = evaluate(model, data.test, cfg.threshold);
			if (options.verbose)
				std::cerr << "iter " << done << "/" << max_iter << " loss " << loss.total.item() << " dice "
				          << eval->pooled.dice << '\n';
		}
		log << metrics_record(done, lr, loss, eval).dump() << '\n';
		if (!log) throw TrainingError(log_path.string() + ": write failed");
		if (done == max_iter) summary.final_eval = eval;
		if (cfg.checkpoint_every != 0 && done % cfg.checkpoint_every == 0)
			save_checkpoint(out_dir / "checkpoints" / checkpoint_name(done),
					make_checkpoint(model, &opt, cfg, loss_cfg, done));
	}
	log.flush();

	const Checkpoint ckpt = make_checkpoint(model, &opt, cfg, loss_cfg, summary.iterations);
	if (summary.iterations == max_iter) {
		summary.final_checkpoint = out_dir / "final.ckpt";
	} else {
		summary.final_checkpoint = out_dir / "checkpoints" / checkpoint_name(summary.iterations);
	}
	save_checkpoint(summary.final_checkpoint, ckpt);
	return summary;
}

}  // namespace

std::vector<Tensor> predict(SsmafModel& model, const std::vector<Sample>& samples) {
	std::vector<Tensor> out;
	out.reserve(samples.size());
	for (const Sample& s : samples) {
		const Tensor probs = model.forward_infer(stack({&s.lr_image}));
		const std::size_t h = probs.dim(2), w = probs.dim(3);
		Tensor fg({h, w});
		std::copy_n(probs.data().begin() + static_cast<std::ptrdiff_t>(h * w), h * w, fg.data().begin());
		out.push_back(std::move(fg));
	}
	return out;
}

EvalResult evaluate(SsmafModel& model, const std::vector<Sample>& samples, double threshold) {
	if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
	std::vector<Tensor> gts;
	for (const Sample& s : samples) gts.push_back(target_mask(s, model.config().variant));
	return evaluate_predictions(predict(model, samples), gts, threshold);
}

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size) {
	if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
	return (n_train + batch_size - 1) / batch_size;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
	std::vector<std::size_t> order(n);
	std::iota(order.begin(), order.end(), std::size_t{0});
	SplitMix64 rng(derive_seed(derive_seed(seed, 0x5348554646ULL), epoch));
	for (std::size_t i = n; i > 1; --i) {
		const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)));
		std::swap(order[i - 1], order[j]);
	}
	return order;
}

TrainSummary train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
		const Dataset& data, const fs::path& out_dir, const TrainOptions& options) {
	model_cfg.validate();
	train_cfg.validate();
	check_dataset(model_cfg, data);
	std::error_code ec;
	fs::create_directories(out_dir, ec);
	if (ec) throw TrainingError("cannot create output directory " + out_dir.string() + ": " + ec.message());
	{
		std::ofstream truncate(out_dir / "metrics.jsonl", std::ios::trunc);
		if (!truncate) throw TrainingError((out_dir / "metrics.jsonl").string() + ": cannot create metrics log");
	}
	SsmafModel model = build_model(model_cfg, train_cfg.seed);
	OptimizerState opt = OptimizerState::zeros_like(model.params());
	return run_loop(model, opt, train_cfg, loss_cfg, data, out_dir, 0, options);
}

TrainSummary resume(const fs::path& checkpoint, const Dataset& data, const fs::path& out_dir,
		const TrainOptions& options) {
	const Checkpoint ckpt = load_checkpoint(checkpoint);
	check_dataset(ckpt.model, data);
	SsmafModel model = build_model(ckpt.model, ckpt.train.seed);
	OptimizerState opt;
	restore_checkpoint(ckpt, model, &opt);

	fs::create_directories(out_dir);
	const fs::path log_path = out_dir / "metrics.jsonl";
	std::vector<std::string> kept;
	{
		std::ifstream in(log_path);
		std::string line;
		while (std::getline(in, line)) {
			if (line.empty()) continue;
			if (json::parse(line).at("iter").get<std::size_t>() <= ckpt.iteration) kept.push_back(line);
		}
	}
	{
		std::ofstream out(log_path, std::ios::trunc);
		if (!out) throw TrainingError(log_path.string() + ": cannot rewrite metrics log");
		for (const std::string& line : kept) out << line << '\n';
	}
	return run_loop(model, opt, ckpt.train, ckpt.loss, data, out_dir, ckpt.iteration, options);
}

// ---------------------------------------------------------------------------------------------

const AblationRow& AblationResult::row(Variant v) const {
	for (const AblationRow& r : rows)
		if (r.variant == v) return r;
	throw std::out_of_range("ablation has no row for variant " + std::string(variant_name(v)));
}

std::string AblationResult::table() const {
	std::ostringstream ss;
	ss << std::left << std::setw(16) << "variant" << std::right << std::setw(10) << "Dice" << std::setw(10) << "IoU"
	   << std::setw(10) << "Recall" << std::setw(10) << "AUC" << '\n';
	ss << std::fixed << std::setprecision(4);
	for (const AblationRow& r : rows)
		ss << std::left << std::setw(16) << variant_name(r.variant) << std::right << std::setw(10) << r.median.dice
		   << std::setw(10) << r.median.iou << std::setw(10) << r.median.recall << std::setw(10) << r.median.auc_pr
		   << '\n';
	return ss.str();
}

namespace {

double median(std::vector<double> v) {
	std::sort(v.begin(), v.end());
	const std::size_t m = v.size() / 2;
	return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

AblationResult run_ablation(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
		const Dataset& data, const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, unsigned threads) {
	if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
	if (data.test.empty()) throw TrainingError("ablation needs a non-empty test split");
	const std::vector<Variant> variants = {Variant::Baseline, Variant::Interp, Variant::InterpSR, Variant::InterpSRMAF};

	AblationResult result;
	for (Variant v : variants)
		for (std::uint64_t s : seeds) result.runs.push_back(AblationRun{v, s, {}});

	if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
	if (const char* env = std::getenv("SSMAF_THREADS")) {
		const long cap = std::strtol(env, nullptr, 10);
		if (cap >= 1) threads = std::min(threads, static_cast<unsigned>(cap));
	}
	threads = std::min<unsigned>(threads, static_cast<unsigned>(result.runs.size()));

	std::atomic<std::size_t> next{0};
	std::mutex err_mutex;
	std::exception_ptr error;
	auto worker = [&] {
		for (std::size_t i; (i = next.fetch_add(1)) < result.runs.size();) {
			AblationRun& run = result.runs[i];
			try {
				ModelConfig mc = model_cfg;
				mc.variant = run.variant;
				TrainConfig tc = train_cfg;
				tc.seed = run.seed;
				const fs::path dir = out_dir / (std::string(variant_name(run.variant)) + "_seed" + std::to_string(run.seed));
				TrainSummary s = train(mc, tc, loss_cfg, data, dir);
				run.eval = *s.final_eval;
			} catch (...) {
				std::lock_guard lock(err_mutex);
				if (!error) error = std::current_exception();
			}
		}
	};
	std::vector<std::thread> pool;
	for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
	worker();
	for (std::thread& t : pool) t.join();
	if (error) std::rethrow_exception(error);

	for (Variant v : variants) {
		std::vector<double> dice, iou, recall, auc;
		for (const AblationRun& run : result.runs)
			if (run.variant == v) {
				dice.push_back(run.eval.pooled.dice);
				iou.push_back(run.eval.pooled.iou);
				recall.push_back(run.eval.pooled.recall);
				auc.push_back(run.eval.pooled.auc_pr);
			}
		result.rows.push_back(AblationRow{v, MetricsReport{median(dice), median(iou), median(recall), median(auc), false}});
	}
	fs::create_directories(out_dir);
	std::ofstream(out_dir / "ablation.txt") << result.table();
	return result;
}

}  // namespace ssmaf
