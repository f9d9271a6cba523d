#include "ssmaf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "ssmaf/losses.hpp"
#include "ssmaf/model.hpp"
#include "ssmaf/ops.hpp"
#include "ssmaf/random.hpp"

namespace ssmaf {

double relative_error(double analytic, double numeric, double floor) {
	const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
	return std::abs(analytic - numeric) / denom;
}

namespace {

using Inputs = std::vector<Tensor>;

struct Case {
	std::string name;
	std::function<Inputs(SplitMix64&)> make;  // differentiable inputs have requires_grad set
	std::function<Tensor(const Inputs&)> fn;
};

std::size_t pick(SplitMix64& rng, std::size_t lo, std::size_t hi) {
	return static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

Tensor filled(SplitMix64& rng, Shape shape, const std::function<double(SplitMix64&)>& draw, bool grad = true) {
	Tensor t(std::move(shape));
	for (double& v : t.data()) v = draw(rng);
	t.set_requires_grad(grad);
	return t;
}

Tensor normal(SplitMix64& rng, Shape shape, bool grad = true) {
	return filled(rng, std::move(shape), [](SplitMix64& r) { return r.normal(); }, grad);
}

Tensor uniform(SplitMix64& rng, Shape shape, double lo, double hi, bool grad = true) {
	return filled(rng, std::move(shape), [lo, hi](SplitMix64& r) { return r.uniform(lo, hi); }, grad);
}

/// Values at least 0.05 away from zero, so a finite-difference step never crosses a ReLU kink.
Tensor away_from_zero(SplitMix64& rng, Shape shape) {
	return filled(rng, std::move(shape), [](SplitMix64& r) {
		const double m = 0.05 + std::abs(r.normal());
		return r.uniform() < 0.5 ? -m : m;
	});
}

/// Pairwise separated values (gaps >= 0.0098), so max-pool winners are stable under the step.
Tensor distinct(SplitMix64& rng, Shape shape) {
	Tensor t(std::move(shape));
	std::vector<std::size_t> perm(t.numel());
	std::iota(perm.begin(), perm.end(), std::size_t{0});
	for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[pick(rng, 0, i - 1)]);
	for (std::size_t i = 0; i < perm.size(); ++i) t.data()[i] = 0.01 * static_cast<double>(perm[i]) + rng.uniform(0.0, 1e-4);
	t.set_requires_grad(true);
	return t;
}

Tensor one_hot_random(SplitMix64& rng, std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
	Tensor t({b, c, h, w});
	for (std::size_t n = 0; n < b; ++n)
		for (std::size_t y = 0; y < h; ++y)
			for (std::size_t x = 0; x < w; ++x) t.at(n, pick(rng, 0, c - 1), y, x) = 1.0;
	return t;
}

/// Symmetric positive definite matrices M M^T / n + I, optionally batched.
Tensor spd(SplitMix64& rng, std::size_t n, std::size_t batch) {
	Shape shape = batch ? Shape{batch, n, n} : Shape{n, n};
	Tensor t(shape);
	const std::size_t count = batch ? batch : 1;
	for (std::size_t b = 0; b < count; ++b) {
		std::vector<double> m(n * n);
		for (double& v : m) v = rng.normal();
		for (std::size_t i = 0; i < n; ++i)
			for (std::size_t j = 0; j < n; ++j) {
				double s = i == j ? 1.0 : 0.0;
				for (std::size_t k = 0; k < n; ++k) s += m[i * n + k] * m[j * n + k] / static_cast<double>(n);
				t.data()[(b * n + i) * n + j] = s;
			}
	}
	t.set_requires_grad(true);
	return t;
}

Shape nchw(SplitMix64& rng, std::size_t bmax, std::size_t cmax, std::size_t hmin, std::size_t hmax) {
	return {pick(rng, 1, bmax), pick(rng, 1, cmax), pick(rng, hmin, hmax), pick(rng, hmin, hmax)};
}

std::vector<Case> make_cases() {
	std::vector<Case> c;
	auto conv_case = [&c](std::string name, Conv2dOptions opt, std::size_t kernel, std::size_t hmin) {
		c.push_back({std::move(name),
				[opt, kernel, hmin](SplitMix64& r) {
					const Shape x = nchw(r, 2, 3, hmin, hmin + 3);
					return Inputs{normal(r, x), normal(r, {pick(r, 1, 3), x[1], kernel, kernel})};
				},
				[opt](const Inputs& in) { return conv2d(in[0], in[1], Tensor(), opt); }});
	};
	conv_case("conv2d", {1, 1, 1}, 3, 3);
	conv_case("conv2d_stride2", {2, 1, 1}, 3, 4);
	conv_case("conv2d_dilated", {1, 2, 2}, 3, 4);
	conv_case("conv2d_dilation3", {1, 3, 3}, 3, 4);
	conv_case("conv2d_1x1", {1, 0, 1}, 1, 2);
	c.push_back({"conv2d_bias",
			[](SplitMix64& r) {
				const Shape x = nchw(r, 2, 3, 3, 5);
				const std::size_t cout = pick(r, 1, 3);
				return Inputs{normal(r, x), normal(r, {cout, x[1], 3, 3}), normal(r, {cout})};
			},
			[](const Inputs& in) { return conv2d(in[0], in[1], in[2], {1, 1, 1}); }});
	c.push_back({"batch_norm_train",
			[](SplitMix64& r) {
				const Shape x{2, pick(r, 1, 3), pick(r, 2, 4), pick(r, 2, 4)};
				return Inputs{normal(r, x), uniform(r, {x[1]}, 0.5, 1.5), normal(r, {x[1]})};
			},
			[](const Inputs& in) {
				BatchNormStats stats = BatchNormStats::init(in[0].dim(1));
				return batch_norm(in[0], in[1], in[2], stats, NormMode::Train);
			}});
	c.push_back({"batch_norm_eval",
			[](SplitMix64& r) {
				const Shape x = nchw(r, 2, 3, 2, 4);
				return Inputs{normal(r, x), uniform(r, {x[1]}, 0.5, 1.5), normal(r, {x[1]}), normal(r, {x[1]}, false),
						uniform(r, {x[1]}, 0.5, 2.0, false)};
			},
			[](const Inputs& in) {
				BatchNormStats stats{in[3], in[4]};
				return batch_norm(in[0], in[1], in[2], stats, NormMode::Eval);
			}});
	c.push_back({"pixel_shuffle",
			[](SplitMix64& r) {
				const std::size_t f = pick(r, 2, 3);
				return Inputs{normal(r, {pick(r, 1, 2), pick(r, 1, 2) * f * f, pick(r, 1, 4), pick(r, 1, 4)}),
						Tensor::scalar(static_cast<double>(f))};
			},
			[](const Inputs& in) { return pixel_shuffle(in[0], static_cast<std::size_t>(in[1].item())); }});
	c.push_back({"interpolate_bilinear",
			[](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 2, 1, 5)), Tensor::scalar(double(pick(r, 2, 3)))}; },
			[](const Inputs& in) { return interpolate_bilinear(in[0], static_cast<std::size_t>(in[1].item())); }});
	c.push_back({"max_pool2d",
			[](SplitMix64& r) {
				return Inputs{distinct(r, {pick(r, 1, 2), pick(r, 1, 2), 2 * pick(r, 1, 3), 2 * pick(r, 1, 3)})};
			},
			[](const Inputs& in) { return max_pool2d(in[0]); }});
	c.push_back({"avg_pool2d",
			[](SplitMix64& r) {
				const std::size_t k = pick(r, 2, 3);
				return Inputs{normal(r, {pick(r, 1, 2), pick(r, 1, 2), k * pick(r, 1, 3), k * pick(r, 1, 3)}),
						Tensor::scalar(static_cast<double>(k))};
			},
			[](const Inputs& in) { return avg_pool2d(in[0], static_cast<std::size_t>(in[1].item())); }});
	c.push_back({"softmax_channels", [](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 4, 1, 4))}; },
			[](const Inputs& in) { return softmax_channels(in[0]); }});
	c.push_back({"concat_channels",
			[](SplitMix64& r) {
				const Shape a = nchw(r, 2, 3, 1, 4);
				return Inputs{normal(r, a), normal(r, {a[0], pick(r, 1, 3), a[2], a[3]})};
			},
			[](const Inputs& in) { return concat_channels({in[0], in[1]}); }});
	c.push_back({"slice_channels",
			[](SplitMix64& r) { return Inputs{normal(r, {pick(r, 1, 2), pick(r, 2, 5), pick(r, 1, 4), pick(r, 1, 4)})}; },
			[](const Inputs& in) { return slice_channels(in[0], 1, in[0].dim(1)); }});
	c.push_back({"relu", [](SplitMix64& r) { return Inputs{away_from_zero(r, nchw(r, 2, 3, 1, 4))}; },
			[](const Inputs& in) { return relu(in[0]); }});
	c.push_back({"sigmoid", [](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 3, 1, 4))}; },
			[](const Inputs& in) { return sigmoid(in[0]); }});
	c.push_back({"log", [](SplitMix64& r) { return Inputs{uniform(r, nchw(r, 2, 3, 1, 4), 0.2, 2.0)}; },
			[](const Inputs& in) { return log(in[0]); }});
	c.push_back({"square", [](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 3, 1, 4))}; },
			[](const Inputs& in) { return square(in[0]); }});
	c.push_back({"clamp",
			[](SplitMix64& r) {
				return Inputs{filled(r, nchw(r, 2, 3, 1, 4), [](SplitMix64& q) {
					const double band = q.uniform();
					return band < 1.0 / 3 ? q.uniform(-1.0, -0.6) : band < 2.0 / 3 ? q.uniform(-0.4, 0.4) : q.uniform(0.6, 1.0);
				})};
			},
			[](const Inputs& in) { return clamp(in[0], -0.5, 0.5); }});
	auto binary = [&c](std::string name, Tensor (*op)(const Tensor&, const Tensor&)) {
		c.push_back({std::move(name),
				[](SplitMix64& r) {
					const Shape s = nchw(r, 2, 3, 1, 4);
					return Inputs{normal(r, s), normal(r, s)};
				},
				[op](const Inputs& in) { return op(in[0], in[1]); }});
	};
	binary("add", add);
	binary("sub", sub);
	binary("mul", mul);
	c.push_back({"scale", [](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 3, 1, 4))}; },
			[](const Inputs& in) { return scale(in[0], -1.7); }});
	c.push_back({"add_scalar", [](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 3, 1, 4))}; },
			[](const Inputs& in) { return add_scalar(in[0], 0.3); }});
	c.push_back({"sum", [](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 3, 1, 4))}; },
			[](const Inputs& in) { return sum(in[0]); }});
	c.push_back({"mean", [](SplitMix64& r) { return Inputs{normal(r, nchw(r, 2, 3, 1, 4))}; },
			[](const Inputs& in) { return mean(in[0]); }});
	c.push_back({"matmul",
			[](SplitMix64& r) {
				const std::size_t b = pick(r, 1, 3), n = pick(r, 1, 4), m = pick(r, 1, 4), p = pick(r, 1, 4);
				return Inputs{normal(r, {b, n, m}), normal(r, {b, m, p})};
			},
			[](const Inputs& in) { return matmul(in[0], in[1]); }});
	c.push_back({"transpose_last2",
			[](SplitMix64& r) { return Inputs{normal(r, {pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)})}; },
			[](const Inputs& in) { return transpose_last2(in[0]); }});
	c.push_back({"add_identity",
			[](SplitMix64& r) {
				const std::size_t n = pick(r, 1, 4);
				return Inputs{normal(r, {pick(r, 1, 3), n, n})};
			},
			[](const Inputs& in) { return add_identity(in[0], 0.25); }});
	c.push_back({"spd_inverse", [](SplitMix64& r) { return Inputs{spd(r, pick(r, 1, 5), pick(r, 0, 3))}; },
			[](const Inputs& in) { return spd_inverse(in[0]); }});
	c.push_back({"cholesky_logdet", [](SplitMix64& r) { return Inputs{spd(r, pick(r, 1, 6), pick(r, 0, 3))}; },
			[](const Inputs& in) { return cholesky_logdet(in[0]); }});
	c.push_back({"center_last",
			[](SplitMix64& r) { return Inputs{normal(r, {pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 6)})}; },
			[](const Inputs& in) { return center_last(in[0]); }});
	c.push_back({"region_vectors",
			[](SplitMix64& r) {
				const std::size_t k = pick(r, 1, 3);
				return Inputs{normal(r, {pick(r, 1, 2), pick(r, 1, 2), pick(r, k, 5), pick(r, k, 5)}),
						Tensor::scalar(static_cast<double>(k))};
			},
			[](const Inputs& in) { return region_vectors(in[0], static_cast<std::size_t>(in[1].item())); }});

	// Losses. Targets are fixed inputs without gradient.
	c.push_back({"cbce_loss",
			[](SplitMix64& r) {
				const Shape s = nchw(r, 2, 3, 2, 5);
				const double betas[] = {0.0, 0.9, 0.99, 0.9999};
				return Inputs{normal(r, {s[0], s[1] + 1, s[2], s[3]}), one_hot_random(r, s[0], s[1] + 1, s[2], s[3]),
						Tensor::scalar(betas[pick(r, 0, 3)])};
			},
			[](const Inputs& in) { return cbce_loss(in[0], in[1], CBCEConfig{in[2].item()}); }});
	c.push_back({"mse_loss",
			[](SplitMix64& r) {
				const Shape s = nchw(r, 2, 3, 1, 5);
				return Inputs{normal(r, s), normal(r, s, false)};
			},
			[](const Inputs& in) { return mse_loss(in[0], in[1]); }});
	auto rmi_inputs = [](SplitMix64& r) {
		const std::size_t b = pick(r, 1, 2), ch = pick(r, 1, 2), h = 2 * pick(r, 6, 8), w = 2 * pick(r, 6, 8);
		return Inputs{uniform(r, {b, ch, h, w}, 0.05, 0.95), one_hot_random(r, b, ch, h, w)};
	};
	c.push_back({"rmi_lower_bound", rmi_inputs, [](const Inputs& in) { return rmi_lower_bound(in[0], in[1]); }});
	c.push_back({"rmi_loss", rmi_inputs, [](const Inputs& in) { return rmi_loss(in[0], in[1]); }});
	c.push_back({"maf_loss",
			[](SplitMix64& r) {
				const std::size_t b = pick(r, 1, 2), h = 2 * pick(r, 6, 7), w = 2 * pick(r, 6, 7);
				return Inputs{normal(r, {b, 2, h, w}), one_hot_random(r, b, 2, h, w), normal(r, {b, 3, h, w}),
						uniform(r, {b, 3, h, w}, 0.0, 1.0, false)};
			},
			[](const Inputs& in) { return maf_loss(in[0], in[1], in[2], in[3]); }});
	return c;
}

const std::vector<Case>& cases() {
	static const std::vector<Case> c = make_cases();
	return c;
}

/// Σ r_i y_i evaluated without recording.
double project(const Tensor& y, const Tensor& r) {
	double s = 0.0;
	for (std::size_t i = 0; i < y.numel(); ++i) s += y.data()[i] * r.data()[i];
	return s;
}

void perturb(std::vector<double>& g) {
	for (double& v : g) v = v * 1.01 + 1e-3;
}

GradcheckReport check_case(const Case& cs, const GradcheckOptions& opt) {
	GradcheckReport rep{cs.name, 0.0, opt.trials, 0, opt.tolerance, false};
	SplitMix64 rng(derive_seed(opt.seed, fnv1a(cs.name)));
	const bool corrupt = opt.corrupt.count(cs.name) != 0;
	for (std::size_t trial = 0; trial < opt.trials; ++trial) {
		Inputs in = cs.make(rng);
		const Tensor probe = cs.fn(in);
		Tensor weights = normal(rng, probe.shape(), false);

		std::vector<std::vector<double>> analytic(in.size());
		{
			Tape tape;
			TapeScope scope(tape);
			Tensor loss = sum(mul(cs.fn(in), weights));
			tape.backward(loss);
		}
		for (std::size_t k = 0; k < in.size(); ++k) {
			if (!in[k].defined() || !in[k].requires_grad()) continue;
			analytic[k] = in[k].has_grad() ? std::vector<double>(in[k].grad().begin(), in[k].grad().end())
			                               : std::vector<double>(in[k].numel(), 0.0);
			if (corrupt) perturb(analytic[k]);
			in[k].clear_grad();
		}

		for (std::size_t k = 0; k < in.size(); ++k) {
			if (analytic[k].empty()) continue;
			const std::size_t n = in[k].numel();
			std::vector<std::size_t> coords(n);
			std::iota(coords.begin(), coords.end(), std::size_t{0});
			if (n > opt.coords_per_input) {
				for (std::size_t i = 0; i < opt.coords_per_input; ++i) std::swap(coords[i], coords[pick(rng, i, n - 1)]);
				coords.resize(opt.coords_per_input);
			}
			for (std::size_t i : coords) {
				double& x = in[k].data()[i];
				const double saved = x;
				x = saved + opt.step;
				const double fp = project(cs.fn(in), weights);
				x = saved - opt.step;
				const double fm = project(cs.fn(in), weights);
				x = saved;
				const double numeric = (fp - fm) / (2.0 * opt.step);
				rep.worst = std::max(rep.worst, relative_error(analytic[k][i], numeric, opt.floor));
				++rep.coords;
			}
		}
	}
	rep.passed = rep.worst < opt.tolerance;
	return rep;
}

}  // namespace

std::vector<std::string> gradcheck_registry() {
	std::vector<std::string> names;
	for (const Case& c : cases()) names.push_back(c.name);
	return names;
}

GradcheckReport gradcheck_op(const std::string& name, const GradcheckOptions& opt) {
	for (const Case& c : cases())
		if (c.name == name) return check_case(c, opt);
	throw std::invalid_argument("gradcheck: no registered op named '" + name + "'");
}

GradcheckReport gradcheck_model(const GradcheckOptions& opt) {
	GradcheckReport rep{"model_interp_sr_maf", 0.0, 1, 0, opt.model_tolerance, false};
	ModelConfig cfg;
	cfg.num_classes = 2;
	cfg.depth = 2;
	cfg.base_width = 4;
	cfg.variant = Variant::InterpSRMAF;
	SsmafModel model = build_model(cfg, opt.seed);
	model.set_training(true);

	SplitMix64 rng(derive_seed(opt.seed, 0x4D4F44454CULL));
	const std::size_t b = 2, h = 16, w = 16, n = static_cast<std::size_t>(cfg.upscale);
	const Tensor x = uniform(rng, {b, 3, h, w}, 0.0, 1.0, false);
	const Tensor hr = uniform(rng, {b, 3, n * h, n * w}, 0.0, 1.0, false);
	const Tensor target = one_hot_random(rng, b, 2, n * h, n * w);

	auto loss_value = [&] { return total_loss(model.forward_train(x), target, hr, cfg.variant).total.item(); };
	{
		Tape tape;
		TapeScope scope(tape);
		model.params().zero_grad();
		Tensor loss = total_loss(model.forward_train(x), target, hr, cfg.variant).total;
		tape.backward(loss);
	}

	// Sample parameter entries uniformly over all scalars.
	std::vector<std::pair<std::string, std::size_t>> entries;
	const std::size_t total = model.params().numel();
	for (std::size_t s = 0; s < opt.model_params; ++s) {
		std::size_t idx = pick(rng, 0, total - 1);
		for (const auto& [name, p] : model.params().params()) {
			if (idx < p.numel()) {
				entries.emplace_back(name, idx);
				break;
			}
			idx -= p.numel();
		}
	}
	const bool corrupt = opt.corrupt.count(rep.op) != 0;
	for (const auto& [name, idx] : entries) {
		Tensor p = model.params().param(name);
		double analytic = std::as_const(p).grad()[idx];
		if (corrupt) analytic = analytic * 1.01 + 1e-3;
		double& v = p.data()[idx];
		const double saved = v;
		v = saved + opt.step;
		const double fp = loss_value();
		v = saved - opt.step;
		const double fm = loss_value();
		v = saved;
		const double numeric = (fp - fm) / (2.0 * opt.step);
		rep.worst = std::max(rep.worst, relative_error(analytic, numeric, opt.floor));
		++rep.coords;
	}
	rep.passed = rep.worst < opt.model_tolerance;
	return rep;
}

std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opt) {
	std::vector<GradcheckReport> out;
	for (const Case& c : cases()) out.push_back(check_case(c, opt));
	if (opt.model_check) out.push_back(gradcheck_model(opt));
	return out;
}

}  // namespace ssmaf
