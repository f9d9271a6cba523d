#include <algorithm>
#include <cmath>
#include <vector>

#include "ops_common.hpp"
#include "ssmaf/ops.hpp"

namespace ssmaf {

namespace {

/// Unary op whose derivative is a function of (input, output).
template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
	if (!x.defined()) throw std::invalid_argument(std::string(name) + ": undefined operand");
	Tensor out(x.shape());
	auto src = x.data();
	auto dst = out.data();
	for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fwd(src[i]);
	if (!detail::needs_record({&x})) return out;
	Tensor in = x, res = out;
	return detail::finish(name, std::move(out), {&x}, [in, res, deriv](std::span<const double> g) mutable {
		auto gx = detail::grad_sink(in);
		auto xs = in.data();
		auto ys = res.data();
		for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xs[i], ys[i]);
	});
}

}  // namespace

Tensor relu(const Tensor& x) {
	return unary(
			"relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
	return unary(
			"sigmoid", x,
			[](double v) {
				if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
				const double e = std::exp(v);
				return e / (1.0 + e);
			},
			[](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
	return unary(
			"log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
	return unary(
			"square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
	if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
	return unary(
			"clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
			[lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& x, double s) {
	return unary(
			"scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
	return unary(
			"add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor add(const Tensor& a, const Tensor& b) {
	detail::require_same_shape(a, b, "add");
	Tensor out(a.shape());
	auto pa = a.data(), pb = b.data();
	auto po = out.data();
	for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + pb[i];
	Tensor ta = a, tb = b;
	return detail::finish("add", std::move(out), {&a, &b}, [ta, tb](std::span<const double> g) mutable {
		auto ga = detail::grad_sink(ta);
		auto gb = detail::grad_sink(tb);
		for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
		for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
	});
}

Tensor sub(const Tensor& a, const Tensor& b) {
	detail::require_same_shape(a, b, "sub");
	Tensor out(a.shape());
	auto pa = a.data(), pb = b.data();
	auto po = out.data();
	for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] - pb[i];
	Tensor ta = a, tb = b;
	return detail::finish("sub", std::move(out), {&a, &b}, [ta, tb](std::span<const double> g) mutable {
		auto ga = detail::grad_sink(ta);
		auto gb = detail::grad_sink(tb);
		for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
		for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
	});
}

Tensor mul(const Tensor& a, const Tensor& b) {
	detail::require_same_shape(a, b, "mul");
	Tensor out(a.shape());
	auto pa = a.data(), pb = b.data();
	auto po = out.data();
	for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] * pb[i];
	Tensor ta = a, tb = b;
	return detail::finish("mul", std::move(out), {&a, &b}, [ta, tb](std::span<const double> g) mutable {
		auto ga = detail::grad_sink(ta);
		auto gb = detail::grad_sink(tb);
		auto pa = ta.data(), pb = tb.data();
		for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * pb[i];
		for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * pa[i];
	});
}

Tensor sum(const Tensor& x) {
	if (!x.defined()) throw std::invalid_argument("sum: undefined operand");
	double s = 0.0;
	for (double v : x.data()) s += v;
	Tensor in = x;
	return detail::finish("sum", Tensor::scalar(s), {&x}, [in](std::span<const double> g) mutable {
		auto gx = detail::grad_sink(in);
		for (double& v : gx) v += g[0];
	});
}

Tensor mean(const Tensor& x) {
	if (!x.defined()) throw std::invalid_argument("mean: undefined operand");
	double s = 0.0;
	for (double v : x.data()) s += v;
	const double inv = 1.0 / static_cast<double>(x.numel());
	Tensor in = x;
	return detail::finish("mean", Tensor::scalar(s * inv), {&x}, [in, inv](std::span<const double> g) mutable {
		auto gx = detail::grad_sink(in);
		for (double& v : gx) v += g[0] * inv;
	});
}

Tensor softmax_channels(const Tensor& input) {
	detail::require_rank(input, 4, "softmax_channels");
	const std::size_t batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
	Tensor out(input.shape());
	auto x = input.data();
	auto y = out.data();
	for (std::size_t b = 0; b < batch; ++b) {
		const std::size_t base = b * channels * plane;
		for (std::size_t i = 0; i < plane; ++i) {
			double mx = x[base + i];
			for (std::size_t c = 1; c < channels; ++c) mx = std::max(mx, x[base + c * plane + i]);
			double z = 0.0;
			for (std::size_t c = 0; c < channels; ++c) {
				const double e = std::exp(x[base + c * plane + i] - mx);
				y[base + c * plane + i] = e;
				z += e;
			}
			for (std::size_t c = 0; c < channels; ++c) y[base + c * plane + i] /= z;
		}
	}
	Tensor in = input, res = out;
	return detail::finish("softmax_channels", std::move(out), {&input},
			[in, res, batch, channels, plane](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				auto y = res.data();
				for (std::size_t b = 0; b < batch; ++b) {
					const std::size_t base = b * channels * plane;
					for (std::size_t i = 0; i < plane; ++i) {
						double dot = 0.0;
						for (std::size_t c = 0; c < channels; ++c) dot += g[base + c * plane + i] * y[base + c * plane + i];
						for (std::size_t c = 0; c < channels; ++c) {
							const std::size_t k = base + c * plane + i;
							gx[k] += y[k] * (g[k] - dot);
						}
					}
				}
			});
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
	if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
	for (const Tensor& t : inputs) detail::require_rank(t, 4, "concat_channels");
	const Shape& s0 = inputs.front().shape();
	std::size_t channels = 0;
	for (const Tensor& t : inputs) {
		const Shape& s = t.shape();
		if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
			throw std::invalid_argument("concat_channels: non-conforming shapes " + shape_str(s0) + " and " +
					shape_str(s));
		channels += s[1];
	}
	const std::size_t batch = s0[0], plane = s0[2] * s0[3];
	Tensor out({batch, channels, s0[2], s0[3]});
	auto dst = out.data();
	std::size_t c_off = 0;
	for (const Tensor& t : inputs) {
		const std::size_t ct = t.dim(1);
		for (std::size_t b = 0; b < batch; ++b)
			std::copy_n(t.data().data() + b * ct * plane, ct * plane, dst.data() + (b * channels + c_off) * plane);
		c_off += ct;
	}
	std::vector<const Tensor*> ptrs;
	for (const Tensor& t : inputs) ptrs.push_back(&t);
	std::vector<Tensor> ins = inputs;
	return detail::finish("concat_channels", std::move(out), ptrs,
			[ins, batch, channels, plane](std::span<const double> g) mutable {
				std::size_t c_off = 0;
				for (Tensor& t : ins) {
					const std::size_t ct = t.dim(1);
					auto gt = detail::grad_sink(t);
					if (!gt.empty())
						for (std::size_t b = 0; b < batch; ++b) {
							const double* src = g.data() + (b * channels + c_off) * plane;
							double* d = gt.data() + b * ct * plane;
							for (std::size_t i = 0; i < ct * plane; ++i) d[i] += src[i];
						}
					c_off += ct;
				}
			});
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end) {
	detail::require_rank(input, 4, "slice_channels");
	const std::size_t channels = input.dim(1);
	if (begin >= end || end > channels)
		throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
				") invalid for " + std::to_string(channels) + " channels");
	const std::size_t batch = input.dim(0), plane = input.dim(2) * input.dim(3), width = end - begin;
	Tensor out({batch, width, input.dim(2), input.dim(3)});
	for (std::size_t b = 0; b < batch; ++b)
		std::copy_n(input.data().data() + (b * channels + begin) * plane, width * plane,
				out.data().data() + b * width * plane);
	Tensor in = input;
	return detail::finish("slice_channels", std::move(out), {&input},
			[in, batch, channels, plane, begin, width](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				for (std::size_t b = 0; b < batch; ++b) {
					double* d = gx.data() + (b * channels + begin) * plane;
					const double* src = g.data() + b * width * plane;
					for (std::size_t i = 0; i < width * plane; ++i) d[i] += src[i];
				}
			});
}

}  // namespace ssmaf
