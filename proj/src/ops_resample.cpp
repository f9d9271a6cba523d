#include <algorithm>
#include <cmath>
#include <vector>

#include "ops_common.hpp"
#include "ssmaf/ops.hpp"

namespace ssmaf {

Tensor pixel_shuffle(const Tensor& input, std::size_t r) {
	detail::require_rank(input, 4, "pixel_shuffle");
	if (r < 1) throw std::invalid_argument("pixel_shuffle: factor must be >= 1");
	const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
	if (cin % (r * r) != 0)
		throw std::invalid_argument("pixel_shuffle: " + std::to_string(cin) + " channels not divisible by r^2 = " +
				std::to_string(r * r));
	const std::size_t cout = cin / (r * r);
	Tensor out({batch, cout, h * r, w * r});

	// index[o] = source offset of output element o.
	std::vector<std::size_t> index(out.numel());
	const std::size_t oh = h * r, ow = w * r;
	std::size_t o = 0;
	for (std::size_t b = 0; b < batch; ++b)
		for (std::size_t c = 0; c < cout; ++c)
			for (std::size_t y = 0; y < oh; ++y)
				for (std::size_t x = 0; x < ow; ++x, ++o) {
					const std::size_t src_c = c * r * r + (y % r) * r + (x % r);
					index[o] = ((b * cin + src_c) * h + y / r) * w + x / r;
				}
	auto src = input.data();
	auto dst = out.data();
	for (std::size_t i = 0; i < index.size(); ++i) dst[i] = src[index[i]];

	Tensor in = input;
	return detail::finish("pixel_shuffle", std::move(out), {&input},
			[in, index = std::move(index)](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
			});
}

namespace {

struct Tap {
	std::size_t lo, hi;
	double frac;  // weight of hi
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t scale) {
	std::vector<Tap> taps(in * scale);
	const double max_coord = static_cast<double>(in - 1);
	for (std::size_t i = 0; i < taps.size(); ++i) {
		double src = (static_cast<double>(i) + 0.5) / static_cast<double>(scale) - 0.5;
		src = std::clamp(src, 0.0, max_coord);
		const auto lo = static_cast<std::size_t>(std::floor(src));
		taps[i] = Tap{lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
	}
	return taps;
}

}  // namespace

Tensor interpolate_bilinear(const Tensor& input, std::size_t scale) {
	detail::require_rank(input, 4, "interpolate_bilinear");
	if (scale < 1) throw std::invalid_argument("interpolate_bilinear: scale must be >= 1");
	if (scale == 1) {
		Tensor in = input;
		Tensor out(input.shape(), std::vector<double>(input.data().begin(), input.data().end()));
		return detail::finish("interpolate_bilinear", std::move(out), {&input},
				[in](std::span<const double> g) mutable {
					auto gx = detail::grad_sink(in);
					for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
				});
	}
	const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
	const std::size_t oh = h * scale, ow = w * scale;
	const auto ty = bilinear_taps(h, scale);
	const auto tx = bilinear_taps(w, scale);
	Tensor out({input.dim(0), input.dim(1), oh, ow});
	auto src = input.data();
	auto dst = out.data();
	for (std::size_t p = 0; p < planes; ++p) {
		const double* s = src.data() + p * h * w;
		double* d = dst.data() + p * oh * ow;
		for (std::size_t y = 0; y < oh; ++y) {
			const Tap& a = ty[y];
			const double* r0 = s + a.lo * w;
			const double* r1 = s + a.hi * w;
			for (std::size_t x = 0; x < ow; ++x) {
				const Tap& b = tx[x];
				const double top = r0[b.lo] + b.frac * (r0[b.hi] - r0[b.lo]);
				const double bot = r1[b.lo] + b.frac * (r1[b.hi] - r1[b.lo]);
				d[y * ow + x] = top + a.frac * (bot - top);
			}
		}
	}

	Tensor in = input;
	return detail::finish("interpolate_bilinear", std::move(out), {&input},
			[in, ty, tx, planes, h, w, oh, ow](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				for (std::size_t p = 0; p < planes; ++p) {
					double* s = gx.data() + p * h * w;
					const double* d = g.data() + p * oh * ow;
					for (std::size_t y = 0; y < oh; ++y) {
						const Tap& a = ty[y];
						for (std::size_t x = 0; x < ow; ++x) {
							const Tap& b = tx[x];
							const double v = d[y * ow + x];
							s[a.lo * w + b.lo] += v * (1 - a.frac) * (1 - b.frac);
							s[a.lo * w + b.hi] += v * (1 - a.frac) * b.frac;
							s[a.hi * w + b.lo] += v * a.frac * (1 - b.frac);
							s[a.hi * w + b.hi] += v * a.frac * b.frac;
						}
					}
				}
			});
}

Tensor max_pool2d(const Tensor& input) {
	detail::require_rank(input, 4, "max_pool2d");
	const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
	if (h < 2 || w < 2) throw std::invalid_argument("max_pool2d: input " + shape_str(input.shape()) + " smaller than 2x2");
	const std::size_t oh = h / 2, ow = w / 2;
	Tensor out({input.dim(0), input.dim(1), oh, ow});
	std::vector<std::size_t> argmax(out.numel());
	auto src = input.data();
	auto dst = out.data();
	for (std::size_t p = 0; p < planes; ++p)
		for (std::size_t y = 0; y < oh; ++y)
			for (std::size_t x = 0; x < ow; ++x) {
				std::size_t best = p * h * w + 2 * y * w + 2 * x;
				for (std::size_t dy = 0; dy < 2; ++dy)
					for (std::size_t dx = 0; dx < 2; ++dx) {
						const std::size_t idx = p * h * w + (2 * y + dy) * w + 2 * x + dx;
						if (src[idx] > src[best]) best = idx;
					}
				const std::size_t o = (p * oh + y) * ow + x;
				argmax[o] = best;
				dst[o] = src[best];
			}
	Tensor in = input;
	return detail::finish("max_pool2d", std::move(out), {&input},
			[in, argmax = std::move(argmax)](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
			});
}

Tensor avg_pool2d(const Tensor& input, std::size_t k) {
	detail::require_rank(input, 4, "avg_pool2d");
	if (k < 1) throw std::invalid_argument("avg_pool2d: window must be >= 1");
	const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
	if (h % k != 0 || w % k != 0)
		throw std::invalid_argument("avg_pool2d: extents of " + shape_str(input.shape()) + " not divisible by " +
				std::to_string(k));
	const std::size_t oh = h / k, ow = w / k;
	const double inv = 1.0 / static_cast<double>(k * k);
	Tensor out({input.dim(0), input.dim(1), oh, ow});
	auto src = input.data();
	auto dst = out.data();
	for (std::size_t p = 0; p < planes; ++p)
		for (std::size_t y = 0; y < oh; ++y)
			for (std::size_t x = 0; x < ow; ++x) {
				double s = 0.0;
				for (std::size_t dy = 0; dy < k; ++dy)
					for (std::size_t dx = 0; dx < k; ++dx) s += src[p * h * w + (y * k + dy) * w + x * k + dx];
				dst[(p * oh + y) * ow + x] = s * inv;
			}
	Tensor in = input;
	return detail::finish("avg_pool2d", std::move(out), {&input},
			[in, planes, h, w, oh, ow, k, inv](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				for (std::size_t p = 0; p < planes; ++p)
					for (std::size_t y = 0; y < oh; ++y)
						for (std::size_t x = 0; x < ow; ++x) {
							const double v = g[(p * oh + y) * ow + x] * inv;
							for (std::size_t dy = 0; dy < k; ++dy)
								for (std::size_t dx = 0; dx < k; ++dx) gx[p * h * w + (y * k + dy) * w + x * k + dx] += v;
						}
			});
}

}  // namespace ssmaf
