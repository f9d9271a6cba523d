#include <cmath>
#include <vector>

#include "ops_common.hpp"
#include "ssmaf/ops.hpp"

namespace ssmaf {

BatchNormStats BatchNormStats::init(std::size_t channels) {
	return BatchNormStats{Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
		NormMode mode, double eps, double momentum) {
	detail::require_rank(input, 4, "batch_norm");
	if (!(eps > 0.0)) throw std::invalid_argument("batch_norm: eps must be > 0");
	const std::size_t batch = input.dim(0), channels = input.dim(1);
	const std::size_t plane = input.dim(2) * input.dim(3);
	const std::size_t count = batch * plane;
	for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &stats.mean, &stats.var})
		if (t->rank() != 1 || t->dim(0) != channels)
			throw std::invalid_argument("batch_norm: per-channel tensor shape " + shape_str(t->shape()) +
					" does not match " + std::to_string(channels) + " channels");

	std::vector<double> mu(channels), inv_std(channels);
	const auto x = input.data();
	if (mode == NormMode::Train) {
		for (std::size_t c = 0; c < channels; ++c) {
			double s = 0.0;
			for (std::size_t b = 0; b < batch; ++b) {
				const double* p = x.data() + (b * channels + c) * plane;
				for (std::size_t i = 0; i < plane; ++i) s += p[i];
			}
			const double m = s / static_cast<double>(count);
			double v = 0.0;
			for (std::size_t b = 0; b < batch; ++b) {
				const double* p = x.data() + (b * channels + c) * plane;
				for (std::size_t i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
			}
			const double var = v / static_cast<double>(count);
			mu[c] = m;
			inv_std[c] = 1.0 / std::sqrt(var + eps);
			const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
			stats.mean.data()[c] = (1.0 - momentum) * stats.mean.data()[c] + momentum * m;
			stats.var.data()[c] = (1.0 - momentum) * stats.var.data()[c] + momentum * unbiased;
		}
	} else {
		for (std::size_t c = 0; c < channels; ++c) {
			mu[c] = stats.mean.data()[c];
			inv_std[c] = 1.0 / std::sqrt(stats.var.data()[c] + eps);
		}
	}

	Tensor out(input.shape());
	Tensor xhat(input.shape());
	auto y = out.data();
	auto xh = xhat.data();
	for (std::size_t b = 0; b < batch; ++b)
		for (std::size_t c = 0; c < channels; ++c) {
			const std::size_t base = (b * channels + c) * plane;
			const double gm = gamma.data()[c], bt = beta.data()[c];
			for (std::size_t i = 0; i < plane; ++i) {
				const double n = (x[base + i] - mu[c]) * inv_std[c];
				xh[base + i] = n;
				y[base + i] = gm * n + bt;
			}
		}

	Tensor in = input, gm = gamma, bt = beta;
	return detail::finish("batch_norm", std::move(out), {&input, &gamma, &beta},
			[in, gm, bt, xhat, inv_std, mode, batch, channels, plane, count](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				auto gg = detail::grad_sink(gm);
				auto gb = detail::grad_sink(bt);
				const auto xh = xhat.data();
				for (std::size_t c = 0; c < channels; ++c) {
					double sum_g = 0.0, sum_gx = 0.0;
					for (std::size_t b = 0; b < batch; ++b) {
						const std::size_t base = (b * channels + c) * plane;
						for (std::size_t i = 0; i < plane; ++i) {
							sum_g += g[base + i];
							sum_gx += g[base + i] * xh[base + i];
						}
					}
					if (!gg.empty()) gg[c] += sum_gx;
					if (!gb.empty()) gb[c] += sum_g;
					if (gx.empty()) continue;
					const double scale = gm.data()[c] * inv_std[c];
					const double n = static_cast<double>(count);
					for (std::size_t b = 0; b < batch; ++b) {
						const std::size_t base = (b * channels + c) * plane;
						for (std::size_t i = 0; i < plane; ++i) {
							if (mode == NormMode::Train)
								gx[base + i] += scale * (g[base + i] - sum_g / n - xh[base + i] * sum_gx / n);
							else
								gx[base + i] += scale * g[base + i];
						}
					}
				}
			});
}

}  // namespace ssmaf
