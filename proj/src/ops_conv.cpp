#include <algorithm>
#include <vector>

#include "ops_common.hpp"
#include "ssmaf/ops.hpp"

namespace ssmaf {

namespace {

using detail::ConstMatMap;
using detail::MatMap;

struct ConvGeom {
	std::size_t batch, c_in, h, w;
	std::size_t c_out, kh, kw;
	std::size_t stride, pad, dil;
	std::size_t ho, wo;

	std::size_t k() const { return c_in * kh * kw; }
	std::size_t pixels_out() const { return ho * wo; }
	bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
	const std::size_t npix = g.pixels_out();
	for (std::size_t c = 0; c < g.c_in; ++c) {
		const double* xc = x + c * g.h * g.w;
		for (std::size_t ky = 0; ky < g.kh; ++ky) {
			for (std::size_t kx = 0; kx < g.kw; ++kx) {
				double* row = col + ((c * g.kh + ky) * g.kw + kx) * npix;
				for (std::size_t oy = 0; oy < g.ho; ++oy) {
					const long iy = static_cast<long>(oy * g.stride + ky * g.dil) - static_cast<long>(g.pad);
					double* dst = row + oy * g.wo;
					if (iy < 0 || iy >= static_cast<long>(g.h)) {
						std::fill(dst, dst + g.wo, 0.0);
						continue;
					}
					const double* src = xc + static_cast<std::size_t>(iy) * g.w;
					for (std::size_t ox = 0; ox < g.wo; ++ox) {
						const long ix = static_cast<long>(ox * g.stride + kx * g.dil) - static_cast<long>(g.pad);
						dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
					}
				}
			}
		}
	}
}

void col2im(const double* col, const ConvGeom& g, double* x) {
	const std::size_t npix = g.pixels_out();
	for (std::size_t c = 0; c < g.c_in; ++c) {
		double* xc = x + c * g.h * g.w;
		for (std::size_t ky = 0; ky < g.kh; ++ky) {
			for (std::size_t kx = 0; kx < g.kw; ++kx) {
				const double* row = col + ((c * g.kh + ky) * g.kw + kx) * npix;
				for (std::size_t oy = 0; oy < g.ho; ++oy) {
					const long iy = static_cast<long>(oy * g.stride + ky * g.dil) - static_cast<long>(g.pad);
					if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
					const double* src = row + oy * g.wo;
					double* dst = xc + static_cast<std::size_t>(iy) * g.w;
					for (std::size_t ox = 0; ox < g.wo; ++ox) {
						const long ix = static_cast<long>(ox * g.stride + kx * g.dil) - static_cast<long>(g.pad);
						if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
					}
				}
			}
		}
	}
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
	if (!input.defined() || !weight.defined()) throw std::invalid_argument("conv2d: undefined operand");
	const bool batched = input.rank() == 4;
	if (!batched && input.rank() != 3)
		throw std::invalid_argument("conv2d: input must be [C,H,W] or [B,C,H,W], got " + shape_str(input.shape()));
	detail::require_rank(weight, 4, "conv2d weight");
	if (opt.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
	if (opt.dilation < 1) throw std::invalid_argument("conv2d: dilation must be >= 1");

	ConvGeom g{};
	const std::size_t off = batched ? 1 : 0;
	g.batch = batched ? input.dim(0) : 1;
	g.c_in = input.dim(off);
	g.h = input.dim(off + 1);
	g.w = input.dim(off + 2);
	g.c_out = weight.dim(0);
	g.kh = weight.dim(2);
	g.kw = weight.dim(3);
	g.stride = opt.stride;
	g.pad = opt.padding;
	g.dil = opt.dilation;
	if (weight.dim(1) != g.c_in)
		throw std::invalid_argument("conv2d: input has " + std::to_string(g.c_in) + " channels but weight " +
				shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
	if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.c_out))
		throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
				std::to_string(g.c_out) + " output channels");
	const std::size_t eff_h = g.dil * (g.kh - 1) + 1;
	const std::size_t eff_w = g.dil * (g.kw - 1) + 1;
	if (eff_h > g.h + 2 * g.pad || eff_w > g.w + 2 * g.pad)
		throw std::invalid_argument("conv2d: effective kernel " + std::to_string(eff_h) + "x" + std::to_string(eff_w) +
				" exceeds padded input " + std::to_string(g.h + 2 * g.pad) + "x" +
				std::to_string(g.w + 2 * g.pad));
	g.ho = (g.h + 2 * g.pad - eff_h) / g.stride + 1;
	g.wo = (g.w + 2 * g.pad - eff_w) / g.stride + 1;

	Shape out_shape = batched ? Shape{g.batch, g.c_out, g.ho, g.wo} : Shape{g.c_out, g.ho, g.wo};
	Tensor out(out_shape);

	const std::size_t in_stride = g.c_in * g.h * g.w;
	const std::size_t out_stride = g.c_out * g.pixels_out();
	ConstMatMap wmat(weight.data().data(), g.c_out, g.k());
	Buffer col(g.pointwise() ? 0 : g.k() * g.pixels_out());
	for (std::size_t b = 0; b < g.batch; ++b) {
		const double* xb = input.data().data() + b * in_stride;
		const double* colp = xb;
		if (!g.pointwise()) {
			im2col(xb, g, col.data());
			colp = col.data();
		}
		MatMap ob(out.data().data() + b * out_stride, g.c_out, g.pixels_out());
		ob.noalias() = wmat * ConstMatMap(colp, g.k(), g.pixels_out());
		if (bias.defined())
			for (std::size_t co = 0; co < g.c_out; ++co) ob.row(co).array() += bias.data()[co];
	}

	Tensor x = input, wt = weight, bs = bias;
	return detail::finish("conv2d", std::move(out), {&input, &weight, &bias},
			[x, wt, bs, g, in_stride, out_stride](std::span<const double> gout) mutable {
				auto gx = detail::grad_sink(x);
				auto gw = detail::grad_sink(wt);
				auto gb = detail::grad_sink(bs);
				ConstMatMap wmat(wt.data().data(), g.c_out, g.k());
				Buffer col(g.k() * g.pixels_out());
				for (std::size_t b = 0; b < g.batch; ++b) {
					ConstMatMap gy(gout.data() + b * out_stride, g.c_out, g.pixels_out());
					if (!gw.empty()) {
						const double* colp = x.data().data() + b * in_stride;
						if (!g.pointwise()) {
							im2col(colp, g, col.data());
							colp = col.data();
						}
						MatMap(gw.data(), g.c_out, g.k()).noalias() +=
								gy * ConstMatMap(colp, g.k(), g.pixels_out()).transpose();
					}
					if (!gb.empty())
						for (std::size_t co = 0; co < g.c_out; ++co) gb[co] += gy.row(co).sum();
					if (!gx.empty()) {
						if (g.pointwise()) {
							MatMap(gx.data() + b * in_stride, g.k(), g.pixels_out()).noalias() +=
									wmat.transpose() * gy;
						} else {
							MatMap gcol(col.data(), g.k(), g.pixels_out());
							gcol.noalias() = wmat.transpose() * gy;
							col2im(col.data(), g, gx.data() + b * in_stride);
						}
					}
				}
			});
}

}  // namespace ssmaf
