#include <cmath>
#include <vector>

#include "ops_common.hpp"
#include "ssmaf/ops.hpp"

namespace ssmaf {

namespace {

using detail::ConstMatMap;
using detail::MatMap;
using detail::RowMat;

struct MatrixBatch {
	Shape lead;
	std::size_t count = 1, rows = 0, cols = 0;
};

MatrixBatch matrix_batch(const Tensor& t, const char* op) {
	if (!t.defined() || t.rank() < 2)
		throw std::invalid_argument(std::string(op) + ": expected a tensor of rank >= 2");
	const Shape& s = t.shape();
	MatrixBatch m;
	m.lead.assign(s.begin(), s.end() - 2);
	for (std::size_t e : m.lead) m.count *= e;
	m.rows = s[s.size() - 2];
	m.cols = s[s.size() - 1];
	return m;
}

Shape with_matrix(const Shape& lead, std::size_t rows, std::size_t cols) {
	Shape s = lead;
	s.push_back(rows);
	s.push_back(cols);
	return s;
}

/// Lower Cholesky factor of sym(a) into `l`. Returns false on a non-positive pivot.
bool cholesky_sym(const double* a, std::size_t n, double* l) {
	for (std::size_t i = 0; i < n * n; ++i) l[i] = 0.0;
	for (std::size_t j = 0; j < n; ++j) {
		double d = 0.5 * (a[j * n + j] + a[j * n + j]);
		for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
		if (!(d > 0.0) || !std::isfinite(d)) return false;
		const double ljj = std::sqrt(d);
		l[j * n + j] = ljj;
		for (std::size_t i = j + 1; i < n; ++i) {
			double s = 0.5 * (a[i * n + j] + a[j * n + i]);
			for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
			l[i * n + j] = s / ljj;
		}
	}
	return true;
}

/// inv = (L L^T)^{-1} from the lower factor.
void cholesky_inverse(const double* l, std::size_t n, double* inv) {
	// Solve L L^T X = I column by column.
	Buffer y(n);
	for (std::size_t col = 0; col < n; ++col) {
		for (std::size_t i = 0; i < n; ++i) {
			double s = (i == col) ? 1.0 : 0.0;
			for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
			y[i] = s / l[i * n + i];
		}
		for (std::size_t ii = n; ii-- > 0;) {
			double s = y[ii];
			for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * inv[k * n + col];
			inv[ii * n + col] = s / l[ii * n + ii];
		}
	}
}

void require_square(const MatrixBatch& m, const char* op) {
	if (m.rows != m.cols)
		throw std::invalid_argument(std::string(op) + ": matrices must be square, got " + std::to_string(m.rows) + "x" +
				std::to_string(m.cols));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
	const MatrixBatch ma = matrix_batch(a, "matmul"), mb = matrix_batch(b, "matmul");
	if (ma.lead != mb.lead || ma.cols != mb.rows)
		throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
				shape_str(b.shape()));
	const std::size_t m = ma.rows, k = ma.cols, n = mb.cols;
	Tensor out(with_matrix(ma.lead, m, n));
	for (std::size_t i = 0; i < ma.count; ++i)
		MatMap(out.data().data() + i * m * n, m, n).noalias() =
				ConstMatMap(a.data().data() + i * m * k, m, k) * ConstMatMap(b.data().data() + i * k * n, k, n);
	Tensor ta = a, tb = b;
	const std::size_t count = ma.count;
	return detail::finish("matmul", std::move(out), {&a, &b}, [ta, tb, count, m, k, n](std::span<const double> g) mutable {
		auto ga = detail::grad_sink(ta);
		auto gb = detail::grad_sink(tb);
		for (std::size_t i = 0; i < count; ++i) {
			ConstMatMap gc(g.data() + i * m * n, m, n);
			if (!ga.empty())
				MatMap(ga.data() + i * m * k, m, k).noalias() +=
						gc * ConstMatMap(tb.data().data() + i * k * n, k, n).transpose();
			if (!gb.empty())
				MatMap(gb.data() + i * k * n, k, n).noalias() +=
						ConstMatMap(ta.data().data() + i * m * k, m, k).transpose() * gc;
		}
	});
}

Tensor transpose_last2(const Tensor& x) {
	const MatrixBatch mx = matrix_batch(x, "transpose_last2");
	const std::size_t r = mx.rows, c = mx.cols;
	Tensor out(with_matrix(mx.lead, c, r));
	for (std::size_t i = 0; i < mx.count; ++i)
		MatMap(out.data().data() + i * r * c, c, r) = ConstMatMap(x.data().data() + i * r * c, r, c).transpose();
	Tensor in = x;
	const std::size_t count = mx.count;
	return detail::finish("transpose_last2", std::move(out), {&x}, [in, count, r, c](std::span<const double> g) mutable {
		auto gx = detail::grad_sink(in);
		for (std::size_t i = 0; i < count; ++i)
			MatMap(gx.data() + i * r * c, r, c) += ConstMatMap(g.data() + i * r * c, c, r).transpose();
	});
}

Tensor add_identity(const Tensor& x, double s) {
	const MatrixBatch mx = matrix_batch(x, "add_identity");
	require_square(mx, "add_identity");
	Tensor out = x.clone();
	out.set_requires_grad(false);
	const std::size_t n = mx.rows;
	for (std::size_t i = 0; i < mx.count; ++i)
		for (std::size_t j = 0; j < n; ++j) out.data()[i * n * n + j * n + j] += s;
	Tensor in = x;
	return detail::finish("add_identity", std::move(out), {&x}, [in](std::span<const double> g) mutable {
		auto gx = detail::grad_sink(in);
		for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
	});
}

Tensor spd_inverse(const Tensor& x) {
	const MatrixBatch mx = matrix_batch(x, "spd_inverse");
	require_square(mx, "spd_inverse");
	const std::size_t n = mx.rows;
	Tensor out(x.shape());
	Buffer l(n * n);
	for (std::size_t i = 0; i < mx.count; ++i) {
		if (!cholesky_sym(x.data().data() + i * n * n, n, l.data()))
			throw NotPositiveDefinite("spd_inverse: matrix " + std::to_string(i) + " is not positive definite");
		cholesky_inverse(l.data(), n, out.data().data() + i * n * n);
	}
	Tensor in = x, inv = out;
	const std::size_t count = mx.count;
	return detail::finish("spd_inverse", std::move(out), {&x}, [in, inv, count, n](std::span<const double> g) mutable {
		auto gx = detail::grad_sink(in);
		for (std::size_t i = 0; i < count; ++i) {
			ConstMatMap b(inv.data().data() + i * n * n, n, n);
			ConstMatMap gy(g.data() + i * n * n, n, n);
			const RowMat m = -(b * gy * b);
			MatMap(gx.data() + i * n * n, n, n) += 0.5 * (m + m.transpose());
		}
	});
}

Tensor cholesky_logdet(const Tensor& x) {
	const MatrixBatch mx = matrix_batch(x, "cholesky_logdet");
	require_square(mx, "cholesky_logdet");
	const std::size_t n = mx.rows;
	Tensor out(mx.lead.empty() ? Shape{1} : mx.lead);
	Buffer inverses(mx.count * n * n);
	Buffer l(n * n);
	for (std::size_t i = 0; i < mx.count; ++i) {
		if (!cholesky_sym(x.data().data() + i * n * n, n, l.data()))
			throw NotPositiveDefinite("cholesky_logdet: matrix " + std::to_string(i) + " is not positive definite");
		double s = 0.0;
		for (std::size_t j = 0; j < n; ++j) s += std::log(l[j * n + j]);
		out.data()[i] = 2.0 * s;
		cholesky_inverse(l.data(), n, inverses.data() + i * n * n);
	}
	Tensor in = x;
	const std::size_t count = mx.count;
	return detail::finish("cholesky_logdet", std::move(out), {&x},
			[in, inverses = std::move(inverses), count, n](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				for (std::size_t i = 0; i < count; ++i) {
					const double* inv = inverses.data() + i * n * n;
					for (std::size_t j = 0; j < n * n; ++j) gx[i * n * n + j] += g[i] * inv[j];
				}
			});
}

Tensor center_last(const Tensor& x) {
	if (!x.defined()) throw std::invalid_argument("center_last: undefined operand");
	const std::size_t len = x.shape().back();
	const std::size_t rows = x.numel() / len;
	Tensor out(x.shape());
	for (std::size_t r = 0; r < rows; ++r) {
		const double* src = x.data().data() + r * len;
		double* dst = out.data().data() + r * len;
		double s = 0.0;
		for (std::size_t i = 0; i < len; ++i) s += src[i];
		const double m = s / static_cast<double>(len);
		for (std::size_t i = 0; i < len; ++i) dst[i] = src[i] - m;
	}
	Tensor in = x;
	return detail::finish("center_last", std::move(out), {&x}, [in, rows, len](std::span<const double> g) mutable {
		auto gx = detail::grad_sink(in);
		for (std::size_t r = 0; r < rows; ++r) {
			const double* src = g.data() + r * len;
			double s = 0.0;
			for (std::size_t i = 0; i < len; ++i) s += src[i];
			const double m = s / static_cast<double>(len);
			for (std::size_t i = 0; i < len; ++i) gx[r * len + i] += src[i] - m;
		}
	});
}

Tensor region_vectors(const Tensor& x, std::size_t r) {
	detail::require_rank(x, 4, "region_vectors");
	const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
	if (r < 1 || r > h || r > w)
		throw std::invalid_argument("region_vectors: region " + std::to_string(r) + " does not fit " +
				shape_str(x.shape()));
	const std::size_t vh = h - r + 1, vw = w - r + 1, npos = vh * vw, dims = r * r;
	Tensor out({x.dim(0), x.dim(1), dims, npos});
	for (std::size_t p = 0; p < planes; ++p) {
		const double* src = x.data().data() + p * h * w;
		double* dst = out.data().data() + p * dims * npos;
		for (std::size_t dy = 0; dy < r; ++dy)
			for (std::size_t dx = 0; dx < r; ++dx) {
				double* row = dst + (dy * r + dx) * npos;
				for (std::size_t i = 0; i < vh; ++i)
					for (std::size_t j = 0; j < vw; ++j) row[i * vw + j] = src[(i + dy) * w + j + dx];
			}
	}
	Tensor in = x;
	return detail::finish("region_vectors", std::move(out), {&x},
			[in, planes, h, w, r, vh, vw, npos, dims](std::span<const double> g) mutable {
				auto gx = detail::grad_sink(in);
				for (std::size_t p = 0; p < planes; ++p) {
					double* dst = gx.data() + p * h * w;
					const double* src = g.data() + p * dims * npos;
					for (std::size_t dy = 0; dy < r; ++dy)
						for (std::size_t dx = 0; dx < r; ++dx) {
							const double* row = src + (dy * r + dx) * npos;
							for (std::size_t i = 0; i < vh; ++i)
								for (std::size_t j = 0; j < vw; ++j) dst[(i + dy) * w + j + dx] += row[i * vw + j];
						}
				}
			});
}

}  // namespace ssmaf
