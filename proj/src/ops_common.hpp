#ifndef SSMAF_SRC_OPS_COMMON_HPP_
#define SSMAF_SRC_OPS_COMMON_HPP_

#include <Eigen/Core>
#include <span>
#include <stdexcept>
#include <string>

#include "ssmaf/tensor.hpp"

namespace ssmaf::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
	if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
	if (t.rank() != rank)
		throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
				shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
	if (a.shape() != b.shape())
		throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
				shape_str(b.shape()));
}

/// Gradient sink for `t`, or an empty span when `t` does not take gradients.
inline std::span<double> grad_sink(Tensor& t) {
	if (!t.defined() || !t.requires_grad()) return {};
	return t.grad_buffer();
}

}  // namespace ssmaf::detail

#endif  // SSMAF_SRC_OPS_COMMON_HPP_
