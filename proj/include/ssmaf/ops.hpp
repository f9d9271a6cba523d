#ifndef SSMAF_OPS_HPP_
#define SSMAF_OPS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmaf/tensor.hpp"

namespace ssmaf {

/// Raised by cholesky_logdet / spd_inverse when a pivot is not strictly positive.
class NotPositiveDefinite : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct Conv2dOptions {
	std::size_t stride = 1;
	std::size_t padding = 0;
	std::size_t dilation = 1;
};

/// Running statistics of one batch-norm layer. Both tensors have shape [C].
struct BatchNormStats {
	Tensor mean;
	Tensor var;

	static BatchNormStats init(std::size_t channels);
};

enum class NormMode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// ---- spatial ---------------------------------------------------------------------------------

/**
 * 2-D cross-correlation. `input` is [C_in,H,W] or [B,C_in,H,W]; `weight` is [C_out,C_in,kh,kw];
 * `bias` (optional, pass an undefined Tensor to omit) is [C_out]. The output keeps the rank of the
 * input.
 */
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

/**
 * Per-channel normalization over B*H*W. In Train mode the batch statistics are used and `stats`
 * is updated by an exponential moving average; in Eval mode `stats` is used as is.
 */
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
		NormMode mode, double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

/// [B, c*r*r, H, W] -> [B, c, r*H, r*W] with out(b,c,r*h+dy,r*w+dx) = in(b, c*r*r + dy*r + dx, h, w).
Tensor pixel_shuffle(const Tensor& input, std::size_t r);

/// Bilinear resize by an integer factor, half-pixel centers, edge clamped.
Tensor interpolate_bilinear(const Tensor& input, std::size_t scale);

/// 2x2 window, stride 2. Ties route the gradient to the first maximum in row-major order.
Tensor max_pool2d(const Tensor& input);

/// k x k window, stride k, mean. Extents must be divisible by k.
Tensor avg_pool2d(const Tensor& input, std::size_t k);

// ---- channel structure ----------------------------------------------------------------------

/// Softmax over axis 1 of a [B,C,H,W] tensor.
Tensor softmax_channels(const Tensor& input);
Tensor concat_channels(const std::vector<Tensor>& inputs);
/// Channels [begin, end) of a [B,C,H,W] tensor.
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end);

// ---- elementwise ----------------------------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
/// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

// ---- reductions -----------------------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- matrices -------------------------------------------------------------------------------
// Matrix ops act on the last two axes; any leading axes are batch axes and must agree.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
/// x + s*I on each trailing square matrix.
Tensor add_identity(const Tensor& x, double s);
/// Inverse of sym(x) = (x + x^T)/2 via Cholesky.
Tensor spd_inverse(const Tensor& x);
/**
 * log det(sym(x)) = 2 * sum(log L_ii) from the Cholesky factor of sym(x). A [n,n] input yields a
 * [1] tensor; a [...,n,n] input yields one value per matrix.
 */
Tensor cholesky_logdet(const Tensor& x);

/// Subtracts the mean along the last axis.
Tensor center_last(const Tensor& x);

/**
 * Stacks the R x R neighbourhood of every valid pixel: [B,C,H,W] -> [B,C,R*R,(H-R+1)*(W-R+1)].
 * Component dy*R+dx of column i*(W-R+1)+j is x(b,c,i+dy,j+dx).
 */
Tensor region_vectors(const Tensor& x, std::size_t r);

}  // namespace ssmaf

#endif  // SSMAF_OPS_HPP_
