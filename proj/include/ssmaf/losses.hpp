#ifndef SSMAF_LOSSES_HPP_
#define SSMAF_LOSSES_HPP_

#include <cstddef>
#include <set>
#include <string>

#include "ssmaf/config.hpp"
#include "ssmaf/model.hpp"
#include "ssmaf/tensor.hpp"

namespace ssmaf {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any logarithm.
inline constexpr double kProbClamp = 1e-6;

struct CBCEConfig {
	double beta = 0.9999;

	void validate() const;
};

/// Region mutual information settings. Regions are `region` x `region` windows after average
/// pooling by `downsample_stride`.
struct RMIConfig {
	std::size_t region = 3;
	std::size_t downsample_stride = 2;
	double eps = 5e-4;
	double bce_weight = 0.5;

	void validate() const;
};

struct LossConfig {
	CBCEConfig cbce;
	RMIConfig rmi;

	void store(KeyValueConfig& cfg) const;
	void load(const KeyValueConfig& cfg);
	static const std::set<std::string>& keys();
};

/// (1 - beta) / (1 - beta^n); 0 for n = 0.
double cbce_class_weight(std::size_t n, double beta);

/**
 * Class-balanced softmax cross entropy. `target` is one-hot [B,C,H,W]. Per image, class c with
 * n_c pixels is weighted by cbce_class_weight(n_c); the loss is (1/C) * sum_c w_c * sum_pixels
 * -y_c log z_c, averaged over the batch.
 */
Tensor cbce_loss(const Tensor& logits, const Tensor& target, const CBCEConfig& cfg = {});

Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// The log-determinant part of RMI alone, (1/(2 d)) log det(cov(Y|P) + eps I) averaged over
/// batch and classes. `probs` are clamped first.
Tensor rmi_lower_bound(const Tensor& probs, const Tensor& target, const RMIConfig& cfg = {});

/// bce_weight * BCE(probs, target) + (1 - bce_weight) * rmi_lower_bound(probs, target).
Tensor rmi_loss(const Tensor& probs, const Tensor& target, const RMIConfig& cfg = {});

/// rmi_loss(softmax(fu_seg_logits), target) + mse_loss(fu_sr, hr).
Tensor maf_loss(const Tensor& fu_seg_logits, const Tensor& target, const Tensor& fu_sr, const Tensor& hr,
		const RMIConfig& cfg = {});

struct LossBreakdown {
	Tensor total;
	double cbce = 0.0;
	double mse = 0.0;
	double maf = 0.0;
};

/**
 * Variant-dependent objective: CBCE for Baseline/Interp, + MSE for InterpSR, + MAF loss for
 * InterpSRMAF. `target` must match o_seg's resolution and `hr` o_sr's.
 */
LossBreakdown total_loss(const ForwardBundle& bundle, const Tensor& target, const Tensor& hr, Variant variant,
		const LossConfig& cfg = {});

/// Throws unless every pixel of `target` [B,C,H,W] has exactly one channel equal to 1, others 0.
void require_one_hot(const Tensor& target, const char* op);

}  // namespace ssmaf

#endif  // SSMAF_LOSSES_HPP_
