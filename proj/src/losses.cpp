#include "ssmaf/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ssmaf/ops.hpp"

namespace ssmaf {

void CBCEConfig::validate() const {
	if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("cbce beta must lie in [0,1)");
}

void RMIConfig::validate() const {
	if (region < 1) throw std::invalid_argument("rmi region must be >= 1");
	if (downsample_stride < 1) throw std::invalid_argument("rmi downsample_stride must be >= 1");
	if (!(eps > 0.0)) throw std::invalid_argument("rmi eps must be > 0");
	if (!(bce_weight >= 0.0 && bce_weight <= 1.0)) throw std::invalid_argument("rmi bce_weight must lie in [0,1]");
}

const std::set<std::string>& LossConfig::keys() {
	static const std::set<std::string> k = {"loss.cbce_beta", "loss.rmi_region", "loss.rmi_stride", "loss.rmi_eps",
			"loss.rmi_bce_weight"};
	return k;
}

void LossConfig::store(KeyValueConfig& cfg) const {
	cfg.set("loss.cbce_beta", format_double(cbce.beta));
	cfg.set("loss.rmi_region", std::to_string(rmi.region));
	cfg.set("loss.rmi_stride", std::to_string(rmi.downsample_stride));
	cfg.set("loss.rmi_eps", format_double(rmi.eps));
	cfg.set("loss.rmi_bce_weight", format_double(rmi.bce_weight));
}

void LossConfig::load(const KeyValueConfig& cfg) {
	cfg.read("loss.cbce_beta", cbce.beta);
	cfg.read("loss.rmi_region", rmi.region);
	cfg.read("loss.rmi_stride", rmi.downsample_stride);
	cfg.read("loss.rmi_eps", rmi.eps);
	cfg.read("loss.rmi_bce_weight", rmi.bce_weight);
	cbce.validate();
	rmi.validate();
}

double cbce_class_weight(std::size_t n, double beta) {
	if (n == 0) return 0.0;
	return (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n)));
}

void require_one_hot(const Tensor& target, const char* op) {
	if (!target.defined() || target.rank() != 4) throw std::invalid_argument(std::string(op) + ": target must be [B,C,H,W]");
	const std::size_t batch = target.dim(0), channels = target.dim(1), plane = target.dim(2) * target.dim(3);
	auto y = target.data();
	for (std::size_t b = 0; b < batch; ++b)
		for (std::size_t i = 0; i < plane; ++i) {
			int ones = 0;
			for (std::size_t c = 0; c < channels; ++c) {
				const double v = y[(b * channels + c) * plane + i];
				if (v == 1.0)
					++ones;
				else if (v != 0.0)
					throw std::invalid_argument(std::string(op) + ": target is not one-hot (value " + format_double(v) + ")");
			}
			if (ones != 1) throw std::invalid_argument(std::string(op) + ": target is not one-hot at pixel " + std::to_string(i));
		}
}

Tensor cbce_loss(const Tensor& logits, const Tensor& target, const CBCEConfig& cfg) {
	cfg.validate();
	if (!logits.defined() || logits.rank() != 4) throw std::invalid_argument("cbce_loss: logits must be [B,C,H,W]");
	if (logits.shape() != target.shape())
		throw std::invalid_argument("cbce_loss: logits " + shape_str(logits.shape()) + " vs target " +
				shape_str(target.shape()));
	require_one_hot(target, "cbce_loss");
	const std::size_t batch = logits.dim(0), channels = logits.dim(1), plane = logits.dim(2) * logits.dim(3);

	// Per-pixel weight y_c * w_c with w_c from this image's class counts.
	Tensor weights(target.shape());
	auto y = target.data();
	auto w = weights.data();
	for (std::size_t b = 0; b < batch; ++b)
		for (std::size_t c = 0; c < channels; ++c) {
			const std::size_t base = (b * channels + c) * plane;
			std::size_t n = 0;
			for (std::size_t i = 0; i < plane; ++i) n += y[base + i] == 1.0;
			const double wc = cbce_class_weight(n, cfg.beta);
			for (std::size_t i = 0; i < plane; ++i) w[base + i] = y[base + i] * wc;
		}

	Tensor logz = log(clamp(softmax_channels(logits), kProbClamp, 1.0 - kProbClamp));
	return scale(sum(mul(logz, weights)), -1.0 / static_cast<double>(channels * batch));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
	if (!pred.defined() || !target.defined() || pred.shape() != target.shape())
		throw std::invalid_argument("mse_loss: shape mismatch " + (pred.defined() ? shape_str(pred.shape()) : "[]") +
				" vs " + (target.defined() ? shape_str(target.shape()) : "[]"));
	return mean(square(sub(pred, target)));
}

Tensor rmi_lower_bound(const Tensor& probs, const Tensor& target, const RMIConfig& cfg) {
	cfg.validate();
	if (!probs.defined() || probs.rank() != 4 || probs.shape() != target.shape())
		throw std::invalid_argument("rmi: probs and target must be matching [B,C,H,W] tensors");
	Tensor p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
	Tensor y = target;
	if (cfg.downsample_stride > 1) {
		p = avg_pool2d(p, cfg.downsample_stride);
		y = avg_pool2d(y, cfg.downsample_stride);
	}
	const std::size_t d = cfg.region * cfg.region;
	Tensor yv = center_last(region_vectors(y, cfg.region));
	Tensor pv = center_last(region_vectors(p, cfg.region));
	Tensor pvt = transpose_last2(pv);
	Tensor cov_yy = matmul(yv, transpose_last2(yv));
	Tensor cov_yp = matmul(yv, pvt);
	Tensor cov_pp = matmul(pv, pvt);
	Tensor pp_inv = spd_inverse(add_identity(cov_pp, cfg.eps));
	Tensor cond = sub(cov_yy, matmul(matmul(cov_yp, pp_inv), transpose_last2(cov_yp)));
	Tensor logdet;
	try {
		logdet = cholesky_logdet(add_identity(cond, cfg.eps));
	} catch (const NotPositiveDefinite&) {
		// One retry with doubled jitter; a second failure propagates.
		logdet = cholesky_logdet(add_identity(cond, 2.0 * cfg.eps));
	}
	return scale(mean(logdet), 1.0 / (2.0 * static_cast<double>(d)));
}

Tensor rmi_loss(const Tensor& probs, const Tensor& target, const RMIConfig& cfg) {
	cfg.validate();
	if (!probs.defined() || probs.shape() != target.shape())
		throw std::invalid_argument("rmi_loss: probs and target shapes differ");
	Tensor p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
	Tensor ones(target.shape(), 1.0);
	Tensor not_y = sub(ones, target);
	Tensor bce = scale(mean(add(mul(target, log(p)), mul(not_y, log(add_scalar(scale(p, -1.0), 1.0))))), -1.0);
	Tensor lb = rmi_lower_bound(probs, target, cfg);
	return add(scale(bce, cfg.bce_weight), scale(lb, 1.0 - cfg.bce_weight));
}

Tensor maf_loss(const Tensor& fu_seg_logits, const Tensor& target, const Tensor& fu_sr, const Tensor& hr,
		const RMIConfig& cfg) {
	return add(rmi_loss(softmax_channels(fu_seg_logits), target, cfg), mse_loss(fu_sr, hr));
}

LossBreakdown total_loss(const ForwardBundle& bundle, const Tensor& target, const Tensor& hr, Variant variant,
		const LossConfig& cfg) {
	auto need = [variant](const Tensor& t, const char* field) {
		if (!t.defined())
			throw std::invalid_argument(std::string("total_loss: bundle lacks ") + field + " required by variant " +
					std::string(variant_name(variant)));
	};
	need(bundle.o_seg, "o_seg");
	LossBreakdown out;
	Tensor total = cbce_loss(bundle.o_seg, target, cfg.cbce);
	out.cbce = total.item();
	if (variant_has_sr(variant)) {
		need(bundle.o_sr, "o_sr");
		Tensor mse = mse_loss(bundle.o_sr, hr);
		out.mse = mse.item();
		total = add(total, mse);
	}
	if (variant_has_maf(variant)) {
		need(bundle.o_fuseg, "o_fuseg");
		need(bundle.o_fusr, "o_fusr");
		Tensor maf = maf_loss(bundle.o_fuseg, target, bundle.o_fusr, hr, cfg.rmi);
		out.maf = maf.item();
		total = add(total, maf);
	}
	out.total = total;
	return out;
}

}  // namespace ssmaf
