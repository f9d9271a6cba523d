#ifndef SSMAF_MODEL_HPP_
#define SSMAF_MODEL_HPP_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssmaf/config.hpp"
#include "ssmaf/ops.hpp"
#include "ssmaf/random.hpp"
#include "ssmaf/tensor.hpp"

namespace ssmaf {

/// Ablation variants: plain U-Net, U-Net + interpolated head, + SR stream, + MAF fusion.
enum class Variant { Baseline, Interp, InterpSR, InterpSRMAF };

std::string_view variant_name(Variant v);
/// Accepts baseline, interp, interp_sr, interp_sr_maf.
Variant parse_variant(std::string_view name);
inline bool variant_has_sr(Variant v) { return v == Variant::InterpSR || v == Variant::InterpSRMAF; }
inline bool variant_has_maf(Variant v) { return v == Variant::InterpSRMAF; }
inline bool variant_upsamples(Variant v) { return v != Variant::Baseline; }

struct ModelConfig {
	int in_channels = 3;
	int num_classes = 2;
	int upscale = 2;
	int base_width = 16;
	int depth = 3;
	int fusion_dim = 32;
	int ssc_groups = 4;
	int sr_hidden = 32;
	Variant variant = Variant::InterpSRMAF;

	void validate() const;
	/// Channel width of encoder stage `s`.
	int stage_width(int s) const { return base_width << s; }

	void store(KeyValueConfig& cfg) const;
	void load(const KeyValueConfig& cfg);
	static const std::set<std::string>& keys();

	bool operator==(const ModelConfig&) const = default;
};

/**
 * Named learnable tensors plus non-learnable buffers (batch-norm running statistics). Names are
 * hierarchical ("enc.s0.c1.conv.weight") and unique; iteration order is lexicographic.
 */
class ParamStore {
public:
	Tensor& add_param(const std::string& name, Shape shape, bool decay);
	Tensor& add_buffer(const std::string& name, Shape shape, double fill);

	bool contains(const std::string& name) const { return params_.count(name) != 0; }
	Tensor& param(const std::string& name);
	const Tensor& param(const std::string& name) const;
	Tensor& buffer(const std::string& name);
	const Tensor& buffer(const std::string& name) const;
	/// True for convolution weights, which take weight decay; biases and norm affines do not.
	bool decays(const std::string& name) const { return decay_.count(name) != 0; }

	const std::map<std::string, Tensor>& params() const { return params_; }
	const std::map<std::string, Tensor>& buffers() const { return buffers_; }
	std::set<std::string> names() const;
	std::size_t numel() const;

	void zero_grad();

private:
	std::map<std::string, Tensor> params_;
	std::map<std::string, Tensor> buffers_;
	std::set<std::string> decay_;
};

struct Conv {
	Tensor weight;
	Tensor bias;  // undefined when the layer has none
	Conv2dOptions opt;

	Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, opt); }
};

struct BatchNorm {
	Tensor gamma, beta;
	BatchNormStats stats;

	Tensor operator()(const Tensor& x, NormMode mode) { return batch_norm(x, gamma, beta, stats, mode); }
};

struct ConvBnRelu {
	Conv conv;
	BatchNorm bn;

	Tensor operator()(const Tensor& x, NormMode mode) { return relu(bn(conv(x), mode)); }
};

struct EncoderOutput {
	Tensor features;            // F_en, deepest stage
	std::vector<Tensor> skips;  // one per stage, shallowest first; skips.back() is features
};

/// Outputs of one training forward pass. Optional members are undefined tensors when absent.
struct ForwardBundle {
	Tensor o_seg;    // [B,C,N*H,N*W] logits (input resolution for Baseline)
	Tensor o_sr;     // [B,3,N*H,N*W]
	Tensor o_fuseg;  // fusion segmentation logits, shaped like o_seg
	Tensor o_fusr;   // fusion reconstruction, shaped like o_sr
	Tensor f_seg;    // [B,base_width,H,W]
	Tensor f_sr;
};

/**
 * Dual-stream U-Net. A shared encoder feeds a segmentation decoder and (for the SR variants) a
 * super-resolution decoder; the MAF variant adds the split-spatial-convolution fusion module whose
 * re-weighted features pass through the same head objects as the streams, so fusion and stream
 * heads share storage.
 */
class SsmafModel {
public:
	SsmafModel(const ModelConfig& config, std::uint64_t seed);
	// Layers hold handles into params_, so a copy would silently alias; moves are fine.
	SsmafModel(const SsmafModel&) = delete;
	SsmafModel& operator=(const SsmafModel&) = delete;
	SsmafModel(SsmafModel&&) = default;
	SsmafModel& operator=(SsmafModel&&) = default;

	const ModelConfig& config() const { return config_; }
	ParamStore& params() { return params_; }
	const ParamStore& params() const { return params_; }

	void set_training(bool training) { mode_ = training ? NormMode::Train : NormMode::Eval; }
	bool training() const { return mode_ == NormMode::Train; }

	EncoderOutput encode(const Tensor& x);
	Tensor decode_seg(const EncoderOutput& enc);
	Tensor decode_sr(const EncoderOutput& enc);
	/// 1x1 conv to C logits, then bilinear xN unless `upsample` is false.
	Tensor seg_head(const Tensor& f, bool upsample = true);
	/// ESPCN head: 3x3 conv + ReLU, 3x3 conv to 3*N*N channels, pixel shuffle by N.
	Tensor sr_head(const Tensor& f);
	Tensor ssc_forward(const Tensor& fused);
	/// Returns (W_Seg*F_Seg + F_Seg, W_SR*F_SR + F_SR).
	std::pair<Tensor, Tensor> maf_forward(const Tensor& f_seg, const Tensor& f_sr);
	/// Attention weights (W_Seg, W_SR) for the given stream features.
	std::pair<Tensor, Tensor> maf_weights(const Tensor& f_seg, const Tensor& f_sr);

	ForwardBundle forward_train(const Tensor& x) { return forward_train(x, config_.variant); }
	ForwardBundle forward_train(const Tensor& x, Variant variant);
	/// Segmentation stream only, batch-norm in eval mode, channel softmax applied.
	Tensor forward_infer(const Tensor& x);

	/// Output resolution factor of the segmentation head for the configured variant.
	int output_scale() const { return variant_upsamples(config_.variant) ? config_.upscale : 1; }

private:
	struct Decoder {
		std::vector<ConvBnRelu> first, second;  // index s: decoder stage producing stage_width(s)
	};

	Tensor run_decoder(Decoder& dec, const EncoderOutput& enc);

	ModelConfig config_;
	ParamStore params_;
	NormMode mode_ = NormMode::Train;

	std::vector<ConvBnRelu> enc_first_, enc_second_;
	Decoder dec_seg_, dec_sr_;
	Conv seg_conv_;
	Conv sr_conv1_, sr_conv2_;
	Conv maf_align_;
	std::vector<Conv> ssc_groups_;
	BatchNorm ssc_bn_;
	Conv att_seg_, att_sr_;
};

SsmafModel build_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace ssmaf

#endif  // SSMAF_MODEL_HPP_
