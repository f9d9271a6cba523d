#include "ssmaf/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmaf {

std::string_view variant_name(Variant v) {
	switch (v) {
		case Variant::Baseline: return "baseline";
		case Variant::Interp: return "interp";
		case Variant::InterpSR: return "interp_sr";
		case Variant::InterpSRMAF: return "interp_sr_maf";
	}
	return "unknown";
}

Variant parse_variant(std::string_view name) {
	if (name == "baseline") return Variant::Baseline;
	if (name == "interp") return Variant::Interp;
	if (name == "interp_sr") return Variant::InterpSR;
	if (name == "interp_sr_maf") return Variant::InterpSRMAF;
	throw std::invalid_argument("unknown variant '" + std::string(name) +
			"' (expected baseline, interp, interp_sr or interp_sr_maf)");
}

void ModelConfig::validate() const {
	auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid model config: " + msg); };
	if (in_channels < 1) fail("in_channels must be >= 1");
	if (num_classes < 2) fail("num_classes must be >= 2");
	if (upscale < 1) fail("upscale must be >= 1");
	if (base_width < 1) fail("base_width must be >= 1");
	if (depth < 2) fail("depth must be >= 2");
	if (depth > 12) fail("depth must be <= 12");
	if (ssc_groups < 2) fail("ssc_groups must be >= 2");
	if (fusion_dim < 1 || fusion_dim % ssc_groups != 0) fail("fusion_dim must be a positive multiple of ssc_groups");
	if (sr_hidden < 1) fail("sr_hidden must be >= 1");
}

const std::set<std::string>& ModelConfig::keys() {
	static const std::set<std::string> k = {"model.in_channels", "model.num_classes", "model.upscale",
			"model.base_width", "model.depth", "model.fusion_dim", "model.ssc_groups", "model.sr_hidden",
			"model.variant"};
	return k;
}

void ModelConfig::store(KeyValueConfig& cfg) const {
	cfg.set("model.in_channels", std::to_string(in_channels));
	cfg.set("model.num_classes", std::to_string(num_classes));
	cfg.set("model.upscale", std::to_string(upscale));
	cfg.set("model.base_width", std::to_string(base_width));
	cfg.set("model.depth", std::to_string(depth));
	cfg.set("model.fusion_dim", std::to_string(fusion_dim));
	cfg.set("model.ssc_groups", std::to_string(ssc_groups));
	cfg.set("model.sr_hidden", std::to_string(sr_hidden));
	cfg.set("model.variant", std::string(variant_name(variant)));
}

void ModelConfig::load(const KeyValueConfig& cfg) {
	cfg.read("model.in_channels", in_channels);
	cfg.read("model.num_classes", num_classes);
	cfg.read("model.upscale", upscale);
	cfg.read("model.base_width", base_width);
	cfg.read("model.depth", depth);
	cfg.read("model.fusion_dim", fusion_dim);
	cfg.read("model.ssc_groups", ssc_groups);
	cfg.read("model.sr_hidden", sr_hidden);
	if (auto v = cfg.get("model.variant")) variant = parse_variant(*v);
}

// ---- ParamStore ----------------------------------------------------------------------------------

Tensor& ParamStore::add_param(const std::string& name, Shape shape, bool decay) {
	if (params_.count(name) || buffers_.count(name)) throw std::logic_error("duplicate parameter name " + name);
	Tensor t(std::move(shape));
	t.set_requires_grad(true);
	if (decay) decay_.insert(name);
	return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::add_buffer(const std::string& name, Shape shape, double fill) {
	if (params_.count(name) || buffers_.count(name)) throw std::logic_error("duplicate buffer name " + name);
	return buffers_.emplace(name, Tensor(std::move(shape), fill)).first->second;
}

Tensor& ParamStore::param(const std::string& name) {
	auto it = params_.find(name);
	if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
	return it->second;
}

const Tensor& ParamStore::param(const std::string& name) const {
	auto it = params_.find(name);
	if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
	return it->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
	auto it = buffers_.find(name);
	if (it == buffers_.end()) throw std::out_of_range("no buffer named " + name);
	return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
	auto it = buffers_.find(name);
	if (it == buffers_.end()) throw std::out_of_range("no buffer named " + name);
	return it->second;
}

std::set<std::string> ParamStore::names() const {
	std::set<std::string> out;
	for (const auto& [name, t] : params_) out.insert(name);
	return out;
}

std::size_t ParamStore::numel() const {
	std::size_t n = 0;
	for (const auto& [name, t] : params_) n += t.numel();
	return n;
}

void ParamStore::zero_grad() {
	for (auto& [name, t] : params_) t.zero_grad();
}

// ---- construction --------------------------------------------------------------------------------

namespace {

/// Builds layers into a ParamStore. Each tensor is initialized from a stream keyed by its name, so
/// a given parameter starts identically in every variant built from the same seed.
class Builder {
public:
	Builder(ParamStore& store, std::uint64_t seed) : store_(store), seed_(seed) {}

	Conv conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, bool bias,
			Conv2dOptions opt = {}) {
		Conv c;
		c.weight = store_.add_param(name + ".weight", {cout, cin, k, k}, true);
		SplitMix64 rng(derive_seed(seed_, fnv1a(name + ".weight")));
		const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
		for (double& v : c.weight.data()) v = stddev * rng.normal();
		if (bias) c.bias = store_.add_param(name + ".bias", {cout}, false);
		c.opt = opt;
		return c;
	}

	BatchNorm bn(const std::string& name, std::size_t channels) {
		BatchNorm b;
		b.gamma = store_.add_param(name + ".gamma", {channels}, false);
		for (double& v : b.gamma.data()) v = 1.0;
		b.beta = store_.add_param(name + ".beta", {channels}, false);
		b.stats.mean = store_.add_buffer(name + ".running_mean", {channels}, 0.0);
		b.stats.var = store_.add_buffer(name + ".running_var", {channels}, 1.0);
		return b;
	}

	ConvBnRelu conv_bn_relu(const std::string& name, std::size_t cin, std::size_t cout) {
		return ConvBnRelu{conv(name + ".conv", cin, cout, 3, false, {1, 1, 1}), bn(name + ".bn", cout)};
	}

private:
	ParamStore& store_;
	std::uint64_t seed_;
};

}  // namespace

SsmafModel::SsmafModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
	config_.validate();
	Builder b(params_, seed);
	const auto width = [this](int s) { return static_cast<std::size_t>(config_.stage_width(s)); };
	const std::size_t base = width(0);

	for (int s = 0; s < config_.depth; ++s) {
		const std::size_t cin = s == 0 ? static_cast<std::size_t>(config_.in_channels) : width(s - 1);
		const std::string p = "enc.s" + std::to_string(s);
		enc_first_.push_back(b.conv_bn_relu(p + ".c1", cin, width(s)));
		enc_second_.push_back(b.conv_bn_relu(p + ".c2", width(s), width(s)));
	}

	auto make_decoder = [&](const std::string& prefix) {
		Decoder d;
		d.first.resize(static_cast<std::size_t>(config_.depth - 1));
		d.second.resize(static_cast<std::size_t>(config_.depth - 1));
		for (int s = config_.depth - 2; s >= 0; --s) {
			const std::string p = prefix + ".s" + std::to_string(s);
			d.first[static_cast<std::size_t>(s)] = b.conv_bn_relu(p + ".c1", width(s + 1) + width(s), width(s));
			d.second[static_cast<std::size_t>(s)] = b.conv_bn_relu(p + ".c2", width(s), width(s));
		}
		return d;
	};

	dec_seg_ = make_decoder("dec_seg");
	seg_conv_ = b.conv("head_seg.conv", base, static_cast<std::size_t>(config_.num_classes), 1, true);

	if (variant_has_sr(config_.variant)) {
		dec_sr_ = make_decoder("dec_sr");
		const auto n = static_cast<std::size_t>(config_.upscale);
		const auto hidden = static_cast<std::size_t>(config_.sr_hidden);
		sr_conv1_ = b.conv("head_sr.conv1", base, hidden, 3, true, {1, 1, 1});
		sr_conv2_ = b.conv("head_sr.conv2", hidden, 3 * n * n, 3, true, {1, 1, 1});
	}

	if (variant_has_maf(config_.variant)) {
		const auto d = static_cast<std::size_t>(config_.fusion_dim);
		const auto k = static_cast<std::size_t>(config_.ssc_groups);
		const std::size_t group = d / k;
		maf_align_ = b.conv("maf.align", 2 * base, d, 1, true);
		for (std::size_t g = 0; g < k; ++g) {
			const std::string name = "maf.ssc.g" + std::to_string(g);
			if (g == 0) {
				ssc_groups_.push_back(b.conv(name, group, group, 1, false));
			} else {
				// Group index g+1 (1-based) uses dilation g; padding g keeps the spatial extent.
				ssc_groups_.push_back(b.conv(name, group, group, 3, false, {1, g, g}));
			}
		}
		ssc_bn_ = b.bn("maf.ssc.bn", d);
		att_seg_ = b.conv("maf.att_seg", d, base, 1, true);
		att_sr_ = b.conv("maf.att_sr", d, base, 1, true);
	}
}

SsmafModel build_model(const ModelConfig& config, std::uint64_t seed) { return SsmafModel(config, seed); }

// ---- forward ---------------------------------------------------------------------------------------

EncoderOutput SsmafModel::encode(const Tensor& x) {
	if (!x.defined() || x.rank() != 4)
		throw std::invalid_argument("encode: expected [B,C,H,W] input");
	if (x.dim(1) != static_cast<std::size_t>(config_.in_channels))
		throw std::invalid_argument("encode: expected " + std::to_string(config_.in_channels) + " input channels, got " +
				std::to_string(x.dim(1)));
	const std::size_t div = std::size_t{1} << (config_.depth - 1);
	if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
		throw std::invalid_argument("encode: input extents " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
				" must be divisible by 2^(depth-1) = " + std::to_string(div));

	EncoderOutput out;
	Tensor cur = x;
	for (std::size_t s = 0; s < enc_first_.size(); ++s) {
		if (s > 0) cur = max_pool2d(cur);
		cur = enc_first_[s](cur, mode_);
		cur = enc_second_[s](cur, mode_);
		out.skips.push_back(cur);
	}
	out.features = cur;
	return out;
}

Tensor SsmafModel::run_decoder(Decoder& dec, const EncoderOutput& enc) {
	Tensor cur = enc.features;
	for (int s = config_.depth - 2; s >= 0; --s) {
		const auto i = static_cast<std::size_t>(s);
		Tensor up = interpolate_bilinear(cur, 2);
		cur = dec.first[i](concat_channels({up, enc.skips[i]}), mode_);
		cur = dec.second[i](cur, mode_);
	}
	return cur;
}

Tensor SsmafModel::decode_seg(const EncoderOutput& enc) { return run_decoder(dec_seg_, enc); }

Tensor SsmafModel::decode_sr(const EncoderOutput& enc) {
	if (!variant_has_sr(config_.variant)) throw std::logic_error("decode_sr: model was built without an SR stream");
	return run_decoder(dec_sr_, enc);
}

Tensor SsmafModel::seg_head(const Tensor& f, bool upsample) {
	Tensor logits = seg_conv_(f);
	if (!upsample || config_.upscale == 1) return logits;
	return interpolate_bilinear(logits, static_cast<std::size_t>(config_.upscale));
}

Tensor SsmafModel::sr_head(const Tensor& f) {
	if (!variant_has_sr(config_.variant)) throw std::logic_error("sr_head: model was built without an SR stream");
	Tensor h = relu(sr_conv1_(f));
	return pixel_shuffle(sr_conv2_(h), static_cast<std::size_t>(config_.upscale));
}

Tensor SsmafModel::ssc_forward(const Tensor& fused) {
	if (!variant_has_maf(config_.variant)) throw std::logic_error("ssc_forward: model was built without MAF");
	const auto d = static_cast<std::size_t>(config_.fusion_dim);
	if (fused.rank() != 4 || fused.dim(1) != d)
		throw std::invalid_argument("ssc_forward: expected " + std::to_string(d) + " channels, got " +
				shape_str(fused.shape()));
	const std::size_t group = d / ssc_groups_.size();
	std::vector<Tensor> parts;
	for (std::size_t g = 0; g < ssc_groups_.size(); ++g)
		parts.push_back(ssc_groups_[g](slice_channels(fused, g * group, (g + 1) * group)));
	return ssc_bn_(concat_channels(parts), mode_);
}

std::pair<Tensor, Tensor> SsmafModel::maf_weights(const Tensor& f_seg, const Tensor& f_sr) {
	if (!variant_has_maf(config_.variant)) throw std::logic_error("maf_forward: model was built without MAF");
	if (f_seg.shape() != f_sr.shape())
		throw std::invalid_argument("maf_forward: stream features differ in shape: " + shape_str(f_seg.shape()) + " vs " +
				shape_str(f_sr.shape()));
	Tensor fusion = ssc_forward(maf_align_(concat_channels({f_seg, f_sr})));
	return {sigmoid(att_seg_(fusion)), sigmoid(att_sr_(fusion))};
}

std::pair<Tensor, Tensor> SsmafModel::maf_forward(const Tensor& f_seg, const Tensor& f_sr) {
	auto [w_seg, w_sr] = maf_weights(f_seg, f_sr);
	return {add(mul(w_seg, f_seg), f_seg), add(mul(w_sr, f_sr), f_sr)};
}

ForwardBundle SsmafModel::forward_train(const Tensor& x, Variant variant) {
	if (variant_has_sr(variant) && !variant_has_sr(config_.variant))
		throw std::invalid_argument("forward_train: variant " + std::string(variant_name(variant)) +
				" needs SR parameters absent from a " + std::string(variant_name(config_.variant)) + " model");
	if (variant_has_maf(variant) && !variant_has_maf(config_.variant))
		throw std::invalid_argument("forward_train: variant " + std::string(variant_name(variant)) +
				" needs MAF parameters absent from a " + std::string(variant_name(config_.variant)) + " model");

	ForwardBundle out;
	EncoderOutput enc = encode(x);
	out.f_seg = decode_seg(enc);
	out.o_seg = seg_head(out.f_seg, variant_upsamples(variant));
	if (variant_has_sr(variant)) {
		out.f_sr = decode_sr(enc);
		out.o_sr = sr_head(out.f_sr);
	}
	if (variant_has_maf(variant)) {
		auto [seg_rw, sr_rw] = maf_forward(out.f_seg, out.f_sr);
		out.o_fuseg = seg_head(seg_rw, true);
		out.o_fusr = sr_head(sr_rw);
	}
	return out;
}

Tensor SsmafModel::forward_infer(const Tensor& x) {
	const NormMode saved = mode_;
	mode_ = NormMode::Eval;
	struct Restore {
		NormMode& m;
		NormMode v;
		~Restore() { m = v; }
	} restore{mode_, saved};
	EncoderOutput enc = encode(x);
	return softmax_channels(seg_head(decode_seg(enc), variant_upsamples(config_.variant)));
}

}  // namespace ssmaf
