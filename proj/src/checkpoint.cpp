#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ssmaf/trainer.hpp"

namespace ssmaf {

namespace {

constexpr char kMagic[6] = {'S', 'S', 'M', 'A', 'F', '\0'};
constexpr std::string_view kVelocityPrefix = "velocity:";

static_assert(std::numeric_limits<double>::is_iec559, "checkpoints store IEEE-754 doubles");

class Writer {
public:
	void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
	void u32(std::uint32_t v) { le(v); }
	void u64(std::uint64_t v) { le(v); }
	void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
	void str(std::string_view s) {
		u32(static_cast<std::uint32_t>(s.size()));
		bytes(s.data(), s.size());
	}
	std::string take() { return std::move(out_); }

private:
	template <class U>
	void le(U v) {
		for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
	}
	std::string out_;
};

class Reader {
public:
	Reader(std::string_view in, const std::string& source) : in_(in), source_(source) {}

	std::string_view bytes(std::size_t n, const char* what) {
		if (in_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
		std::string_view s = in_.substr(pos_, n);
		pos_ += n;
		return s;
	}
	std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
	std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
	double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
	std::string str(const char* what) {
		const std::uint32_t n = u32(what);
		return std::string(bytes(n, what));
	}
	bool at_end() const { return pos_ == in_.size(); }
	[[noreturn]] void fail(const std::string& msg) const {
		throw std::runtime_error(source_ + ": invalid checkpoint: " + msg);
	}

private:
	template <class U>
	U le(const char* what) {
		std::string_view b = bytes(sizeof(U), what);
		U v = 0;
		for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(b[i])) << (8 * i);
		return v;
	}
	std::string_view in_;
	const std::string& source_;
	std::size_t pos_ = 0;
};

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
	if (dst.shape() != src.shape())
		throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(src.shape()) +
				", model expects " + shape_str(dst.shape()));
	std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
	KeyValueConfig cfg;
	ckpt.model.store(cfg);
	ckpt.train.store(cfg);
	ckpt.loss.store(cfg);
	cfg.set("state.iteration", std::to_string(ckpt.iteration));

	Writer w;
	w.bytes(kMagic, sizeof kMagic);
	w.u32(ckpt.version);
	w.str(cfg.to_text());
	w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
	for (const auto& [name, t] : ckpt.tensors) {
		w.str(name);
		w.u32(static_cast<std::uint32_t>(t.rank()));
		for (std::size_t e : t.shape()) w.u64(e);
		for (double v : t.data()) w.f64(v);
	}
	return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
	Reader r(bytes, source);
	if (r.bytes(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic)) r.fail("wrong magic");
	Checkpoint ckpt;
	ckpt.version = r.u32("version");
	if (ckpt.version != kCheckpointVersion)
		r.fail("unsupported format version " + std::to_string(ckpt.version));

	const KeyValueConfig cfg = KeyValueConfig::parse(r.str("config"));
	std::set<std::string> known = ModelConfig::keys();
	known.insert(TrainConfig::keys().begin(), TrainConfig::keys().end());
	known.insert(LossConfig::keys().begin(), LossConfig::keys().end());
	known.insert("state.iteration");
	cfg.reject_unknown(known);
	ckpt.model.load(cfg);
	ckpt.train.load(cfg);
	ckpt.loss.load(cfg);
	unsigned long long iteration = 0;
	cfg.read("state.iteration", iteration);
	ckpt.iteration = iteration;

	const std::uint32_t count = r.u32("tensor count");
	for (std::uint32_t i = 0; i < count; ++i) {
		std::string name = r.str("tensor name");
		const std::uint32_t rank = r.u32("tensor rank");
		if (rank > 8) r.fail("tensor " + name + " has implausible rank " + std::to_string(rank));
		Shape shape(rank);
		for (auto& e : shape) e = r.u64("tensor extent");
		const std::size_t n = shape_numel(shape);
		if (n > (bytes.size() / sizeof(double))) r.fail("tensor " + name + " is larger than the file");
		std::vector<double> data(n);
		for (double& v : data) v = r.f64("tensor data");
		if (!ckpt.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data))).second)
			r.fail("duplicate tensor name");
	}
	if (!r.at_end()) r.fail("trailing bytes after the last tensor");
	return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
	const std::string bytes = encode_checkpoint(ckpt);
	if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) throw std::runtime_error(path.string() + ": cannot open checkpoint for writing");
	out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
	if (!out) throw std::runtime_error(path.string() + ": checkpoint write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw std::runtime_error(path.string() + ": cannot open checkpoint");
	std::ostringstream ss;
	ss << in.rdbuf();
	return decode_checkpoint(ss.str(), path.string());
}

Checkpoint make_checkpoint(const SsmafModel& model, const OptimizerState* state, const TrainConfig& train,
		const LossConfig& loss, std::uint64_t iteration) {
	Checkpoint ckpt;
	ckpt.model = model.config();
	ckpt.train = train;
	ckpt.loss = loss;
	ckpt.iteration = iteration;
	for (const auto& [name, t] : model.params().params()) ckpt.tensors.emplace(name, t.clone());
	for (const auto& [name, t] : model.params().buffers()) ckpt.tensors.emplace(name, t.clone());
	if (state)
		for (const auto& [name, v] : state->velocity) ckpt.tensors.emplace(std::string(kVelocityPrefix) + name, v.clone());
	return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, SsmafModel& model, OptimizerState* state) {
	if (!(ckpt.model == model.config()))
		throw std::runtime_error("checkpoint was written for a " + std::string(variant_name(ckpt.model.variant)) +
				" model with a different configuration than the target " +
				std::string(variant_name(model.config().variant)) + " model");
	std::size_t expected = 0;
	auto take = [&](const std::string& name, Tensor& dst) {
		auto it = ckpt.tensors.find(name);
		if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + name);
		copy_into(dst, it->second, name);
		++expected;
	};
	// Tensors are shared handles: writing through a copy updates the model's storage.
	for (auto [name, t] : model.params().params()) take(name, t);
	for (auto [name, t] : model.params().buffers()) take(name, t);
	if (state) {
		*state = OptimizerState::zeros_like(model.params());
		for (auto& [name, v] : state->velocity) take(std::string(kVelocityPrefix) + name, v);
	} else {
		for (const auto& [name, t] : ckpt.tensors)
			if (name.starts_with(kVelocityPrefix)) ++expected;
	}
	if (expected != ckpt.tensors.size())
		throw std::runtime_error("checkpoint holds tensors the " + std::string(variant_name(model.config().variant)) +
				" model does not have");
}

SsmafModel model_from_checkpoint(const Checkpoint& ckpt) {
	SsmafModel model = build_model(ckpt.model, ckpt.train.seed);
	restore_checkpoint(ckpt, model, nullptr);
	return model;
}

}  // namespace ssmaf
