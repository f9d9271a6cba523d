#include "ssmaf/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ssmaf {

namespace {

class HeaderReader {
public:
	HeaderReader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

	void skip_space_and_comments() {
		while (pos_ < bytes_.size()) {
			const char c = bytes_[pos_];
			if (c == '#') {
				while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
			} else if (std::isspace(static_cast<unsigned char>(c))) {
				++pos_;
			} else {
				break;
			}
		}
	}

	std::size_t number(const char* what) {
		skip_space_and_comments();
		const std::size_t start = pos_;
		std::size_t v = 0;
		while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
			v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
			if (v > 1u << 24) fail(std::string(what) + " is implausibly large");
			++pos_;
		}
		if (pos_ == start) fail(std::string("malformed header: expected ") + what);
		return v;
	}

	/// Exactly one whitespace byte separates maxval from the raster.
	void raster_separator() {
		if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
			fail("malformed header: missing whitespace before raster");
		++pos_;
	}

	[[noreturn]] void fail(const std::string& msg) const { throw NetpbmError(source_ + ": " + msg); }

	std::size_t pos() const { return pos_; }

private:
	std::string_view bytes_;
	const std::string& source_;
	std::size_t pos_ = 2;
};

}  // namespace

Tensor decode_netpbm(std::string_view bytes, const std::string& source) {
	if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
		throw NetpbmError(source + ": wrong magic number (expected binary P5 or P6)");
	const bool color = bytes[1] == '6';
	HeaderReader hdr(bytes, source);
	const std::size_t width = hdr.number("width");
	const std::size_t height = hdr.number("height");
	const std::size_t maxval = hdr.number("maxval");
	if (width == 0 || height == 0) hdr.fail("zero image dimension");
	if (maxval != 255) hdr.fail("unsupported maxval " + std::to_string(maxval) + " (only 255)");
	hdr.raster_separator();

	const std::size_t channels = color ? 3 : 1;
	const std::size_t expected = width * height * channels;
	if (bytes.size() - hdr.pos() < expected)
		hdr.fail("truncated raster: expected " + std::to_string(expected) + " bytes, found " +
				std::to_string(bytes.size() - hdr.pos()));

	Tensor out = color ? Tensor({3, height, width}) : Tensor({height, width});
	auto dst = out.data();
	const auto* raster = reinterpret_cast<const unsigned char*>(bytes.data() + hdr.pos());
	for (std::size_t y = 0; y < height; ++y)
		for (std::size_t x = 0; x < width; ++x)
			for (std::size_t c = 0; c < channels; ++c)
				dst[(c * height + y) * width + x] = raster[(y * width + x) * channels + c] / 255.0;
	return out;
}

Tensor read_netpbm(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw NetpbmError(path.string() + ": cannot open for reading");
	std::ostringstream ss;
	ss << in.rdbuf();
	return decode_netpbm(ss.str(), path.string());
}

std::string encode_netpbm(const Tensor& image) {
	std::size_t channels = 0, height = 0, width = 0;
	if (image.rank() == 2) {
		channels = 1;
		height = image.dim(0);
		width = image.dim(1);
	} else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
		channels = image.dim(0);
		height = image.dim(1);
		width = image.dim(2);
	} else {
		throw NetpbmError("cannot encode tensor of shape " + shape_str(image.shape()) + " as NetPBM");
	}
	std::string out = (channels == 3 ? "P6\n" : "P5\n") + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
	const std::size_t header = out.size();
	out.resize(header + width * height * channels);
	auto src = image.data();
	for (std::size_t y = 0; y < height; ++y)
		for (std::size_t x = 0; x < width; ++x)
			for (std::size_t c = 0; c < channels; ++c) {
				const double v = std::clamp(src[(c * height + y) * width + x], 0.0, 1.0);
				out[header + (y * width + x) * channels + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
			}
	return out;
}

void write_netpbm(const std::filesystem::path& path, const Tensor& image) {
	const std::string bytes = encode_netpbm(image);
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) throw NetpbmError(path.string() + ": cannot open for writing");
	out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
	if (!out) throw NetpbmError(path.string() + ": write failed");
}

}  // namespace ssmaf
