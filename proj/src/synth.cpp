#include "ssmaf/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ssmaf/netpbm.hpp"
#include "ssmaf/random.hpp"

namespace ssmaf {

void SynthParams::validate(int depth) const {
	auto fail = [](const std::string& m) { throw std::invalid_argument("invalid synth params: " + m); };
	const std::size_t div = std::size_t{2} << (depth - 1);
	if (hr_height == 0 || hr_width == 0 || hr_height % div != 0 || hr_width % div != 0)
		fail("HR extents must be positive multiples of " + std::to_string(div));
	if (lesion_count_min > lesion_count_max) fail("lesion count range is empty");
	if (!(lesion_radius_min > 0.0) || lesion_radius_min > lesion_radius_max) fail("lesion radius range is empty");
	if (!(lesion_intensity_min >= 0.0) || lesion_intensity_min > lesion_intensity_max || lesion_intensity_max > 1.0)
		fail("lesion intensity range must lie in [0,1]");
	if (noise_amplitude < 0.0) fail("noise amplitude must be >= 0");
	const double disc = 0.46 * static_cast<double>(std::min(hr_height, hr_width));
	if (lesion_count_max > 0 && lesion_radius_max + 1.0 >= disc) fail("lesions do not fit inside the retina disc");
}

const std::set<std::string>& SynthParams::keys() {
	static const std::set<std::string> k = {"synth.hr_height", "synth.hr_width", "synth.lesion_count_min",
			"synth.lesion_count_max", "synth.lesion_radius_min", "synth.lesion_radius_max",
			"synth.lesion_intensity_min", "synth.lesion_intensity_max", "synth.vessel_count",
			"synth.noise_amplitude", "synth.seed"};
	return k;
}

void SynthParams::store(KeyValueConfig& cfg) const {
	cfg.set("synth.hr_height", std::to_string(hr_height));
	cfg.set("synth.hr_width", std::to_string(hr_width));
	cfg.set("synth.lesion_count_min", std::to_string(lesion_count_min));
	cfg.set("synth.lesion_count_max", std::to_string(lesion_count_max));
	cfg.set("synth.lesion_radius_min", format_double(lesion_radius_min));
	cfg.set("synth.lesion_radius_max", format_double(lesion_radius_max));
	cfg.set("synth.lesion_intensity_min", format_double(lesion_intensity_min));
	cfg.set("synth.lesion_intensity_max", format_double(lesion_intensity_max));
	cfg.set("synth.vessel_count", std::to_string(vessel_count));
	cfg.set("synth.noise_amplitude", format_double(noise_amplitude));
	cfg.set("synth.seed", std::to_string(seed));
}

void SynthParams::load(const KeyValueConfig& cfg) {
	cfg.read("synth.hr_height", hr_height);
	cfg.read("synth.hr_width", hr_width);
	cfg.read("synth.lesion_count_min", lesion_count_min);
	cfg.read("synth.lesion_count_max", lesion_count_max);
	cfg.read("synth.lesion_radius_min", lesion_radius_min);
	cfg.read("synth.lesion_radius_max", lesion_radius_max);
	cfg.read("synth.lesion_intensity_min", lesion_intensity_min);
	cfg.read("synth.lesion_intensity_max", lesion_intensity_max);
	cfg.read("synth.vessel_count", vessel_count);
	cfg.read("synth.noise_amplitude", noise_amplitude);
	cfg.read("synth.seed", seed);
}

namespace {

constexpr std::size_t kPolygonVertices = 32;

bool inside_polygon(const std::vector<Point2>& poly, double px, double py) {
	// Even-odd crossing test.
	bool in = false;
	for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
		const Point2& a = poly[i];
		const Point2& b = poly[j];
		if ((a.y > py) != (b.y > py)) {
			const double x_cross = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
			if (px < x_cross) in = !in;
		}
	}
	return in;
}

LesionRecord make_lesion(SplitMix64& rng, Point2 center, double radius) {
	LesionRecord rec{center, radius, {}};
	const double aspect = rng.uniform(0.6, 1.0);
	const double rotation = rng.uniform(0.0, std::numbers::pi);
	std::array<double, 3> amp{}, phase{};
	for (std::size_t h = 0; h < 3; ++h) {
		amp[h] = rng.uniform(0.0, 0.1);
		phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
	}
	rec.polygon.reserve(kPolygonVertices);
	for (std::size_t m = 0; m < kPolygonVertices; ++m) {
		const double theta = 2.0 * std::numbers::pi * static_cast<double>(m) / kPolygonVertices;
		const double rel = theta - rotation;
		// Ellipse with semi-axes (radius, aspect*radius), then an irregular inward modulation.
		const double ellipse = radius * aspect / std::hypot(aspect * std::cos(rel), std::sin(rel));
		double modulation = 1.0;
		for (std::size_t h = 0; h < 3; ++h)
			modulation -= amp[h] * 0.5 * (1.0 + std::cos(static_cast<double>(h + 2) * theta + phase[h]));
		const double r = ellipse * modulation;
		rec.polygon.push_back({center.x + r * std::cos(theta), center.y + r * std::sin(theta)});
	}
	return rec;
}

struct Vessel {
	std::vector<Point2> path;
	double half_width;
};

double distance_to_path(const std::vector<Point2>& path, double px, double py) {
	double best = 1e300;
	for (std::size_t i = 1; i < path.size(); ++i) {
		const double ax = path[i - 1].x, ay = path[i - 1].y;
		const double dx = path[i].x - ax, dy = path[i].y - ay;
		const double len2 = dx * dx + dy * dy;
		double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
		t = std::clamp(t, 0.0, 1.0);
		best = std::min(best, std::hypot(px - ax - t * dx, py - ay - t * dy));
	}
	return best;
}

}  // namespace

Sample generate_sample(const SynthParams& params, std::size_t index) {
	params.validate(1);
	SplitMix64 rng(derive_seed(params.seed, index));
	const std::size_t h = params.hr_height, w = params.hr_width;
	const double cx = 0.5 * static_cast<double>(w), cy = 0.5 * static_cast<double>(h);
	const double disc = 0.46 * static_cast<double>(std::min(h, w));

	// Low-frequency illumination noise: three plane waves.
	struct Wave {
		double kx, ky, phase, amp;
	};
	std::array<Wave, 3> waves{};
	for (Wave& wv : waves) {
		const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
		const double k = 2.0 * std::numbers::pi / (rng.uniform(0.5, 1.5) * static_cast<double>(std::max(h, w)));
		wv = {k * std::cos(angle), k * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
				params.noise_amplitude / 3.0};
	}

	std::vector<Vessel> vessels;
	for (std::size_t v = 0; v < params.vessel_count; ++v) {
		const Point2 start{cx + rng.uniform(-0.3, 0.3) * disc, cy + rng.uniform(-0.3, 0.3) * disc};
		const double a0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
		const Point2 end{cx + disc * std::cos(a0), cy + disc * std::sin(a0)};
		const Point2 ctrl{0.5 * (start.x + end.x) + rng.uniform(-0.4, 0.4) * disc,
				0.5 * (start.y + end.y) + rng.uniform(-0.4, 0.4) * disc};
		Vessel vs{{}, rng.uniform(0.7, 1.6)};
		for (int i = 0; i <= 24; ++i) {
			const double t = i / 24.0;
			const double u = 1.0 - t;
			vs.path.push_back({u * u * start.x + 2 * u * t * ctrl.x + t * t * end.x,
					u * u * start.y + 2 * u * t * ctrl.y + t * t * end.y});
		}
		vessels.push_back(std::move(vs));
	}

	Sample s;
	s.index = index;
	const auto count = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(params.lesion_count_min),
			static_cast<std::int64_t>(params.lesion_count_max)));
	std::vector<double> intensity;
	for (std::size_t i = 0; i < count; ++i) {
		// The first lesion always has the minimum radius.
		const double radius = i == 0 ? params.lesion_radius_min
		                             : rng.uniform(params.lesion_radius_min, params.lesion_radius_max);
		const double reach = disc - radius - 1.0;
		Point2 c{};
		do {
			c = {cx + rng.uniform(-reach, reach), cy + rng.uniform(-reach, reach)};
		} while (std::hypot(c.x - cx, c.y - cy) > reach);
		s.lesions.push_back(make_lesion(rng, c, radius));
		intensity.push_back(rng.uniform(params.lesion_intensity_min, params.lesion_intensity_max));
	}

	s.hr_image = Tensor({3, h, w});
	s.hr_mask = Tensor({h, w});
	auto img = s.hr_image.data();
	auto mask = s.hr_mask.data();
	constexpr std::array<double, 3> kRetina{0.78, 0.38, 0.16};
	constexpr std::array<double, 3> kNoiseTint{1.0, 0.8, 0.5};
	constexpr std::array<double, 3> kLesion{1.0, 0.93, 0.55};
	for (std::size_t y = 0; y < h; ++y)
		for (std::size_t x = 0; x < w; ++x) {
			const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
			const double rr = std::hypot(px - cx, py - cy) / disc;
			std::array<double, 3> rgb{0.03, 0.02, 0.01};
			if (rr <= 1.0) {
				double noise = 0.0;
				for (const Wave& wv : waves) noise += wv.amp * std::sin(wv.kx * px + wv.ky * py + wv.phase);
				for (std::size_t c = 0; c < 3; ++c) rgb[c] = kRetina[c] * (1.0 - 0.35 * rr * rr) + noise * kNoiseTint[c];
				for (const Vessel& v : vessels)
					if (distance_to_path(v.path, px, py) < v.half_width) {
						for (double& ch : rgb) ch *= 0.6;
						break;
					}
			}
			for (std::size_t l = 0; l < s.lesions.size(); ++l) {
				const LesionRecord& les = s.lesions[l];
				if (std::abs(px - les.center.x) > les.radius || std::abs(py - les.center.y) > les.radius) continue;
				if (!inside_polygon(les.polygon, px, py)) continue;
				mask[y * w + x] = 1.0;
				for (std::size_t c = 0; c < 3; ++c) rgb[c] += intensity[l] * (kLesion[c] - rgb[c]);
			}
			for (std::size_t c = 0; c < 3; ++c)
				img[(c * h + y) * w + x] = std::round(std::clamp(rgb[c], 0.0, 1.0) * 255.0) / 255.0;
		}
	s.lr_image = downsample_area(s.hr_image);
	return s;
}

Tensor downsample_area(const Tensor& hr) {
	if (hr.rank() < 2) throw std::invalid_argument("downsample_area: rank must be >= 2");
	const Shape& s = hr.shape();
	const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
	if (h % 2 != 0 || w % 2 != 0)
		throw std::invalid_argument("downsample_area: extents " + std::to_string(h) + "x" + std::to_string(w) +
				" must be even");
	Shape out_shape = s;
	out_shape[s.size() - 2] = h / 2;
	out_shape[s.size() - 1] = w / 2;
	Tensor out(out_shape);
	const std::size_t planes = hr.numel() / (h * w), oh = h / 2, ow = w / 2;
	auto src = hr.data();
	auto dst = out.data();
	for (std::size_t p = 0; p < planes; ++p)
		for (std::size_t y = 0; y < oh; ++y)
			for (std::size_t x = 0; x < ow; ++x) {
				const double* r0 = src.data() + p * h * w + 2 * y * w + 2 * x;
				const double* r1 = r0 + w;
				dst[(p * oh + y) * ow + x] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
			}
	return out;
}

Tensor downsample_mask(const Tensor& mask) {
	Tensor out = downsample_area(mask);
	for (double& v : out.data()) v = v >= 0.5 ? 1.0 : 0.0;
	return out;
}

Dataset make_dataset(const SynthParams& params, std::size_t n_train, std::size_t n_test) {
	Dataset d;
	for (std::size_t i = 0; i < n_train; ++i) d.train.push_back(generate_sample(params, i));
	for (std::size_t i = 0; i < n_test; ++i) d.test.push_back(generate_sample(params, n_train + i));
	return d;
}

std::string sample_id(std::size_t index) {
	std::string id = std::to_string(index);
	if (id.size() < 4) id.insert(0, 4 - id.size(), '0');
	return id;
}

void write_dataset(const Dataset& data, const std::filesystem::path& root) {
	namespace fs = std::filesystem;
	std::error_code ec;
	for (const char* sub : {"images", "hr", "masks"}) {
		fs::create_directories(root / sub, ec);
		if (ec) throw std::runtime_error("cannot create directory " + (root / sub).string() + ": " + ec.message());
	}
	std::ofstream manifest(root / "manifest.txt", std::ios::trunc);
	if (!manifest) throw std::runtime_error("cannot write " + (root / "manifest.txt").string());
	auto emit = [&](const Sample& s, const char* split) {
		const std::string id = sample_id(s.index);
		write_netpbm(root / "images" / (id + ".ppm"), s.lr_image);
		write_netpbm(root / "hr" / (id + ".ppm"), s.hr_image);
		write_netpbm(root / "masks" / (id + ".pgm"), s.hr_mask);
		manifest << id << ' ' << split << '\n';
	};
	for (const Sample& s : data.train) emit(s, "train");
	for (const Sample& s : data.test) emit(s, "test");
	if (!manifest) throw std::runtime_error("failed writing " + (root / "manifest.txt").string());
}

Dataset read_dataset(const std::filesystem::path& root) {
	std::ifstream manifest(root / "manifest.txt");
	if (!manifest) throw std::runtime_error("missing dataset manifest " + (root / "manifest.txt").string());
	Dataset d;
	std::string id, split;
	while (manifest >> id >> split) {
		Sample s;
		s.index = std::stoul(id);
		s.hr_image = read_netpbm(root / "hr" / (id + ".ppm"));
		s.hr_mask = read_netpbm(root / "masks" / (id + ".pgm"));
		if (s.hr_image.rank() != 3) throw std::runtime_error("HR image " + id + " is not a color image");
		if (s.hr_mask.rank() != 2) throw std::runtime_error("mask " + id + " is not a single-channel image");
		// HR pixels are multiples of 1/255 and survive the 8-bit format exactly; the LR file holds
		// a quantized copy of their block means, so LR is rebuilt from HR and checked against it.
		s.lr_image = downsample_area(s.hr_image);
		const Tensor stored = read_netpbm(root / "images" / (id + ".ppm"));
		if (encode_netpbm(stored) != encode_netpbm(s.lr_image))
			throw std::runtime_error("LR image " + id + " does not match the 2x2 area average of its HR image");
		if (split == "train")
			d.train.push_back(std::move(s));
		else if (split == "test")
			d.test.push_back(std::move(s));
		else
			throw std::runtime_error("manifest entry " + id + " has unknown split '" + split + "'");
	}
	return d;
}

}  // namespace ssmaf
