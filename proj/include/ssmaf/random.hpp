#ifndef SSMAF_RANDOM_HPP_
#define SSMAF_RANDOM_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace ssmaf {

/**
 * SplitMix64 (Steele, Lea, Flood 2014). Every stream in the project derives from this generator so
 * that parameter initialization, data generation and shuffling are reproducible bit for bit on any
 * platform with IEEE doubles:
 *
 *   state += 0x9E3779B97F4A7C15
 *   z = state
 *   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
 *   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
 *   return z ^ (z >> 31)
 *
 * uniform() maps the top 53 bits to [0,1); normal() is Box-Muller on two uniforms.
 */
class SplitMix64 {
public:
	explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

	std::uint64_t next() {
		std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
		z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
		z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
		return z ^ (z >> 31);
	}

	double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform integer in [lo, hi].
	std::int64_t integer(std::int64_t lo, std::int64_t hi) {
		const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
		return lo + static_cast<std::int64_t>(next() % span);
	}

	double normal() {
		const double u1 = 1.0 - uniform();  // (0,1]
		const double u2 = uniform();
		return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
	}

	std::uint64_t state() const { return state_; }

private:
	std::uint64_t state_;
};

/// 64-bit FNV-1a, used to key random streams by name.
inline std::uint64_t fnv1a(std::string_view s) {
	std::uint64_t h = 0xcbf29ce484222325ULL;
	for (unsigned char c : s) {
		h ^= c;
		h *= 0x100000001b3ULL;
	}
	return h;
}

/// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
	SplitMix64 a(seed ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
	a.next();
	return a.next();
}

}  // namespace ssmaf

#endif  // SSMAF_RANDOM_HPP_
