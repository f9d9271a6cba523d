#ifndef SSMAF_SYNTH_HPP_
#define SSMAF_SYNTH_HPP_

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ssmaf/config.hpp"
#include "ssmaf/tensor.hpp"

namespace ssmaf {

/// Generator settings for fundus-like images with bright lesions. Sizes are HR pixels.
struct SynthParams {
	std::size_t hr_height = 128;
	std::size_t hr_width = 128;
	std::size_t lesion_count_min = 1;
	std::size_t lesion_count_max = 6;
	double lesion_radius_min = 2.0;
	double lesion_radius_max = 12.0;
	double lesion_intensity_min = 0.6;
	double lesion_intensity_max = 0.95;
	std::size_t vessel_count = 4;
	double noise_amplitude = 0.04;
	std::uint64_t seed = 1;

	/// `depth` is the encoder depth the LR images must be compatible with.
	void validate(int depth = 3) const;

	void store(KeyValueConfig& cfg) const;
	void load(const KeyValueConfig& cfg);
	static const std::set<std::string>& keys();
};

struct Point2 {
	double x, y;
};

/// Geometry of one generated lesion. Pixel (x,y) is lesion iff its centre (x+0.5, y+0.5) lies
/// inside `polygon`.
struct LesionRecord {
	Point2 center;
	double radius;  // every vertex lies within this distance of center
	std::vector<Point2> polygon;
};

struct Sample {
	std::size_t index = 0;
	Tensor hr_image;  // [3,2H,2W] in [0,1], multiples of 1/255
	Tensor hr_mask;   // [2H,2W] in {0,1}
	Tensor lr_image;  // [3,H,W] = downsample_area(hr_image)
	std::vector<LesionRecord> lesions;  // empty for samples read from disk
};

/// Deterministic in (params.seed, index).
Sample generate_sample(const SynthParams& params, std::size_t index);

/// Mean of each 2x2 block over the last two axes.
Tensor downsample_area(const Tensor& hr);

/// 2x2 majority (block mean >= 0.5) of a binary mask, used as the low-resolution target.
Tensor downsample_mask(const Tensor& mask);

struct Dataset {
	std::vector<Sample> train;
	std::vector<Sample> test;
};

/// Samples 0..n_train-1 form the training split, the next n_test the test split.
Dataset make_dataset(const SynthParams& params, std::size_t n_train, std::size_t n_test);

/**
 * Writes <root>/images/<id>.ppm (LR), <root>/hr/<id>.ppm, <root>/masks/<id>.pgm and
 * <root>/manifest.txt with one "<id> <train|test>" line per sample.
 */
void write_dataset(const Dataset& data, const std::filesystem::path& root);
Dataset read_dataset(const std::filesystem::path& root);

std::string sample_id(std::size_t index);

}  // namespace ssmaf

#endif  // SSMAF_SYNTH_HPP_
