#ifndef SSMAF_GRADCHECK_HPP_
#define SSMAF_GRADCHECK_HPP_

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace ssmaf {

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

struct GradcheckOptions {
	std::size_t trials = 20;
	std::size_t coords_per_input = 12;  // sampled coordinates per differentiable input and trial
	double step = 1e-5;                 // central-difference half step
	double floor = 1e-6;                // denominator floor of the relative error
	double tolerance = 1e-4;
	std::uint64_t seed = 20240601;
	/// Registered names whose analytic gradient is deliberately perturbed (negative control).
	std::set<std::string> corrupt;

	bool model_check = true;
	std::size_t model_params = 50;
	double model_tolerance = 1e-3;
};

struct GradcheckReport {
	std::string op;
	double worst = 0.0;  // worst relative error over all sampled coordinates
	std::size_t trials = 0;
	std::size_t coords = 0;
	double tolerance = 0.0;
	bool passed = false;
};

/// Names of every registered differentiable primitive and loss, in report order.
std::vector<std::string> gradcheck_registry();

/// Checks one registered case; throws std::invalid_argument for an unknown name.
GradcheckReport gradcheck_op(const std::string& name, const GradcheckOptions& opt = {});

/**
 * Total-loss gradient of a 2-class, depth-2, base-width-4 InterpSRMAF model on a 16x16 input,
 * checked on `model_params` randomly sampled parameter entries.
 */
GradcheckReport gradcheck_model(const GradcheckOptions& opt = {});

/// Every registered case, followed by the model check when enabled.
std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& opt = {});

}  // namespace ssmaf

#endif  // SSMAF_GRADCHECK_HPP_
