#ifndef SSMAF_TRAINER_HPP_
#define SSMAF_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmaf/config.hpp"
#include "ssmaf/losses.hpp"
#include "ssmaf/metrics.hpp"
#include "ssmaf/model.hpp"
#include "ssmaf/synth.hpp"

namespace ssmaf {

class TrainingError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

struct TrainConfig {
	double init_lr = 0.01;
	double power = 0.9;
	double momentum = 0.9;
	double weight_decay = 1e-4;
	int epochs = 300;
	std::size_t batch_size = 2;
	std::uint64_t seed = 1;
	std::size_t eval_every = 0;        // 0: evaluate only after the last step
	std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
	double threshold = 0.5;

	void validate() const;
	void store(KeyValueConfig& cfg) const;
	void load(const KeyValueConfig& cfg);
	static const std::set<std::string>& keys();
};

/// init_lr * (1 - iter/max_iter)^power for 0 <= iter <= max_iter.
double poly_lr(std::size_t iter, std::size_t max_iter, const TrainConfig& cfg);

/// One velocity buffer per parameter name. Weight-shared heads are a single named parameter, so
/// they own exactly one buffer.
struct OptimizerState {
	std::map<std::string, Tensor> velocity;

	static OptimizerState zeros_like(const ParamStore& params);
};

/**
 * SGD with momentum: g = grad + wd * p (wd only where params.decays(name)), v = momentum * v + g,
 * p = p - lr * v. Throws if a parameter has no gradient.
 */
void sgd_step(ParamStore& params, OptimizerState& state, double lr, const TrainConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
	std::uint32_t version = kCheckpointVersion;
	ModelConfig model;
	TrainConfig train;
	LossConfig loss;
	std::uint64_t iteration = 0;
	/// Parameters and buffers by name; optimizer velocities as "velocity:<param name>".
	std::map<std::string, Tensor> tensors;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const SsmafModel& model, const OptimizerState* state, const TrainConfig& train,
		const LossConfig& loss, std::uint64_t iteration);
/// Copies tensors into the model (and optimizer state when given). Names and shapes must match.
void restore_checkpoint(const Checkpoint& ckpt, SsmafModel& model, OptimizerState* state);
/// Builds a model from the checkpoint's config and restores its tensors.
SsmafModel model_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------------------------
// Evaluation

struct EvalResult {
	std::vector<MetricsReport> per_image;
	MetricsReport mean;    // per-image metrics averaged
	MetricsReport pooled;  // all pixels of the split treated as one image
};

/**
 * Scores are foreground probabilities, ground truths binary masks; pairs must match in size.
 * Per-image reports come from evaluate_scores; pooled counts are summed over images.
 */
EvalResult evaluate_predictions(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts, double threshold);

/// Segmentation stream only; ground truth at the model's output resolution (LR for Baseline).
EvalResult evaluate(SsmafModel& model, const std::vector<Sample>& samples, double threshold);

/// Foreground probability maps [H',W'] from forward_infer, one per sample.
std::vector<Tensor> predict(SsmafModel& model, const std::vector<Sample>& samples);

/// Ground-truth mask at the resolution the variant is trained and evaluated at.
Tensor target_mask(const Sample& sample, Variant variant);

// ---------------------------------------------------------------------------------------------
// Training

struct TrainOptions {
	/// Stop after this many optimizer steps (writing a checkpoint there), as if interrupted.
	std::optional<std::size_t> stop_after;
	/// Print a progress line to stderr at each evaluation.
	bool verbose = false;
};

struct TrainSummary {
	std::size_t iterations = 0;  // optimizer steps completed
	std::size_t max_iter = 0;
	double final_loss = 0.0;
	std::optional<EvalResult> final_eval;
	std::filesystem::path final_checkpoint;
};

std::size_t steps_per_epoch(std::size_t n_train, std::size_t batch_size);

/// Sample order of `epoch`, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

/**
 * Trains a freshly initialized model. Writes <out>/metrics.jsonl (one record per step, evaluation
 * fields null when not evaluated), <out>/checkpoints/iter_<k>.ckpt every checkpoint_every steps
 * and <out>/final.ckpt after the last step.
 */
TrainSummary train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
		const Dataset& data, const std::filesystem::path& out_dir, const TrainOptions& options = {});

/// Continues from a checkpoint; metrics.jsonl is truncated to the records up to its iteration.
TrainSummary resume(const std::filesystem::path& checkpoint, const Dataset& data, const std::filesystem::path& out_dir,
		const TrainOptions& options = {});

// ---------------------------------------------------------------------------------------------
// Ablation

struct AblationRun {
	Variant variant;
	std::uint64_t seed;
	EvalResult eval;
};

struct AblationRow {
	Variant variant;
	MetricsReport median;  // over seeds, of the pooled test metrics
};

struct AblationResult {
	std::vector<AblationRun> runs;
	std::vector<AblationRow> rows;  // Baseline, Interp, InterpSR, InterpSRMAF

	const AblationRow& row(Variant v) const;
	std::string table() const;
};

/**
 * Trains every variant for every seed; runs go to <out>/<variant>_seed<k>/. Independent runs are
 * spread over `threads` worker threads (0: hardware concurrency, further capped by the
 * SSMAF_THREADS environment variable).
 */
AblationResult run_ablation(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LossConfig& loss_cfg,
		const Dataset& data, const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir,
		unsigned threads = 0);

}  // namespace ssmaf

#endif  // SSMAF_TRAINER_HPP_
