#ifndef SSMAF_TENSOR_HPP_
#define SSMAF_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssmaf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/**
 * Allocator with a fixed 64-byte alignment. Vectorized kernels pick their peeling (and thereby the
 * summation order) from the buffer address, so a fixed alignment keeps results bit-identical no
 * matter where the heap places a tensor.
 */
template <class T>
struct AlignedAllocator {
	using value_type = T;
	static constexpr std::align_val_t alignment{64};

	AlignedAllocator() = default;
	template <class U>
	AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

	T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
	void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

	template <class U>
	bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {

struct TensorImpl {
	Shape shape;
	Buffer data;
	Buffer grad;  // empty until first accumulation
	bool requires_grad = false;
	std::optional<std::size_t> node_id;
};

}  // namespace detail

/**
 * Dense row-major tensor of doubles.
 *
 * Tensor is a shared handle: copies alias the same storage, which is how weight sharing between
 * heads is expressed. Use clone() for a deep copy.
 */
class Tensor {
public:
	Tensor() = default;
	explicit Tensor(Shape shape, double fill = 0.0);
	Tensor(Shape shape, std::vector<double> data);

	static Tensor scalar(double value);

	bool defined() const { return impl_ != nullptr; }
	const Shape& shape() const;
	std::size_t rank() const { return shape().size(); }
	std::size_t dim(std::size_t axis) const;
	std::size_t numel() const;

	std::span<double> data();
	std::span<const double> data() const;
	double item() const;

	bool requires_grad() const;
	Tensor& set_requires_grad(bool value);

	bool has_grad() const;
	/// Gradient buffer; throws if none has been accumulated yet.
	std::span<double> grad();
	std::span<const double> grad() const;
	/// Returns the gradient buffer, allocating zeros on first use.
	std::span<double> grad_buffer();
	void zero_grad();
	void clear_grad();

	std::optional<std::size_t> node_id() const;

	Tensor clone() const;
	bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

	// 4-D accessors for B,C,H,W tensors.
	double& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w);
	double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const;

	const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
	std::shared_ptr<detail::TensorImpl> impl_;
};

/// Called during the backward sweep with the gradient of the node's output.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

/**
 * Reverse-mode tape. Nodes are appended in execution order, so every node's inputs are either
 * leaves or outputs of strictly earlier nodes.
 *
 * A tape becomes active on the current thread through TapeScope; operations executed while no
 * tape is active are not recorded and produce tensors that do not require grad.
 */
class Tape {
public:
	struct Node {
		std::string op;
		std::vector<std::optional<std::size_t>> input_nodes;
		std::shared_ptr<detail::TensorImpl> output;
		BackwardFn backward;
	};

	Tape() = default;
	Tape(const Tape&) = delete;
	Tape& operator=(const Tape&) = delete;

	std::size_t size() const { return nodes_.size(); }
	const std::vector<Node>& nodes() const { return nodes_; }
	bool consumed() const { return consumed_; }

	std::size_t record(std::string_view op, const std::vector<const Tensor*>& inputs, const Tensor& output,
			BackwardFn fn);

	/// Propagates d(loss)/d(.) to every tensor reachable from `loss`. A tape may be replayed once.
	void backward(const Tensor& loss);

private:
	std::vector<Node> nodes_;
	bool consumed_ = false;
};

/// Makes a tape the recording target for the current thread for the lifetime of the scope.
class TapeScope {
public:
	explicit TapeScope(Tape& tape);
	~TapeScope();
	TapeScope(const TapeScope&) = delete;
	TapeScope& operator=(const TapeScope&) = delete;

private:
	Tape* previous_;
};

Tape* active_tape();

/// Convenience wrapper around Tape::backward.
void backward(const Tensor& loss, Tape& tape);

namespace detail {

/// True when an op with these inputs should be recorded on the active tape.
bool needs_record(std::initializer_list<const Tensor*> inputs);

/**
 * Wraps a freshly computed result and, when recording, attaches `fn` as its backward rule.
 * `fn` is invoked at most once per backward sweep.
 */
Tensor finish(std::string_view op, Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn);
Tensor finish(std::string_view op, Tensor out, const std::vector<const Tensor*>& inputs, BackwardFn fn);

}  // namespace detail

}  // namespace ssmaf

#endif  // SSMAF_TENSOR_HPP_
