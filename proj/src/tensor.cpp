#include "ssmaf/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace ssmaf {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
	std::size_t n = 1;
	for (std::size_t e : shape) n *= e;
	return n;
}

std::string shape_str(const Shape& shape) {
	std::ostringstream os;
	os << '[';
	for (std::size_t i = 0; i < shape.size(); ++i) {
		if (i) os << ',';
		os << shape[i];
	}
	os << ']';
	return os.str();
}

static void validate_shape(const Shape& shape) {
	if (shape.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
	for (std::size_t e : shape)
		if (e == 0) throw std::invalid_argument("tensor extents must be >= 1, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
	validate_shape(shape);
	impl_->data.assign(shape_numel(shape), fill);
	impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<detail::TensorImpl>()) {
	validate_shape(shape);
	if (data.size() != shape_numel(shape))
		throw std::invalid_argument("data length " + std::to_string(data.size()) + " does not match shape " +
				shape_str(shape));
	impl_->data.assign(data.begin(), data.end());
	impl_->shape = std::move(shape);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, value); }

const Shape& Tensor::shape() const {
	if (!impl_) throw std::logic_error("use of undefined tensor");
	return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
	const Shape& s = shape();
	if (axis >= s.size()) throw std::out_of_range("axis out of range for shape " + shape_str(s));
	return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
	if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
	return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
	impl_->requires_grad = value;
	return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<double> Tensor::grad() {
	if (!has_grad()) throw std::logic_error("tensor has no gradient");
	return impl_->grad;
}

std::span<const double> Tensor::grad() const {
	if (!has_grad()) throw std::logic_error("tensor has no gradient");
	return impl_->grad;
}

std::span<double> Tensor::grad_buffer() {
	if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
	return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

void Tensor::clear_grad() {
	impl_->grad.clear();
	impl_->grad.shrink_to_fit();
}

std::optional<std::size_t> Tensor::node_id() const { return impl_ ? impl_->node_id : std::nullopt; }

Tensor Tensor::clone() const {
	Tensor out(shape());
	std::copy(impl_->data.begin(), impl_->data.end(), out.impl_->data.begin());
	out.impl_->requires_grad = impl_->requires_grad;
	return out;
}

double& Tensor::at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
	const Shape& s = impl_->shape;
	return impl_->data[((b * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
	const Shape& s = impl_->shape;
	return impl_->data[((b * s[1] + c) * s[2] + h) * s[3] + w];
}

std::size_t Tape::record(std::string_view op, const std::vector<const Tensor*>& inputs, const Tensor& output,
		BackwardFn fn) {
	if (consumed_) throw std::logic_error("cannot record on a tape that has already been replayed");
	Node node;
	node.op = std::string(op);
	node.input_nodes.reserve(inputs.size());
	for (const Tensor* in : inputs) node.input_nodes.push_back(in->node_id());
	node.output = output.impl();
	node.backward = std::move(fn);
	const std::size_t id = nodes_.size();
	node.output->node_id = id;
	nodes_.push_back(std::move(node));
	return id;
}

void Tape::backward(const Tensor& loss) {
	if (consumed_) throw std::logic_error("backward called twice on the same tape; re-run the forward pass");
	if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape()));
	if (!loss.requires_grad()) throw std::invalid_argument("loss does not depend on any tensor requiring grad");
	consumed_ = true;

	const auto& root = loss.impl();
	root->grad.assign(1, 1.0);
	for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
		if (it->output->grad.empty()) continue;  // not reachable from the loss
		it->backward(it->output->grad);
	}
	// Release saved forward context; the tape cannot be replayed anyway.
	for (auto& node : nodes_) {
		node.backward = nullptr;
		node.output->node_id.reset();
		node.output.reset();
	}
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

namespace detail {

bool needs_record(std::initializer_list<const Tensor*> inputs) {
	if (!g_active_tape) return false;
	return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t && t->requires_grad(); });
}

Tensor finish(std::string_view op, Tensor out, const std::vector<const Tensor*>& inputs, BackwardFn fn) {
	if (!g_active_tape) return out;
	const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
	if (!any) return out;
	out.set_requires_grad(true);
	g_active_tape->record(op, inputs, out, std::move(fn));
	return out;
}

Tensor finish(std::string_view op, Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
	std::vector<const Tensor*> v;
	for (const Tensor* t : inputs)
		if (t && t->defined()) v.push_back(t);
	return finish(op, std::move(out), v, std::move(fn));
}

}  // namespace detail

}  // namespace ssmaf
