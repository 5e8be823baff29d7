#include "nadex/tensor.hpp"

#include <cmath>
#include <sstream>

#include "nadex/errors.hpp"

namespace nadex {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

Tensor::Tensor() = default;

Tensor::Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::size_t Tensor::outer() const {
  const Shape& s = impl_->shape;
  if (s.empty()) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

std::size_t Tensor::inner() const {
  const Shape& s = impl_->shape;
  return s.empty() ? 1 : s.back();
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data.at(row * inner() + col);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() needs a single-element tensor, got shape " +
                        shape_to_string(shape()));
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor& Tensor::set_name(std::string name) {
  impl_->name = std::move(name);
  return *this;
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->grad = impl_->grad;
  impl->requires_grad = impl_->requires_grad;
  impl->name = impl_->name;
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  return from(impl_->shape, impl_->data, false);
}

namespace {
thread_local Tape tls_tape;
thread_local bool tls_grad_enabled = true;
}  // namespace

Tape& Tape::current() { return tls_tape; }

void Tape::clear() {
  for (auto& node : nodes_) node->backward_fn = nullptr;
  nodes_.clear();
}

void Tape::run_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorImpl& node = **it;
    if (node.grad.empty() || !node.backward_fn) continue;
    node.backward_fn();
  }
}

bool grad_enabled() { return tls_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) {
  tls_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_to_string(loss.shape())
                                        : std::string("<undefined>")));
  }
  Tape& tape = Tape::current();
  if (loss.requires_grad()) {
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    tape.run_backward();
  }
  tape.clear();
}

namespace autograd {

Tensor make_result(Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& parents,
                   const std::function<std::function<void()>(TensorImpl*)>&
                       make_backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  out.impl()->backward_fn = make_backward(out.impl().get());
  Tape::current().record(out.impl());
  return out;
}

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> parents,
                   const std::function<std::function<void()>(TensorImpl*)>&
                       make_backward) {
  return make_result(std::move(shape), std::move(values),
                     std::vector<Tensor>(parents), make_backward);
}

void accumulate(const TensorImplPtr& target, std::span<const double> delta) {
  if (!target->requires_grad) return;
  target->ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) target->grad[i] += delta[i];
}

}  // namespace autograd

}  // namespace nadex
