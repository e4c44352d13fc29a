#include "phcp/ndgrad/tensor.hpp"

#include <cassert>
#include <cmath>
#include <sstream>

#include "phcp/common/error.hpp"

namespace phcp::nd {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape, std::size_t n) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be 1..4, got shape " + shape_str(shape));
  if (shape_numel(shape) != n)
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(n) +
                     " values");
}
}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) : s_(std::make_shared<detail::Storage>()) {
  const auto n = shape_numel(shape);
  check_shape(shape, n);
  s_->shape = std::move(shape);
  s_->data.assign(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : s_(std::make_shared<detail::Storage>()) {
  check_shape(shape, values.size());
  s_->shape = std::move(shape);
  s_->data = std::move(values);
}

const Shape& Tensor::shape() const { return s_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= s_->shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s_->shape));
  return s_->shape[axis];
}

std::size_t Tensor::numel() const { return s_->data.size(); }

std::span<const double> Tensor::data() const { return s_->data; }

std::span<double> Tensor::mutable_data() { return s_->data; }

double Tensor::item() const {
  if (s_->data.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(s_->shape));
  return s_->data[0];
}

double Tensor::at(std::size_t c, std::size_t h, std::size_t w) const {
  const auto& sh = s_->shape;
  assert(sh.size() == 3);
  return s_->data[(c * sh[1] + h) * sh[2] + w];
}

bool Tensor::requires_grad() const { return s_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  s_->requires_grad = flag;
  s_->tracked = flag;
  if (!flag) s_->grad.clear();
  return *this;
}

bool Tensor::tracked() const { return s_ && s_->tracked; }

bool Tensor::has_grad() const { return !s_->grad.empty(); }

std::span<const double> Tensor::grad() const { return s_->grad; }

void Tensor::zero_grad() {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

void Tensor::clear_grad() { s_->grad.clear(); }

Tensor Tensor::clone() const {
  auto s = std::make_shared<detail::Storage>();
  s->shape = s_->shape;
  s->data = s_->data;
  s->requires_grad = s_->requires_grad;
  s->tracked = s_->requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::detach() const {
  auto s = std::make_shared<detail::Storage>();
  s->shape = s_->shape;
  s->data = s_->data;
  return Tensor(std::move(s));
}

detail::Storage& storage(const Tensor& t) { return *t.s_; }

std::vector<double>& grad_buffer(const Tensor& t) {
  auto& s = storage(t);
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

Tensor Tape::make_result(Shape shape, std::vector<double> values, bool tracked) {
#ifndef NDEBUG
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError("non-finite value produced by op");
  }
#endif
  Tensor t(std::move(shape), std::move(values));
  t.s_->tracked = tracked;
  return t;
}

void Tape::record(std::function<void()> backward) {
  if (consumed_) throw Error("tape already consumed by backward(); run forward again");
  entries_.push_back(std::move(backward));
}

void Tape::backward(const Tensor& root) {
  if (consumed_) throw Error("backward() called twice on the same tape (stale tape)");
  if (!root.defined() || root.numel() != 1)
    throw ShapeError("backward() root must be a scalar tensor");
  consumed_ = true;
  if (!root.tracked()) return;  // nothing requires grad
  auto& g = grad_buffer(root);
  g[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

}  // namespace phcp::nd
