#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace phcp::nd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool tracked = false;  // leaf with requires_grad, or result of an op on a tracked input
};
}  // namespace detail

// Dense row-major tensor of doubles, rank <= 4. Three-dimensional tensors are
// laid out channel-major (C x H x W).
//
// Copies share storage (handle semantics, like a parameter reference); use
// clone() for an independent value.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  bool defined() const { return static_cast<bool>(s_); }

  std::span<const double> data() const;
  // Writable view. Only valid on untracked tensors or leaves (used by
  // optimizers and initializers); never on op results inside a live tape.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool tracked() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  // Independent copy of values and flags, without gradient history.
  Tensor clone() const;
  // Copy of the values only; never tracked.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  friend class Tape;
  friend detail::Storage& storage(const Tensor& t);
  explicit Tensor(std::shared_ptr<detail::Storage> s) : s_(std::move(s)) {}

  std::shared_ptr<detail::Storage> s_;
};

detail::Storage& storage(const Tensor& t);

// Ordered record of executed primitive ops. Ops append a backward closure when
// at least one input is tracked; backward() replays the closures once, in
// reverse order, and then marks the tape consumed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Creates a tracked result tensor when any input is tracked, an untracked one
  // otherwise. `backward` is only recorded for tracked results.
  Tensor make_result(Shape shape, std::vector<double> values, bool tracked);
  void record(std::function<void()> backward);

  void backward(const Tensor& root);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
};

// Accumulation buffer for a tracked tensor's gradient, allocated on demand.
std::vector<double>& grad_buffer(const Tensor& t);

}  // namespace phcp::nd
