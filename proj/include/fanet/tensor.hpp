#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fanet/errors.hpp"

namespace fanet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

// Storage behind a Tensor handle. Values are 64-bit; 32-bit only exists in
// the on-disk container.
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  std::uint64_t node_id = 0;
  const Tape* tape = nullptr;  // producing tape, null for leaves
  std::size_t tape_index = 0;

  void ensure_grad();
};

/// Dense row-major tensor with reverse-mode gradient tracking.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
/// Image tensors use N-H-W-C axis order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  // In-place writes are only legal between passes (parameter updates, init).
  std::span<double> mutable_values();
  double at(std::size_t flat_index) const { return values()[flat_index]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  std::uint64_t node_id() const;
  bool on_tape() const;

  Tensor clone() const;
  /// Same values, no history, no gradient.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>,
                            std::initializer_list<Tensor>,
                            std::function<void(std::span<const double>)>);

  std::shared_ptr<TensorImpl> impl_;
};

/// Receives the output gradient and accumulates into captured inputs.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

/// Builds an op result. When a tape is active and any input requires a
/// gradient, the result is recorded with `backward`.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward);

/// True when `t` accumulates gradients.
inline bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

/// Ordered record of executed ops. Confined to one thread.
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorImpl> output;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }

  /// Runs reverse accumulation from `loss`. Returns the number of ops visited.
  std::size_t backward(const Tensor& loss);
  void clear();

  /// Innermost tape activated on this thread, or null (inference).
  static Tape* active();

 private:
  friend Tensor make_result(Shape, std::vector<double>,
                            std::initializer_list<Tensor>, BackwardFn);
  friend class TapeScope;

  std::vector<Entry> entries_;
};

/// Activates a tape on the current thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Backpropagates through the active tape. `loss` must be a scalar recorded
/// on that tape.
void backward(const Tensor& loss);

// ---- elementwise / linear algebra ----

/// Broadcasting: `b` may have lower rank (aligned on trailing axes) and any
/// extent of `b` may be 1 where `a` has a larger extent. The result always
/// has `a`'s shape; gradients of `b` are summed over broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

/// Index map from each element of `a_shape` to the broadcast element of
/// `b_shape`. Throws ShapeError when `b_shape` is not broadcastable.
std::vector<std::size_t> broadcast_index(const Shape& a_shape,
                                         const Shape& b_shape);

/// Text dump: shape line, then row-major values at 17 significant digits.
std::string dump_text(const Tensor& t);
Tensor parse_text(const std::string& text);

bool all_finite(std::span<const double> values);

}  // namespace fanet
