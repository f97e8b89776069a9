#include "fanet/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace fanet {
namespace {

std::atomic<std::uint64_t> g_next_node_id{1};
thread_local Tape* t_active_tape = nullptr;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> values) {
  if (values.size() != numel(shape)) {
    throw ShapeError("element count " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->node_id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

void require_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

Tensor::Tensor(Shape shape, double fill) {
  const std::size_t n = numel(shape);
  impl_ = new_impl(std::move(shape), std::vector<double>(n, fill));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(new_impl(std::move(shape), std::move(values))) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return defined() ? impl_->values.size() : 0; }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  return impl_->values;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on non-scalar tensor of shape " +
                     to_string(shape()));
  }
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (defined()) impl_->grad.clear();
}

std::uint64_t Tensor::node_id() const {
  require_defined(*this, "node_id");
  return impl_->node_id;
}

bool Tensor::on_tape() const { return defined() && impl_->tape != nullptr; }

Tensor Tensor::clone() const {
  require_defined(*this, "clone");
  Tensor t(impl_->shape, impl_->values);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(impl_->shape, impl_->values);
}

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward) {
  if (!all_finite(values)) {
    throw NumericError("non-finite value produced by op with output shape " +
                       to_string(shape));
  }
  auto impl = new_impl(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  bool track = false;
  for (const Tensor& in : inputs) track = track || wants_grad(in);
  if (tape != nullptr && track) {
    impl->requires_grad = true;
    impl->tape = tape;
    impl->tape_index = tape->entries_.size();
    Tape::Entry entry;
    entry.output = impl;
    for (const Tensor& in : inputs) {
      if (in.defined()) entry.inputs.push_back(in.impl());
    }
    entry.backward = std::move(backward);
    tape->entries_.push_back(std::move(entry));
  }
  return Tensor(std::move(impl));
}

Tape* Tape::active() { return t_active_tape; }

std::size_t Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw AutodiffError("backward: undefined loss");
  if (loss.size() != 1) {
    throw AutodiffError("backward: loss must be scalar, got shape " +
                        to_string(loss.shape()));
  }
  const auto& impl = loss.impl();
  if (impl->tape != this || impl->tape_index >= entries_.size() ||
      entries_[impl->tape_index].output != impl) {
    throw AutodiffError("backward: loss is detached from this tape");
  }
  impl->ensure_grad();
  impl->grad[0] += 1.0;
  std::size_t visited = 0;
  for (std::size_t i = impl->tape_index + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (e.output->grad.empty()) continue;
    e.backward(e.output->grad);
    ++visited;
  }
  return visited;
}

void Tape::clear() {
  for (Entry& e : entries_) e.output->tape = nullptr;
  entries_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) {
  t_active_tape = &tape;
}

TapeScope::~TapeScope() { t_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw AutodiffError("backward: no active tape");
  tape->backward(loss);
}

std::vector<std::size_t> broadcast_index(const Shape& a_shape,
                                         const Shape& b_shape) {
  if (b_shape.size() > a_shape.size()) {
    throw ShapeError("shape mismatch: " + to_string(b_shape) +
                     " cannot broadcast to " + to_string(a_shape));
  }
  const std::size_t rank = a_shape.size();
  const std::size_t offset = rank - b_shape.size();
  // Strides of b in a's frame; zero on broadcast axes.
  std::vector<std::size_t> b_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = b_shape.size(); k-- > 0;) {
    const std::size_t ax = k + offset;
    if (b_shape[k] == a_shape[ax]) {
      b_stride[ax] = stride;
    } else if (b_shape[k] != 1) {
      throw ShapeError("shape mismatch: " + to_string(a_shape) + " vs " +
                       to_string(b_shape));
    }
    stride *= b_shape[k];
  }
  const std::size_t n = numel(a_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t b_flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = b_flat;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      b_flat += b_stride[ax];
      if (counter[ax] < a_shape[ax]) break;
      b_flat -= b_stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return map;
}

namespace {

enum class Binary { kAdd, kSub, kMul };

Tensor elementwise(Binary op, const Tensor& a, const Tensor& b) {
  require_defined(a, "elementwise");
  require_defined(b, "elementwise");
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> map;
  if (!same) map = broadcast_index(a.shape(), b.shape());
  auto b_at = [&map, same](std::size_t i) { return same ? i : map[i]; };

  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    const double y = bv[b_at(i)];
    switch (op) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [op, ai, bi, map = std::move(map), same](std::span<const double> g) {
        auto b_at = [&map, same](std::size_t i) { return same ? i : map[i]; };
        if (ai->requires_grad) {
          ai->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) {
            ai->grad[i] += op == Binary::kMul ? g[i] * bi->values[b_at(i)] : g[i];
          }
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) {
            double d = g[i];
            if (op == Binary::kSub) d = -d;
            if (op == Binary::kMul) d *= ai->values[i];
            bi->grad[b_at(i)] += d;
          }
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(Binary::kAdd, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(Binary::kSub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(Binary::kMul, a, b);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimension mismatch between " +
                     to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result({m, n}, std::move(out), {a, b},
                     [ai, bi, m, k, n](std::span<const double> g) {
                       if (ai->requires_grad) {  // dA = dC * B^T
                         ai->ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j)
                               s += g[i * n + j] * bi->values[p * n + j];
                             ai->grad[i * k + p] += s;
                           }
                       }
                       if (bi->requires_grad) {  // dB = A^T * dC
                         bi->ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double x = ai->values[i * k + p];
                             for (std::size_t j = 0; j < n; ++j)
                               bi->grad[p * n + j] += x * g[i * n + j];
                           }
                       }
                     });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), {x},
                     [xi, factor](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         xi->grad[i] += factor * g[i];
                     });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xi = x.impl();
  return make_result({1}, {s}, {x}, [xi](std::span<const double> g) {
    xi->ensure_grad();
    for (double& d : xi->grad) d += g[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " +
                     to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xi = x.impl();
  return make_result(std::move(shape), std::move(out), {x},
                     [xi](std::span<const double> g) {
                       xi->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         xi->grad[i] += g[i];
                     });
}

std::string dump_text(const Tensor& t) {
  std::ostringstream os;
  const Shape& shape = t.shape();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ' ';
    os << shape[i];
  }
  os << '\n';
  char buf[32];
  for (double v : t.values()) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf << '\n';
  }
  return os.str();
}

Tensor parse_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw DataError("tensor text: missing shape line");
  Shape shape;
  {
    std::istringstream ls(line);
    std::size_t d;
    while (ls >> d) shape.push_back(d);
  }
  std::vector<double> values;
  double v;
  while (is >> v) values.push_back(v);
  if (values.size() != numel(shape)) {
    throw DataError("tensor text: expected " + std::to_string(numel(shape)) +
                    " values, found " + std::to_string(values.size()));
  }
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace fanet
