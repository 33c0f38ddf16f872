#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace modir {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_tensor_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t id = next_tensor_id();

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Copies share storage. Values are treated as immutable once the tensor has
/// been used by an op; the only sanctioned in-place writers are the optimizer
/// (through mutable_data) and backward passes (through the grad buffer).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto d = std::make_shared<detail::TensorData>();
    d->value.assign(shape_numel(shape), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    auto d = std::make_shared<detail::TensorData>();
    d->shape = std::move(shape);
    d->value = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.d_->value.begin(), t.d_->value.end(), v);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return d_ != nullptr; }
  std::uint64_t id() const { return d_->id; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t numel() const { return d_->value.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const double> data() const { return d_->value; }
  std::span<double> mutable_data() { return d_->value; }
  double item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return d_->value[0];
  }
  double operator[](std::size_t i) const { return d_->value[i]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }
  bool has_grad() const { return !d_->grad.empty(); }
  std::span<const double> grad() const { return d_->grad; }
  std::span<double> mutable_grad() {
    d_->ensure_grad();
    return d_->grad;
  }
  void zero_grad() { d_->grad.clear(); }

  /// Fresh tensor with a copy of the values, detached from any tape.
  Tensor detach() const { return from(shape(), d_->value, false); }

  bool all_finite() const {
    for (double v : d_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  const std::shared_ptr<detail::TensorData>& impl() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
};

enum class OpKind {
  Conv2d,
  ChannelBias,
  LeakyRelu,
  UpsampleBilinear,
  GridSample,
  ConcatChannels,
  DisplacementToCoords,
  BoxSum,
  Add,
  Sub,
  Mul,
  Div,
  Square,
  Scale,
  AddScalar,
  Diff,
  ReduceMean,
  ReduceSum,
  SumSpatial,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ChannelBias: return "channel_bias";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::UpsampleBilinear: return "upsample_bilinear";
    case OpKind::GridSample: return "grid_sample";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::DisplacementToCoords: return "displacement_to_coords";
    case OpKind::BoxSum: return "box_sum";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Square: return "square";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Diff: return "diff";
    case OpKind::ReduceMean: return "reduce_mean";
    case OpKind::ReduceSum: return "reduce_sum";
    case OpKind::SumSpatial: return "sum_spatial";
  }
  return "?";
}

/// Define-by-run record of differentiable ops.
///
/// Entries are appended in execution order, so inputs always precede their
/// consumers; backward walks the entries in exact reverse order, which fixes
/// the floating-point accumulation order. Leaf gradients accumulate across
/// calls until Tensor::zero_grad is used. A tape is not thread safe.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Entry {
    OpKind kind;
    std::vector<std::shared_ptr<detail::TensorData>> inputs;
    std::shared_ptr<detail::TensorData> output;
    BackwardFn backward;
  };

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  /// True when the op producing an output from these inputs must be recorded.
  bool wants(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    for (const Tensor* t : inputs)
      if (t->requires_grad()) return true;
    return false;
  }

  void record(OpKind kind, std::initializer_list<const Tensor*> inputs, const Tensor& output,
              BackwardFn backward) {
    Entry e{kind, {}, output.impl(), std::move(backward)};
    for (const Tensor* t : inputs) e.inputs.push_back(t->impl());
    entries_.push_back(std::move(e));
  }

  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Backpropagate from a scalar loss.
  void backward(const Tensor& loss) {
    const double one = 1.0;
    backward(std::span<const Tensor>(&loss, 1), std::span<const double>(&one, 1));
  }

  /// Backpropagate sum_s weights[s] * sources[s], treating the weights as
  /// constants. Every source must be a scalar.
  void backward(std::span<const Tensor> sources, std::span<const double> weights) {
    if (sources.size() != weights.size())
      throw ContractError("backward: " + std::to_string(sources.size()) + " sources but " +
                          std::to_string(weights.size()) + " weights");
    for (const Tensor& s : sources)
      if (!s.is_scalar() || !s.shape().empty())
        throw ContractError("backward from non-scalar tensor " + shape_str(s.shape()));
    // Intermediate grads restart from zero each pass; leaf grads accumulate.
    for (auto& e : entries_) {
      e.output->ensure_grad();
      std::fill(e.output->grad.begin(), e.output->grad.end(), 0.0);
    }
    for (auto& e : entries_)
      for (auto& in : e.inputs)
        if (in->requires_grad) in->ensure_grad();
    for (std::size_t s = 0; s < sources.size(); ++s) {
      auto& d = *sources[s].impl();
      if (!d.requires_grad) continue;
      d.ensure_grad();
      d.grad[0] += weights[s];
    }
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

  /// Every input id precedes its consumer; leaves never appear as outputs.
  bool topologically_ordered() const {
    std::unordered_set<std::uint64_t> produced;
    std::unordered_set<std::uint64_t> all_outputs;
    for (const auto& e : entries_) all_outputs.insert(e.output->id);
    for (const auto& e : entries_) {
      for (const auto& in : e.inputs)
        if (all_outputs.count(in->id) && !produced.count(in->id)) return false;
      produced.insert(e.output->id);
    }
    return true;
  }

  /// Kinds of ops whose outputs contain a non-finite value (e.g. 0/0 or x/0).
  std::vector<OpKind> unhealthy_ops() const {
    std::vector<OpKind> bad;
    for (const auto& e : entries_)
      for (double v : e.output->value)
        if (!std::isfinite(v)) {
          bad.push_back(e.kind);
          break;
        }
    return bad;
  }
  bool healthy() const { return unhealthy_ops().empty(); }

 private:
  bool recording_;
  std::vector<Entry> entries_;
};

}  // namespace modir
