#pragma once

// Dense row-major tensors of doubles with tape-based reverse-mode autodiff.
// Only the operations the survival model needs are provided.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "survtx/error.hpp"
#include "survtx/rng.hpp"

namespace survtx::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient flows into this node
  std::uint64_t id = 0;
  bool requires_grad = false;
};
}  // namespace detail

/// Shared handle to a tensor node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }
  /// Leading extent for a 2-D view (rank-1 tensors are a single row).
  std::size_t rows() const;
  /// Trailing extent.
  std::size_t cols() const;

  std::span<const double> data() const { return d_->value; }
  std::span<double> mutable_data() { return d_->value; }
  double operator[](std::size_t i) const { return d_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return d_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return d_->requires_grad; }
  bool has_grad() const { return !d_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has flowed in yet.
  std::vector<double> grad() const;
  std::span<double> grad_buffer();  // allocates zeros on first use
  void zero_grad() { d_->grad.clear(); }

  std::uint64_t id() const { return d_->id; }

  /// Deep copy detached from any graph.
  Tensor clone(bool requires_grad) const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad);
  std::shared_ptr<detail::TensorData> d_;
  friend class Graph;
};

enum class OpKind {
  matmul,
  add,
  sub,
  mul,
  sigmoid,
  relu,
  log,
  exp,
  neg,
  scale,
  shift,
  square,
  pow,
  softplus,
  clamp,
  softmax,
  layer_norm,
  embedding,
  concat_cols,
  concat_rows,
  sum,
  mean,
  reshape,
  dropout,
  attention,
  segment_pool,
};

const char* op_name(OpKind kind);

/// Tape of recorded operations. Backward replays the tape in reverse.
/// A non-recording graph evaluates forward values only (inference mode).
class Graph {
 public:
  struct Record {
    OpKind kind;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
    std::function<void()> backward;
  };

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  const std::vector<Record>& records() const { return records_; }

  /// Populates gradients of every reachable tensor that requires grad.
  /// The loss must hold exactly one element.
  void backward(const Tensor& loss);

  // Internal: create the output node of an op and record its backward pass.
  // `backward` receives the output gradient and must accumulate into inputs.
  Tensor emit(OpKind kind, std::initializer_list<Tensor> inputs, Shape shape,
              std::vector<double> values,
              std::function<void(std::span<const double> out_grad)> backward);
  Tensor emit(OpKind kind, const std::vector<Tensor>& inputs, Shape shape,
              std::vector<double> values,
              std::function<void(std::span<const double> out_grad)> backward);

 private:
  bool recording_;
  std::vector<Record> records_;
};

/// Contiguous run of rows belonging to one sequence in a packed batch.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// ---- linear algebra -------------------------------------------------------

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

// ---- elementwise ----------------------------------------------------------
// Binary ops accept equal shapes, a single-element right operand, or a right
// operand whose shape equals the trailing axes of the left operand.

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);

/// Pre-activation clamped to [-30, 30].
Tensor sigmoid(Graph& g, const Tensor& x);
Tensor relu(Graph& g, const Tensor& x);
/// Throws DomainError on any non-positive entry.
Tensor log(Graph& g, const Tensor& x);
Tensor exp(Graph& g, const Tensor& x);
Tensor neg(Graph& g, const Tensor& x);
Tensor scale(Graph& g, const Tensor& x, double factor);
Tensor shift(Graph& g, const Tensor& x, double offset);
Tensor square(Graph& g, const Tensor& x);
/// x^p for x > 0 (x = 0 allowed when p >= 1).
Tensor pow(Graph& g, const Tensor& x, double p);
/// log(1 + exp(x)), overflow-safe.
Tensor softplus(Graph& g, const Tensor& x);
/// Zero gradient outside [lo, hi].
Tensor clamp(Graph& g, const Tensor& x, double lo, double hi);

// ---- normalization --------------------------------------------------------

/// Max-shifted softmax along `axis`.
Tensor softmax(Graph& g, const Tensor& x, std::size_t axis);
/// Per-row normalization over the last axis with epsilon 1e-5, then gain/bias.
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias);

// ---- indexing and shape ---------------------------------------------------

/// Gathers rows of a [V x d] table; backward scatter-adds.
Tensor embedding_lookup(Graph& g, const Tensor& table, std::span<const std::size_t> indices);
Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts);
Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts);
Tensor reshape(Graph& g, const Tensor& x, Shape shape);
Tensor sum(Graph& g, const Tensor& x);
Tensor mean(Graph& g, const Tensor& x);

/// Inverted dropout; the sampled mask is kept for the backward pass.
Tensor dropout(Graph& g, const Tensor& x, double p, Rng& rng);

// ---- attention ------------------------------------------------------------

/// Multi-head self-attention over packed sequences. `qkv` is [N x 3D] laid out
/// as [Q | K | V]; each segment attends only within itself. Optionally returns
/// per-segment, per-head attention matrices (row-major L x L).
Tensor multi_head_attention(Graph& g, const Tensor& qkv, std::span<const Segment> segments,
                            std::size_t heads,
                            std::vector<std::vector<std::vector<double>>>* weights_out = nullptr);

/// Single-query attention pooling: for each segment, softmax over its rows of
/// (row . query) / sqrt(d), then the weighted sum of rows. `rows` lists, per
/// segment, which rows of `x` participate. Returns [S x d].
Tensor attention_pool(Graph& g, const Tensor& x, const Tensor& query,
                      const std::vector<std::vector<std::size_t>>& rows,
                      std::vector<std::vector<double>>* weights_out = nullptr);

// ---- testing --------------------------------------------------------------

using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

/// Max over entries of |analytic - central difference| /
/// max(|analytic|, |central|, 1e-8). `x` must require grad.
double grad_check(const ScalarFn& f, Tensor x, double eps = 1e-3);

}  // namespace survtx::ad
