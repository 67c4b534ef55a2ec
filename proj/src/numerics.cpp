#include "survtx/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace survtx::ad {

namespace {

std::atomic<std::uint64_t> next_id{1};

constexpr double kLayerNormEps = 1e-5;
constexpr double kSigmoidClamp = 30.0;

// C[m x n] += A[m x k] * B[k x n]. Each C element sums over k in order, so the
// result for a row never depends on how many rows are in the batch.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> transpose(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(x.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = x[i * cols + j];
  return t;
}

enum class Broadcast { same, scalar, trailing };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
    return Broadcast::trailing;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(bs) + " to " +
                       shape_string(as));
}

// Index into the right operand for flat left index i.
inline std::size_t bidx(Broadcast kind, std::size_t i, std::size_t bsize) {
  switch (kind) {
    case Broadcast::same:
      return i;
    case Broadcast::scalar:
      return 0;
    case Broadcast::trailing:
      return i % bsize;
  }
  return 0;
}

template <typename Forward, typename Derivative>
Tensor unary(Graph& g, OpKind kind, const Tensor& x, Forward fwd, Derivative deriv) {
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  auto result_values = out;
  Tensor xin = x;
  return g.emit(kind, {x}, x.shape(), std::move(out),
                [xin, y = std::move(result_values), deriv](std::span<const double> gy) mutable {
                  auto gx = xin.grad_buffer();
                  const auto xv = xin.data();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xv[i], y[i]);
                });
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_string(t.shape()));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::neg: return "neg";
    case OpKind::scale: return "scale";
    case OpKind::shift: return "shift";
    case OpKind::square: return "square";
    case OpKind::pow: return "pow";
    case OpKind::softplus: return "softplus";
    case OpKind::clamp: return "clamp";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embedding: return "embedding";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::reshape: return "reshape";
    case OpKind::dropout: return "dropout";
    case OpKind::attention: return "attention";
    case OpKind::segment_pool: return "segment_pool";
  }
  return "?";
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::make(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size())
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->value = std::move(values);
  d->id = next_id.fetch_add(1, std::memory_order_relaxed);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return make(std::move(shape), std::move(values), false);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return make(std::move(shape), std::move(values), true);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value) { return make({1}, {value}, false); }

std::size_t Tensor::rows() const {
  const auto& s = d_->shape;
  if (s.size() <= 1) return 1;
  return size() / s.back();
}

std::size_t Tensor::cols() const {
  const auto& s = d_->shape;
  return s.empty() ? 1 : s.back();
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return d_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (d_->grad.empty()) return std::vector<double>(size(), 0.0);
  return d_->grad;
}

std::span<double> Tensor::grad_buffer() {
  if (d_->grad.empty()) d_->grad.assign(size(), 0.0);
  return d_->grad;
}

Tensor Tensor::clone(bool requires_grad) const {
  return make(d_->shape, d_->value, requires_grad);
}

// ---- Graph -----------------------------------------------------------------

Tensor Graph::emit(OpKind kind, std::initializer_list<Tensor> inputs, Shape shape,
                   std::vector<double> values,
                   std::function<void(std::span<const double>)> backward) {
  return emit(kind, std::vector<Tensor>(inputs), std::move(shape), std::move(values),
              std::move(backward));
}

Tensor Graph::emit(OpKind kind, const std::vector<Tensor>& inputs, Shape shape,
                   std::vector<double> values,
                   std::function<void(std::span<const double>)> backward) {
  const bool needs_grad =
      recording_ && std::any_of(inputs.begin(), inputs.end(),
                                [](const Tensor& t) { return t.requires_grad(); });
  Tensor out = Tensor::make(std::move(shape), std::move(values), needs_grad);
  if (!needs_grad) return out;

  Record rec;
  rec.kind = kind;
  rec.output = out.id();
  rec.inputs.reserve(inputs.size());
  for (const auto& t : inputs) rec.inputs.push_back(t.id());
  auto node = out.d_;
  rec.backward = [node, back = std::move(backward)]() {
    if (node->grad.empty()) return;
    back(node->grad);
  };
  records_.push_back(std::move(rec));
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;
  auto& lg = loss.d_->grad;
  lg.assign(1, 1.0);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  std::vector<double> c(m * n, 0.0);
  gemm_nn(m, k, n, a.data().data(), b.data().data(), c.data());
  Tensor ain = a, bin = b;
  return g.emit(OpKind::matmul, {a, b}, {m, n}, std::move(c),
                [ain, bin, m, k, n](std::span<const double> gc) mutable {
                  if (ain.requires_grad()) {
                    // dA = dC * B^T
                    const auto bt = transpose(bin.data(), k, n);
                    gemm_nn(m, n, k, gc.data(), bt.data(), ain.grad_buffer().data());
                  }
                  if (bin.requires_grad()) {
                    // dB = A^T * dC
                    const auto at = transpose(ain.data(), m, k);
                    gemm_nn(k, m, n, at.data(), gc.data(), bin.grad_buffer().data());
                  }
                });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind(a, b, "add");
  const std::size_t bs = b.size();
  std::vector<double> out(a.size());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[bidx(kind, i, bs)];
  Tensor ain = a, bin = b;
  return g.emit(OpKind::add, {a, b}, a.shape(), std::move(out),
                [ain, bin, kind, bs](std::span<const double> gy) mutable {
                  if (ain.requires_grad()) {
                    auto ga = ain.grad_buffer();
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                  }
                  if (bin.requires_grad()) {
                    auto gb = bin.grad_buffer();
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[bidx(kind, i, bs)] += gy[i];
                  }
                });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind(a, b, "sub");
  const std::size_t bs = b.size();
  std::vector<double> out(a.size());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[bidx(kind, i, bs)];
  Tensor ain = a, bin = b;
  return g.emit(OpKind::sub, {a, b}, a.shape(), std::move(out),
                [ain, bin, kind, bs](std::span<const double> gy) mutable {
                  if (ain.requires_grad()) {
                    auto ga = ain.grad_buffer();
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                  }
                  if (bin.requires_grad()) {
                    auto gb = bin.grad_buffer();
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[bidx(kind, i, bs)] -= gy[i];
                  }
                });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind(a, b, "mul");
  const std::size_t bs = b.size();
  std::vector<double> out(a.size());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[bidx(kind, i, bs)];
  Tensor ain = a, bin = b;
  return g.emit(OpKind::mul, {a, b}, a.shape(), std::move(out),
                [ain, bin, kind, bs](std::span<const double> gy) mutable {
                  const auto av = ain.data();
                  const auto bv = bin.data();
                  if (ain.requires_grad()) {
                    auto ga = ain.grad_buffer();
                    for (std::size_t i = 0; i < gy.size(); ++i)
                      ga[i] += gy[i] * bv[bidx(kind, i, bs)];
                  }
                  if (bin.requires_grad()) {
                    auto gb = bin.grad_buffer();
                    for (std::size_t i = 0; i < gy.size(); ++i)
                      gb[bidx(kind, i, bs)] += gy[i] * av[i];
                  }
                });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::sigmoid, x,
      [](double v) {
        const double c = std::clamp(v, -kSigmoidClamp, kSigmoidClamp);
        return 1.0 / (1.0 + std::exp(-c));
      },
      [](double v, double y) {
        if (v < -kSigmoidClamp || v > kSigmoidClamp) return 0.0;
        return y * (1.0 - y);
      });
}

Tensor relu(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(Graph& g, const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return unary(
      g, OpKind::log, x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor exp(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::exp, x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor neg(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::neg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  return unary(
      g, OpKind::scale, x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor shift(Graph& g, const Tensor& x, double offset) {
  return unary(
      g, OpKind::shift, x, [offset](double v) { return v + offset; },
      [](double, double) { return 1.0; });
}

Tensor square(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::square, x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor pow(Graph& g, const Tensor& x, double p) {
  for (double v : x.data())
    if (v < 0.0 || (v == 0.0 && p < 1.0))
      throw DomainError("pow: base " + std::to_string(v) + " outside domain for exponent " +
                        std::to_string(p));
  return unary(
      g, OpKind::pow, x, [p](double v) { return p == 0.0 ? 1.0 : std::pow(v, p); },
      [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

Tensor softplus(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::softplus, x,
      [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
}

Tensor clamp(Graph& g, const Tensor& x, double lo, double hi) {
  return unary(
      g, OpKind::clamp, x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

// ---- normalization ---------------------------------------------------------

Tensor softmax(Graph& g, const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  std::vector<double> y(x.size());
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= z;
    }
  }
  auto saved = y;
  Tensor xin = x;
  return g.emit(OpKind::softmax, {x}, s, std::move(y),
                [xin, y = std::move(saved), outer, inner, n](std::span<const double> gy) mutable {
                  auto gx = xin.grad_buffer();
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t in = 0; in < inner; ++in) {
                      const std::size_t base = o * n * inner + in;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j)
                        dot += gy[base + j * inner] * y[base + j * inner];
                      for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t idx = base + j * inner;
                        gx[idx] += y[idx] * (gy[idx] - dot);
                      }
                    }
                  }
                });
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.cols();
  if (d < 2) throw ContractError("layer_norm: last axis must have length >= 2");
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: gain/bias length must equal " + std::to_string(d));
  const std::size_t rows = x.size() / d;
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  std::vector<double> y(x.size());
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * inv;
      xhat[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor xin = x, gin = gain, bin = bias;
  return g.emit(
      OpKind::layer_norm, {x, gain, bias}, x.shape(), std::move(y),
      [xin, gin, bin, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       d](std::span<const double> gy) mutable {
        const auto gv = gin.data();
        if (gin.requires_grad()) {
          auto gg = gin.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xhat[r * d + j];
        }
        if (bin.requires_grad()) {
          auto gb = bin.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
        }
        if (xin.requires_grad()) {
          auto gx = xin.grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = gy[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = gy[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

// ---- indexing and shape ----------------------------------------------------

Tensor embedding_lookup(Graph& g, const Tensor& table, std::span<const std::size_t> indices) {
  require_2d(table, "embedding_lookup");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(indices.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v)
      throw IndexError("embedding_lookup: index " + std::to_string(indices[i]) +
                       " out of range [0, " + std::to_string(v) + ")");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(indices[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Tensor tin = table;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return g.emit(OpKind::embedding, {table}, {indices.size(), d}, std::move(out),
                [tin, idx = std::move(idx), d](std::span<const double> gy) mutable {
                  auto gt = tin.grad_buffer();
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    double* row = gt.data() + idx[i] * d;
                    const double* src = gy.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
                  }
                });
}

Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  for (const auto& p : parts) require_2d(p, "concat_cols");
  const std::size_t rows = parts[0].shape()[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.shape()[0] != rows) throw DimensionError("concat_cols: row counts differ");
    total += p.shape()[1];
  }
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.shape()[1];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(r * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    off += c;
  }
  std::vector<Tensor> ins = parts;
  return g.emit(OpKind::concat_cols, parts, {rows, total}, std::move(out),
                [ins, rows, total](std::span<const double> gy) mutable {
                  std::size_t off = 0;
                  for (auto& p : ins) {
                    const std::size_t c = p.shape()[1];
                    if (p.requires_grad()) {
                      auto gp = p.grad_buffer();
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < c; ++j)
                          gp[r * c + j] += gy[r * total + off + j];
                    }
                    off += c;
                  }
                });
}

Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  for (const auto& p : parts) require_2d(p, "concat_rows");
  const std::size_t cols = parts[0].shape()[1];
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.shape()[1] != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> ins = parts;
  return g.emit(OpKind::concat_rows, parts, {rows, cols}, std::move(out),
                [ins](std::span<const double> gy) mutable {
                  std::size_t off = 0;
                  for (auto& p : ins) {
                    if (p.requires_grad()) {
                      auto gp = p.grad_buffer();
                      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy[off + i];
                    }
                    off += p.size();
                  }
                });
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  Tensor xin = x;
  return g.emit(OpKind::reshape, {x}, std::move(shape), std::move(out),
                [xin](std::span<const double> gy) mutable {
                  auto gx = xin.grad_buffer();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
                });
}

Tensor sum(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor xin = x;
  return g.emit(OpKind::sum, {x}, {1}, {s}, [xin](std::span<const double> gy) mutable {
    auto gx = xin.grad_buffer();
    for (auto& v : gx) v += gy[0];
  });
}

Tensor mean(Graph& g, const Tensor& x) {
  if (x.size() == 0) throw ContractError("mean of empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor xin = x;
  return g.emit(OpKind::mean, {x}, {1}, {s * inv}, [xin, inv](std::span<const double> gy) mutable {
    auto gx = xin.grad_buffer();
    for (auto& v : gx) v += gy[0] * inv;
  });
}

Tensor dropout(Graph& g, const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  Tensor xin = x;
  return g.emit(OpKind::dropout, {x}, x.shape(), std::move(out),
                [xin, mask = std::move(mask)](std::span<const double> gy) mutable {
                  auto gx = xin.grad_buffer();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
                });
}

// ---- attention -------------------------------------------------------------

Tensor multi_head_attention(Graph& g, const Tensor& qkv, std::span<const Segment> segments,
                            std::size_t heads,
                            std::vector<std::vector<std::vector<double>>>* weights_out) {
  require_2d(qkv, "multi_head_attention");
  const std::size_t n = qkv.shape()[0];
  const std::size_t w = qkv.shape()[1];
  if (w % 3 != 0) throw DimensionError("multi_head_attention: qkv width must be 3*d");
  const std::size_t d = w / 3;
  if (heads == 0 || d % heads != 0)
    throw DimensionError("multi_head_attention: model width not divisible by heads");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& s : segments)
    if (s.length == 0 || s.offset + s.length > n)
      throw ContractError("multi_head_attention: invalid segment");

  const auto x = qkv.data();
  std::vector<double> out(n * d, 0.0);
  // Saved attention probabilities, per segment then head, each L x L.
  std::vector<std::vector<double>> probs(segments.size() * heads);
  if (weights_out) weights_out->assign(segments.size(), {});

  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto [off, len] = segments[si];
    if (weights_out) (*weights_out)[si].resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      auto& p = probs[si * heads + h];
      p.assign(len * len, 0.0);
      const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        const double* q = x.data() + (off + i) * w + qo;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          const double* k = x.data() + (off + j) * w + ko;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[c] * k[c];
          s *= inv_sqrt;
          p[i * len + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          p[i * len + j] = std::exp(p[i * len + j] - mx);
          z += p[i * len + j];
        }
        for (std::size_t j = 0; j < len; ++j) p[i * len + j] /= z;
        double* o = out.data() + (off + i) * d + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const double a = p[i * len + j];
          const double* v = x.data() + (off + j) * w + vo;
          for (std::size_t c = 0; c < dh; ++c) o[c] += a * v[c];
        }
      }
      if (weights_out) (*weights_out)[si][h] = p;
    }
  }

  Tensor in = qkv;
  std::vector<Segment> segs(segments.begin(), segments.end());
  return g.emit(
      OpKind::attention, {qkv}, {n, d}, std::move(out),
      [in, segs = std::move(segs), probs = std::move(probs), heads, d, dh, w,
       inv_sqrt](std::span<const double> gy) mutable {
        const auto x = in.data();
        auto gx = in.grad_buffer();
        std::vector<double> dp;
        for (std::size_t si = 0; si < segs.size(); ++si) {
          const auto [off, len] = segs[si];
          for (std::size_t h = 0; h < heads; ++h) {
            const auto& p = probs[si * heads + h];
            const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
            dp.assign(len * len, 0.0);
            for (std::size_t i = 0; i < len; ++i) {
              const double* go = gy.data() + (off + i) * d + h * dh;
              // dV_j += p_ij * dout_i ; dp_ij = dout_i . V_j
              for (std::size_t j = 0; j < len; ++j) {
                const double* v = x.data() + (off + j) * w + vo;
                double* gv = gx.data() + (off + j) * w + vo;
                const double a = p[i * len + j];
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                  gv[c] += a * go[c];
                  s += go[c] * v[c];
                }
                dp[i * len + j] = s;
              }
              double dot = 0.0;
              for (std::size_t j = 0; j < len; ++j) dot += p[i * len + j] * dp[i * len + j];
              const double* q = x.data() + (off + i) * w + qo;
              double* gq = gx.data() + (off + i) * w + qo;
              for (std::size_t j = 0; j < len; ++j) {
                const double ds = p[i * len + j] * (dp[i * len + j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* k = x.data() + (off + j) * w + ko;
                double* gk = gx.data() + (off + j) * w + ko;
                for (std::size_t c = 0; c < dh; ++c) {
                  gq[c] += ds * k[c];
                  gk[c] += ds * q[c];
                }
              }
            }
          }
        }
      });
}

Tensor attention_pool(Graph& g, const Tensor& x, const Tensor& query,
                      const std::vector<std::vector<std::size_t>>& rows,
                      std::vector<std::vector<double>>* weights_out) {
  require_2d(x, "attention_pool");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (query.size() != d) throw DimensionError("attention_pool: query width differs from rows");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
  const auto xv = x.data();
  const auto qv = query.data();
  std::vector<std::vector<double>> weights(rows.size());
  std::vector<double> out(rows.size() * d, 0.0);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto& rs = rows[s];
    if (rs.empty()) throw ContractError("attention_pool: segment with no rows");
    auto& wts = weights[s];
    wts.resize(rs.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (rs[i] >= n) throw IndexError("attention_pool: row index out of range");
      const double* r = xv.data() + rs[i] * d;
      double sc = 0.0;
      for (std::size_t c = 0; c < d; ++c) sc += r[c] * qv[c];
      wts[i] = sc * inv_sqrt;
      mx = std::max(mx, wts[i]);
    }
    double z = 0.0;
    for (auto& v : wts) {
      v = std::exp(v - mx);
      z += v;
    }
    for (auto& v : wts) v /= z;
    double* o = out.data() + s * d;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      const double* r = xv.data() + rs[i] * d;
      for (std::size_t c = 0; c < d; ++c) o[c] += wts[i] * r[c];
    }
  }
  if (weights_out) *weights_out = weights;
  Tensor xin = x, qin = query;
  return g.emit(OpKind::segment_pool, {x, query}, {rows.size(), d}, std::move(out),
                [xin, qin, rows, weights = std::move(weights), d,
                 inv_sqrt](std::span<const double> gy) mutable {
                  const auto xv = xin.data();
                  const auto qv = qin.data();
                  std::span<double> gx, gq;
                  if (xin.requires_grad()) gx = xin.grad_buffer();
                  if (qin.requires_grad()) gq = qin.grad_buffer();
                  std::vector<double> dw;
                  for (std::size_t s = 0; s < rows.size(); ++s) {
                    const auto& rs = rows[s];
                    const auto& wts = weights[s];
                    const double* go = gy.data() + s * d;
                    dw.assign(rs.size(), 0.0);
                    double dot = 0.0;
                    for (std::size_t i = 0; i < rs.size(); ++i) {
                      const double* r = xv.data() + rs[i] * d;
                      double v = 0.0;
                      for (std::size_t c = 0; c < d; ++c) v += go[c] * r[c];
                      dw[i] = v;
                      dot += wts[i] * v;
                    }
                    for (std::size_t i = 0; i < rs.size(); ++i) {
                      const double ds = wts[i] * (dw[i] - dot) * inv_sqrt;
                      const double* r = xv.data() + rs[i] * d;
                      if (!gx.empty()) {
                        double* gr = gx.data() + rs[i] * d;
                        for (std::size_t c = 0; c < d; ++c) gr[c] += wts[i] * go[c] + ds * qv[c];
                      }
                      if (!gq.empty())
                        for (std::size_t c = 0; c < d; ++c) gq[c] += ds * r[c];
                    }
                  }
                });
}

// ---- testing ---------------------------------------------------------------

double grad_check(const ScalarFn& f, Tensor x, double eps) {
  if (!x.requires_grad()) throw ContractError("grad_check: input must require grad");
  x.zero_grad();
  std::vector<double> analytic;
  {
    Graph g(true);
    Tensor y = f(g, x);
    g.backward(y);
    analytic = x.grad();
  }
  auto xs = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double saved = xs[i];
    xs[i] = saved + eps;
    double fp = 0.0, fm = 0.0;
    {
      Graph g(false);
      fp = f(g, x).item();
    }
    xs[i] = saved - eps;
    {
      Graph g(false);
      fm = f(g, x).item();
    }
    xs[i] = saved;
    const double central = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  x.zero_grad();
  return worst;
}

}  // namespace survtx::ad
