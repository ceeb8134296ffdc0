#include "layerslim/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>

#include "layerslim/errors.hpp"

namespace layerslim {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.ptr(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.ptr(), t.rows(), t.cols()); }
using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMutMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_to_string(t.shape()));
  }
}

void accumulate(Tensor* sink, const Tensor& delta) {
  if (sink == nullptr) return;
  float* dst = sink->ptr();
  const float* src = delta.ptr();
  for (int64_t i = 0; i < delta.numel(); ++i) dst[i] += src[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// ---------------------------------------------------------------------------
// Parameter / Var / Graph

Parameter::Parameter(std::string name_in, Tensor value_in)
    : name(std::move(name_in)), value(std::move(value_in)), grad(value.shape(), 0.0f) {}

const Tensor& Var::value() const {
  if (graph_ == nullptr) throw GraphStateError("use of an empty Var");
  return graph_->value(*this);
}

Graph::Node& Graph::node(Var v) {
  if (v.graph_ != this || v.index_ >= nodes_.size()) throw GraphStateError("Var does not belong to this graph");
  return nodes_[v.index_];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph_ != this || v.index_ >= nodes_.size()) throw GraphStateError("Var does not belong to this graph");
  return nodes_[v.index_];
}

const Tensor& Graph::value(Var v) const { return *node(v).value; }

bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }

Var Graph::constant(Tensor value) {
  if (consumed_) throw GraphStateError("graph already consumed by backward()");
  Node& n = nodes_.emplace_back();
  n.owned_value = std::move(value);
  n.value = &n.owned_value;
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& parameter) {
  if (consumed_) throw GraphStateError("graph already consumed by backward()");
  if (parameter.grad.shape() != parameter.value.shape()) {
    throw ShapeError("parameter " + parameter.name + " has mismatched value/grad shapes");
  }
  Node& n = nodes_.emplace_back();
  n.value = &parameter.value;
  n.parameter = &parameter;
  if (recording_) {
    n.needs_grad = true;
    n.grad = &parameter.grad;
  }
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(const Parameter& parameter) {
  if (consumed_) throw GraphStateError("graph already consumed by backward()");
  Node& n = nodes_.emplace_back();
  n.value = &parameter.value;
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (consumed_) throw GraphStateError("graph already consumed by backward()");
  bool needs = false;
  if (recording_) {
    for (const Var& in : inputs) needs = needs || node(in).needs_grad;
  }
  Node& n = nodes_.emplace_back();
  n.owned_value = std::move(value);
  n.value = &n.owned_value;
  n.needs_grad = needs;
  if (needs) n.backward = std::move(backward);
  return Var(this, nodes_.size() - 1);
}

Tensor* Graph::grad_sink(Var v) {
  Node& n = node(v);
  if (!n.needs_grad) return nullptr;
  if (n.grad == nullptr) {
    n.owned_grad = Tensor(n.value->shape(), 0.0f);
    n.grad = &n.owned_grad;
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!recording_) throw GraphStateError("backward() on a graph recorded without gradients");
  if (consumed_) throw GraphStateError("backward() called twice on the same graph");
  Node& root = node(loss);
  if (root.value->numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_to_string(root.value->shape()));
  }
  consumed_ = true;
  backward_order_.clear();
  if (!root.needs_grad) return;
  grad_sink(loss)->fill(1.0f);
  for (size_t i = loss.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad == nullptr) continue;
    backward_order_.push_back(i);
    n.backward(*n.grad);
    // Saved state is released as soon as the rule has run.
    n.backward = nullptr;
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  Graph& g = *a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()));
  }
  Tensor out({av.dim(0), bv.dim(1)});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const Var inputs[] = {a, b};
  return g.record(std::move(out), inputs, [&g, a, b](const Tensor& dc) {
    if (Tensor* da = g.grad_sink(a)) as_matrix(*da).noalias() += as_matrix(dc) * as_matrix(b.value()).transpose();
    if (Tensor* db = g.grad_sink(b)) as_matrix(*db).noalias() += as_matrix(a.value()).transpose() * as_matrix(dc);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = *a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul_nt");
  require_rank2(bv, "matmul_nt");
  if (av.dim(1) != bv.dim(1)) {
    throw ShapeError("matmul_nt shape mismatch: " + shape_to_string(av.shape()) + " x " +
                     shape_to_string(bv.shape()) + "^T");
  }
  Tensor out({av.dim(0), bv.dim(0)});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  const Var inputs[] = {a, b};
  return g.record(std::move(out), inputs, [&g, a, b](const Tensor& dc) {
    if (Tensor* da = g.grad_sink(a)) as_matrix(*da).noalias() += as_matrix(dc) * as_matrix(b.value());
    if (Tensor* db = g.grad_sink(b)) as_matrix(*db).noalias() += as_matrix(dc).transpose() * as_matrix(a.value());
  });
}

Var add(Var a, Var b) {
  Graph& g = *a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError("add shape mismatch: " + shape_to_string(av.shape()) + " + " + shape_to_string(bv.shape()));
  }
  Tensor out = av;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const Var inputs[] = {a, b};
  return g.record(std::move(out), inputs, [&g, a, b](const Tensor& dc) {
    accumulate(g.grad_sink(a), dc);
    accumulate(g.grad_sink(b), dc);
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || bv.numel() != xv.cols()) {
    throw ShapeError("add_bias shape mismatch: " + shape_to_string(xv.shape()) + " + " +
                     shape_to_string(bv.shape()));
  }
  Tensor out = xv;
  const int64_t rows = xv.rows();
  const int64_t cols = xv.cols();
  for (int64_t r = 0; r < rows; ++r) {
    float* row = out.ptr() + r * cols;
    for (int64_t c = 0; c < cols; ++c) row[c] += bv[c];
  }
  const Var inputs[] = {x, bias};
  return g.record(std::move(out), inputs, [&g, x, bias, rows, cols](const Tensor& dc) {
    accumulate(g.grad_sink(x), dc);
    if (Tensor* db = g.grad_sink(bias)) {
      for (int64_t r = 0; r < rows; ++r) {
        const float* row = dc.ptr() + r * cols;
        for (int64_t c = 0; c < cols; ++c) (*db)[c] += row[c];
      }
    }
  });
}

Var scale(Var x, float factor) {
  Graph& g = *x.graph();
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= factor;
  const Var inputs[] = {x};
  return g.record(std::move(out), inputs, [&g, x, factor](const Tensor& dc) {
    if (Tensor* dx = g.grad_sink(x)) {
      for (int64_t i = 0; i < dc.numel(); ++i) (*dx)[i] += factor * dc[i];
    }
  });
}

Var sum(Var x) {
  Graph& g = *x.graph();
  double total = 0.0;
  for (float v : x.value().data()) total += v;
  const Var inputs[] = {x};
  return g.record(Tensor::scalar(static_cast<float>(total)), inputs, [&g, x](const Tensor& dc) {
    if (Tensor* dx = g.grad_sink(x)) {
      const float d = dc[0];
      for (int64_t i = 0; i < dx->numel(); ++i) (*dx)[i] += d;
    }
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph();
  if (shape_numel(shape) != x.value().numel()) {
    throw ShapeError("cannot reshape " + shape_to_string(x.value().shape()) + " to " + shape_to_string(shape));
  }
  const Var inputs[] = {x};
  return g.record(x.value().reshaped(std::move(shape)), inputs,
                  [&g, x](const Tensor& dc) { accumulate(g.grad_sink(x), dc); });
}

float gelu_value(float x) {
  constexpr auto c = static_cast<float>(kGeluC);
  constexpr auto a = static_cast<float>(kGeluA);
  return 0.5f * x * (1.0f + std::tanh(c * (x + a * x * x * x)));
}

Var gelu(Var x) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) out[i] = gelu_value(xv[i]);
  const Var inputs[] = {x};
  return g.record(std::move(out), inputs, [&g, x](const Tensor& dc) {
    Tensor* dx = g.grad_sink(x);
    if (dx == nullptr) return;
    const Tensor& xv = x.value();
    constexpr auto c = static_cast<float>(kGeluC);
    constexpr auto a = static_cast<float>(kGeluA);
    for (int64_t i = 0; i < xv.numel(); ++i) {
      const float v = xv[i];
      const float t = std::tanh(c * (v + a * v * v * v));
      const float dt = c * (1.0f + 3.0f * a * v * v);
      (*dx)[i] += (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * dt) * dc[i];
    }
  });
}

namespace {

struct AxisLayout {
  int64_t groups;
  int64_t length;
  int64_t stride;
  int64_t group_step;  // offset of group g's first element = g * group_step
};

AxisLayout axis_layout(const Tensor& t, int64_t axis) {
  if (t.rank() == 1 && axis == 0) return {1, t.numel(), 1, 0};
  if (t.rank() == 2 && axis == 1) return {t.dim(0), t.dim(1), 1, t.dim(1)};
  if (t.rank() == 2 && axis == 0) return {t.dim(1), t.dim(0), t.dim(1), 1};
  throw IndexError("softmax axis " + std::to_string(axis) + " invalid for " + shape_to_string(t.shape()));
}

}  // namespace

Var softmax(Var x, int64_t axis) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  const AxisLayout layout = axis_layout(xv, axis);
  Tensor out(xv.shape());
  for (int64_t grp = 0; grp < layout.groups; ++grp) {
    const int64_t base = grp * layout.group_step;
    float peak = xv[base];
    for (int64_t i = 1; i < layout.length; ++i) peak = std::max(peak, xv[base + i * layout.stride]);
    double total = 0.0;
    for (int64_t i = 0; i < layout.length; ++i) {
      const int64_t at = base + i * layout.stride;
      out[at] = std::exp(xv[at] - peak);
      total += out[at];
    }
    const double inv = 1.0 / total;
    for (int64_t i = 0; i < layout.length; ++i) {
      const int64_t at = base + i * layout.stride;
      out[at] = static_cast<float>(out[at] * inv);
    }
  }
  const Var inputs[] = {x};
  Tensor saved = g.recording() ? out : Tensor();
  return g.record(std::move(out), inputs, [&g, x, layout, y = std::move(saved)](const Tensor& dy) {
    Tensor* dx = g.grad_sink(x);
    if (dx == nullptr) return;
    for (int64_t grp = 0; grp < layout.groups; ++grp) {
      const int64_t base = grp * layout.group_step;
      double dot = 0.0;
      for (int64_t i = 0; i < layout.length; ++i) {
        const int64_t at = base + i * layout.stride;
        dot += static_cast<double>(dy[at]) * y[at];
      }
      for (int64_t i = 0; i < layout.length; ++i) {
        const int64_t at = base + i * layout.stride;
        (*dx)[at] += static_cast<float>(y[at] * (dy[at] - dot));
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, float eps) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  const int64_t d = xv.cols();
  if (gain.value().rank() != 1 || gain.value().numel() != d || bias.value().shape() != gain.value().shape()) {
    throw ShapeError("layer_norm: input " + shape_to_string(xv.shape()) + " with gain " +
                     shape_to_string(gain.value().shape()) + " and bias " + shape_to_string(bias.value().shape()));
  }
  const int64_t rows = xv.rows();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  Tensor normalized(xv.shape());
  std::vector<float> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = xv.ptr() + r * d;
    double mean = 0.0;
    for (int64_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      const double dev = row[c] - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[static_cast<size_t>(r)] = static_cast<float>(rstd);
    float* xhat = normalized.ptr() + r * d;
    float* y = out.ptr() + r * d;
    for (int64_t c = 0; c < d; ++c) {
      xhat[c] = static_cast<float>((row[c] - mean) * rstd);
      y[c] = xhat[c] * gv[c] + bv[c];
    }
  }
  const Var inputs[] = {x, gain, bias};
  return g.record(std::move(out), inputs,
                  [&g, x, gain, bias, d, rows, normalized = std::move(normalized),
                   inv_std = std::move(inv_std)](const Tensor& dy) {
                    Tensor* dx = g.grad_sink(x);
                    Tensor* dg = g.grad_sink(gain);
                    Tensor* db = g.grad_sink(bias);
                    const Tensor& gv = gain.value();
                    for (int64_t r = 0; r < rows; ++r) {
                      const float* xhat = normalized.ptr() + r * d;
                      const float* dyr = dy.ptr() + r * d;
                      if (dg) for (int64_t c = 0; c < d; ++c) (*dg)[c] += dyr[c] * xhat[c];
                      if (db) for (int64_t c = 0; c < d; ++c) (*db)[c] += dyr[c];
                      if (!dx) continue;
                      double mean_dxhat = 0.0;
                      double mean_dxhat_xhat = 0.0;
                      for (int64_t c = 0; c < d; ++c) {
                        const double dxhat = static_cast<double>(dyr[c]) * gv[c];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat[c];
                      }
                      mean_dxhat /= static_cast<double>(d);
                      mean_dxhat_xhat /= static_cast<double>(d);
                      const double rstd = inv_std[static_cast<size_t>(r)];
                      float* dxr = dx->ptr() + r * d;
                      for (int64_t c = 0; c < d; ++c) {
                        const double dxhat = static_cast<double>(dyr[c]) * gv[c];
                        dxr[c] += static_cast<float>(rstd * (dxhat - mean_dxhat - xhat[c] * mean_dxhat_xhat));
                      }
                    }
                  });
}

Var embedding(Var table, std::span<const int32_t> ids) {
  Graph& g = *table.graph();
  const Tensor& tv = table.value();
  require_rank2(tv, "embedding");
  if (ids.empty()) throw ShapeError("embedding lookup with no ids");
  const int64_t d = tv.dim(1);
  Tensor out({static_cast<int64_t>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.dim(0)) {
      throw IndexError("embedding id " + std::to_string(ids[i]) + " out of range for table " +
                       shape_to_string(tv.shape()));
    }
    std::copy_n(tv.ptr() + ids[i] * d, d, out.ptr() + static_cast<int64_t>(i) * d);
  }
  std::vector<int32_t> saved(ids.begin(), ids.end());
  const Var inputs[] = {table};
  return g.record(std::move(out), inputs, [&g, table, d, saved = std::move(saved)](const Tensor& dy) {
    Tensor* dt = g.grad_sink(table);
    if (dt == nullptr) return;
    for (size_t i = 0; i < saved.size(); ++i) {
      float* dst = dt->ptr() + saved[i] * d;
      const float* src = dy.ptr() + static_cast<int64_t>(i) * d;
      for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var select_rows(Var x, std::span<const int64_t> rows) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  require_rank2(xv, "select_rows");
  if (rows.empty()) throw ShapeError("select_rows with no rows");
  const int64_t d = xv.dim(1);
  Tensor out({static_cast<int64_t>(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.dim(0)) {
      throw IndexError("row " + std::to_string(rows[i]) + " out of range for " + shape_to_string(xv.shape()));
    }
    std::copy_n(xv.ptr() + rows[i] * d, d, out.ptr() + static_cast<int64_t>(i) * d);
  }
  std::vector<int64_t> saved(rows.begin(), rows.end());
  const Var inputs[] = {x};
  return g.record(std::move(out), inputs, [&g, x, d, saved = std::move(saved)](const Tensor& dy) {
    Tensor* dx = g.grad_sink(x);
    if (dx == nullptr) return;
    for (size_t i = 0; i < saved.size(); ++i) {
      float* dst = dx->ptr() + saved[i] * d;
      const float* src = dy.ptr() + static_cast<int64_t>(i) * d;
      for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var causal_self_attention(Var q, Var k, Var v, int64_t n_heads) {
  Graph& g = *q.graph();
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_rank2(qv, "attention");
  if (kv.shape() != qv.shape() || vv.shape() != qv.shape()) {
    throw ShapeError("attention q/k/v shapes differ: " + shape_to_string(qv.shape()) + ", " +
                     shape_to_string(kv.shape()) + ", " + shape_to_string(vv.shape()));
  }
  const int64_t seq = qv.dim(0);
  const int64_t width = qv.dim(1);
  if (n_heads <= 0 || width % n_heads != 0) {
    throw ShapeError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(n_heads) +
                     " heads");
  }
  const int64_t head_dim = width / n_heads;
  const float inv_sqrt = static_cast<float>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  auto head = [seq, width, head_dim](const Tensor& t, int64_t h) {
    return StridedMap(t.ptr() + h * head_dim, seq, head_dim, Eigen::OuterStride<>(width));
  };
  auto head_mut = [seq, width, head_dim](Tensor& t, int64_t h) {
    return StridedMutMap(t.ptr() + h * head_dim, seq, head_dim, Eigen::OuterStride<>(width));
  };

  // probs[h] is a seq x seq row-major block; the upper triangle stays zero.
  std::vector<float> probs(static_cast<size_t>(n_heads * seq * seq), 0.0f);
  Tensor out({seq, width});
  for (int64_t h = 0; h < n_heads; ++h) {
    MutMap p(probs.data() + h * seq * seq, seq, seq);
    p.noalias() = (head(qv, h) * head(kv, h).transpose()) * inv_sqrt;
    for (int64_t i = 0; i < seq; ++i) {
      float* row = p.data() + i * seq;
      const float peak = *std::max_element(row, row + i + 1);
      double total = 0.0;
      for (int64_t j = 0; j <= i; ++j) {
        row[j] = std::exp(row[j] - peak);
        total += row[j];
      }
      const float inv = static_cast<float>(1.0 / total);
      for (int64_t j = 0; j <= i; ++j) row[j] *= inv;
      std::fill(row + i + 1, row + seq, 0.0f);
    }
    head_mut(out, h).noalias() = p * head(vv, h);
  }
  const Var inputs[] = {q, k, v};
  if (!g.recording()) return g.record(std::move(out), inputs, nullptr);
  return g.record(std::move(out), inputs,
                  [&g, q, k, v, n_heads, seq, inv_sqrt, head, head_mut, probs = std::move(probs)](const Tensor& dout) {
                    Tensor* dq = g.grad_sink(q);
                    Tensor* dk = g.grad_sink(k);
                    Tensor* dv = g.grad_sink(v);
                    RowMat dp(seq, seq);
                    for (int64_t h = 0; h < n_heads; ++h) {
                      ConstMap p(probs.data() + h * seq * seq, seq, seq);
                      const auto doh = head(dout, h);
                      if (dv) head_mut(*dv, h).noalias() += p.transpose() * doh;
                      if (!dq && !dk) continue;
                      dp.noalias() = doh * head(v.value(), h).transpose();
                      // d score = p * (dp - sum_j p dp), scaled; masked entries have p == 0.
                      const Eigen::VectorXf weighted = p.cwiseProduct(dp).rowwise().sum();
                      dp = (p.array() * (dp.colwise() - weighted).array() * inv_sqrt).matrix();
                      if (dq) head_mut(*dq, h).noalias() += dp * head(k.value(), h);
                      if (dk) head_mut(*dk, h).noalias() += dp.transpose() * head(q.value(), h);
                    }
                  });
}

std::vector<double> log_softmax(std::span<const float> logits) {
  double peak = -INFINITY;
  for (float z : logits) peak = std::max(peak, static_cast<double>(z));
  double total = 0.0;
  for (float z : logits) total += std::exp(static_cast<double>(z) - peak);
  const double lse = peak + std::log(total);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

Var cross_entropy(Var logits, int64_t target) {
  Graph& g = *logits.graph();
  const Tensor& lv = logits.value();
  if (lv.rows() != 1) {
    throw ShapeError("cross_entropy expects a single row of logits, got " + shape_to_string(lv.shape()));
  }
  const int64_t n = lv.numel();
  if (target < 0 || target >= n) {
    throw IndexError("cross_entropy target " + std::to_string(target) + " out of range [0, " + std::to_string(n) +
                     ")");
  }
  const std::vector<double> logp = log_softmax(lv.data());
  const double loss = -logp[static_cast<size_t>(target)];
  const Var inputs[] = {logits};
  return g.record(Tensor::scalar(static_cast<float>(loss)), inputs, [&g, logits, target, logp](const Tensor& dc) {
    Tensor* dl = g.grad_sink(logits);
    if (dl == nullptr) return;
    const double d = dc[0];
    for (size_t i = 0; i < logp.size(); ++i) {
      const double p = std::exp(logp[i]) - (static_cast<int64_t>(i) == target ? 1.0 : 0.0);
      (*dl)[static_cast<int64_t>(i)] += static_cast<float>(d * p);
    }
  });
}

Var cross_entropy_rows(Var logits, std::span<const int64_t> targets) {
  Graph& g = *logits.graph();
  const Tensor& lv = logits.value();
  require_rank2(lv, "cross_entropy_rows");
  const int64_t rows = lv.dim(0);
  const int64_t n = lv.dim(1);
  if (static_cast<int64_t>(targets.size()) != rows) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_to_string(lv.shape()));
  }
  std::vector<double> logp(static_cast<size_t>(rows * n));
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= n) {
      throw IndexError("cross_entropy target " + std::to_string(targets[r]) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
    const auto row = log_softmax(lv.data().subspan(static_cast<size_t>(r * n), static_cast<size_t>(n)));
    std::copy(row.begin(), row.end(), logp.begin() + r * n);
    loss -= row[static_cast<size_t>(targets[r])];
  }
  std::vector<int64_t> saved(targets.begin(), targets.end());
  const Var inputs[] = {logits};
  return g.record(Tensor::scalar(static_cast<float>(loss)), inputs,
                  [&g, logits, n, saved = std::move(saved), logp = std::move(logp)](const Tensor& dc) {
                    Tensor* dl = g.grad_sink(logits);
                    if (dl == nullptr) return;
                    const double d = dc[0];
                    for (size_t r = 0; r < saved.size(); ++r) {
                      for (int64_t c = 0; c < n; ++c) {
                        const size_t at = r * static_cast<size_t>(n) + static_cast<size_t>(c);
                        const double p = std::exp(logp[at]) - (c == saved[r] ? 1.0 : 0.0);
                        (*dl)[static_cast<int64_t>(at)] += static_cast<float>(d * p);
                      }
                    }
                  });
}

}  // namespace layerslim
