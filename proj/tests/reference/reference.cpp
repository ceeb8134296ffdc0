#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ref {

using layerslim::HeadType;
using layerslim::Tensor;

Mat from_tensor(const Tensor& t) {
  Mat m(t.rank() == 2 ? t.dim(0) : 1, t.rank() == 2 ? t.dim(1) : t.numel());
  for (int64_t i = 0; i < t.numel(); ++i) m.v[static_cast<size_t>(i)] = t[i];
  return m;
}

Mat random_mat(int64_t rows, int64_t cols, uint64_t seed, double scale) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  Mat m(rows, cols);
  for (double& x : m.v) x = static_cast<float>(dist(gen));  // representable in float
  return m;
}

Tensor to_tensor(const Mat& m) {
  Tensor t({m.rows, m.cols});
  for (size_t i = 0; i < m.v.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<float>(m.v[i]);
  return t;
}

Tensor to_vector(const Mat& m) {
  Tensor t({static_cast<int64_t>(m.v.size())});
  for (size_t i = 0; i < m.v.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<float>(m.v[i]);
  return t;
}

double max_abs_diff(const Mat& a, const Tensor& b) {
  if (static_cast<int64_t>(a.v.size()) != b.numel()) throw std::invalid_argument("size mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) worst = std::max(worst, std::abs(a.v[i] - b[static_cast<int64_t>(i)]));
  return worst;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul shapes");
  Mat c(a.rows, b.cols);
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int64_t t = 0; t < a.cols; ++t) s += a.at(i, t) * b.at(t, j);
      c.at(i, j) = s;
    }
  return c;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (size_t i = 0; i < c.v.size(); ++i) c.v[i] += b.v[i];
  return c;
}

Mat add_bias(const Mat& x, const Mat& bias) {
  Mat c = x;
  for (int64_t i = 0; i < x.rows; ++i)
    for (int64_t j = 0; j < x.cols; ++j) c.at(i, j) += bias.v[static_cast<size_t>(j)];
  return c;
}

Mat softmax_rows(const Mat& x) {
  Mat out(x.rows, x.cols);
  for (int64_t i = 0; i < x.rows; ++i) {
    double peak = -INFINITY;
    for (int64_t j = 0; j < x.cols; ++j) peak = std::max(peak, x.at(i, j));
    double total = 0.0;
    for (int64_t j = 0; j < x.cols; ++j) total += std::exp(x.at(i, j) - peak);
    for (int64_t j = 0; j < x.cols; ++j) out.at(i, j) = std::exp(x.at(i, j) - peak) / total;
  }
  return out;
}

Mat softmax_cols(const Mat& x) { return transpose(softmax_rows(transpose(x))); }

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, double eps) {
  Mat out(x.rows, x.cols);
  for (int64_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (int64_t j = 0; j < x.cols; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (int64_t j = 0; j < x.cols; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < x.cols; ++j) {
      out.at(i, j) = (x.at(i, j) - mean) * inv * gain.v[static_cast<size_t>(j)] + bias.v[static_cast<size_t>(j)];
    }
  }
  return out;
}

double gelu(double x) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

Mat gelu(const Mat& x) {
  Mat out = x;
  for (double& v : out.v) v = gelu(v);
  return out;
}

Mat attention(const Mat& q, const Mat& k, const Mat& v, int64_t heads) {
  const int64_t seq = q.rows;
  const int64_t dh = q.cols / heads;
  Mat out(seq, q.cols);
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t i = 0; i < seq; ++i) {
      std::vector<double> s(static_cast<size_t>(i + 1));
      double peak = -INFINITY;
      for (int64_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (int64_t c = 0; c < dh; ++c) dot += q.at(i, h * dh + c) * k.at(j, h * dh + c);
        s[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
        peak = std::max(peak, s[static_cast<size_t>(j)]);
      }
      double total = 0.0;
      for (double& x : s) total += (x = std::exp(x - peak));
      for (int64_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (int64_t j = 0; j <= i; ++j) acc += s[static_cast<size_t>(j)] / total * v.at(j, h * dh + c);
        out.at(i, h * dh + c) = acc;
      }
    }
  }
  return out;
}

double cross_entropy(std::span<const double> logits, int64_t target) {
  double peak = -INFINITY;
  for (double z : logits) peak = std::max(peak, z);
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  return -(logits[static_cast<size_t>(target)] - peak - std::log(total));
}

double weighted_sum(const Mat& x, const Mat& weights) {
  double s = 0.0;
  for (size_t i = 0; i < x.v.size(); ++i) s += x.v[i] * weights.v[i];
  return s;
}

Weights weights_of(const layerslim::TransformerModel& model) {
  Weights w;
  w.config = model.config();
  for (const layerslim::Parameter* p : model.parameters()) w.p[p->name] = from_tensor(p->value);
  return w;
}

Mat hidden(const Weights& w, std::span<const int32_t> ids, std::vector<Mat>* layer_outputs) {
  const auto& c = w.config;
  const int64_t seq = static_cast<int64_t>(ids.size());
  const Mat& tok = w.p.at("token_embedding");
  const Mat& pos = w.p.at("position_embedding");
  Mat h(seq, c.d_model);
  for (int64_t i = 0; i < seq; ++i)
    for (int64_t j = 0; j < c.d_model; ++j) h.at(i, j) = tok.at(ids[static_cast<size_t>(i)], j) + pos.at(i, j);
  if (layer_outputs) layer_outputs->clear();
  for (int64_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto P = [&](const std::string& n) -> const Mat& { return w.p.at(pre + n); };
    const Mat a = layer_norm(h, P("ln1.gain"), P("ln1.bias"));
    const Mat q = add_bias(matmul(a, P("attn.wq")), P("attn.bq"));
    const Mat k = add_bias(matmul(a, P("attn.wk")), P("attn.bk"));
    const Mat v = add_bias(matmul(a, P("attn.wv")), P("attn.bv"));
    h = add(h, add_bias(matmul(attention(q, k, v, c.n_heads), P("attn.wo")), P("attn.bo")));
    const Mat m = layer_norm(h, P("ln2.gain"), P("ln2.bias"));
    h = add(h, add_bias(matmul(gelu(add_bias(matmul(m, P("mlp.w1")), P("mlp.b1"))), P("mlp.w2")), P("mlp.b2")));
    if (layer_outputs) layer_outputs->push_back(h);
  }
  return layer_norm(h, w.p.at("final_norm.gain"), w.p.at("final_norm.bias"));
}

Mat lm_logits_rows(const Weights& w, std::span<const int32_t> ids, std::span<const int64_t> positions) {
  const Mat hs = hidden(w, ids);
  Mat rows(static_cast<int64_t>(positions.size()), hs.cols);
  for (size_t r = 0; r < positions.size(); ++r)
    for (int64_t j = 0; j < hs.cols; ++j) rows.at(static_cast<int64_t>(r), j) = hs.at(positions[r], j);
  if (w.config.tie_lm_head) return matmul(rows, transpose(w.p.at("token_embedding")));
  return matmul(rows, w.p.at("lm_head"));
}

std::vector<double> cls_logits(const Weights& w, std::span<const int32_t> ids) {
  const Mat hs = hidden(w, ids);
  const Mat& W = w.p.at("cls_head.weight");
  const Mat& b = w.p.at("cls_head.bias");
  std::vector<double> out(static_cast<size_t>(W.cols));
  for (int64_t c = 0; c < W.cols; ++c) {
    double s = b.v[static_cast<size_t>(c)];
    for (int64_t j = 0; j < hs.cols; ++j) s += hs.at(hs.rows - 1, j) * W.at(j, c);
    out[static_cast<size_t>(c)] = s;
  }
  return out;
}

double prompt_lm_loss(const Weights& w, std::span<const int32_t> prompt, std::span<const int32_t> label) {
  std::vector<int32_t> ids(prompt.begin(), prompt.end());
  ids.insert(ids.end(), label.begin(), label.end() - 1);
  std::vector<int64_t> positions;
  for (size_t j = 0; j < label.size(); ++j) positions.push_back(static_cast<int64_t>(prompt.size() - 1 + j));
  const Mat logits = lm_logits_rows(w, ids, positions);
  double loss = 0.0;
  for (size_t j = 0; j < label.size(); ++j) {
    loss += cross_entropy(std::span<const double>(logits.v).subspan(j * static_cast<size_t>(logits.cols),
                                                                   static_cast<size_t>(logits.cols)),
                          label[j]);
  }
  return loss;
}

double cls_loss(const Weights& w, std::span<const int32_t> ids, int64_t label) {
  const std::vector<double> logits = cls_logits(w, ids);
  return cross_entropy(logits, label);
}

double central_difference(double& x, double h, const std::function<double()>& f) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
  return std::abs(analytic - numeric) / denom;
}

GradReport check_model_gradients(Weights& w, const std::map<std::string, Tensor>& analytic,
                                 const std::function<double(const Weights&)>& loss, double h) {
  GradReport report;
  for (auto& [name, mat] : w.p) {
    const Tensor& grad = analytic.at(name);
    for (size_t i = 0; i < mat.v.size(); ++i) {
      const double numeric = central_difference(mat.v[i], h, [&] { return loss(w); });
      const double err = relative_error(grad[static_cast<int64_t>(i)], numeric);
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

int64_t count_scalars(const layerslim::ModelConfig& c) {
  const int64_t d = c.d_model;
  int64_t layer = 0;
  layer += 2 * d;                  // ln1
  layer += 4 * (d * d + d);        // q, k, v, o
  layer += 2 * d;                  // ln2
  layer += d * c.d_ff + c.d_ff;    // w1, b1
  layer += c.d_ff * d + d;         // w2, b2
  int64_t total = c.vocab_size * d + c.max_seq_len * d + c.n_layers * layer + 2 * d;
  if (c.head_type == HeadType::LanguageModeling) {
    if (!c.tie_lm_head) total += d * c.vocab_size;
  } else {
    total += d * c.num_classes + c.num_classes;
  }
  return total;
}

}  // namespace ref
