#include "sculpt/attention.hpp"

#include <cmath>

namespace sculpt {

namespace {

void check_square(const Matrix& w, Eigen::Index c, const char* name) {
  if (w.rows() != c || w.cols() != c)
    throw ContractViolation(std::string("site weight ") + name + " has shape " + shape_string(w) +
                            ", expected [" + std::to_string(c) + ", " + std::to_string(c) + "]");
}

}  // namespace

AttentionTensors qkv_project(const Matrix& features, const SiteWeights& weights) {
  const Eigen::Index c = features.cols();
  check_square(weights.query, c, "query");
  check_square(weights.key, c, "key");
  check_square(weights.value, c, "value");
  require(weights.heads >= 1 && c % weights.heads == 0, "channel count must be divisible by heads");
  if (!all_finite(features)) throw NumericError("qkv_project: non-finite features");
  return AttentionTensors{features * weights.query, features * weights.key,
                          features * weights.value, weights.heads};
}

void softmax_rows_inplace(Matrix& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    if (!std::isfinite((row.array() * 0.0).sum())) throw NumericError("softmax: non-finite attention logits");
    row = (row.array() - row.maxCoeff()).exp().matrix();
    row /= row.sum();
  }
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  softmax_rows_inplace(out);
  return out;
}

Matrix multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  require(heads >= 1, "heads must be positive");
  require(q.cols() == k.cols() && k.cols() == v.cols(),
          "attention: query/key/value channel counts differ");
  require(k.rows() == v.rows(), "attention: key and value token counts differ");
  require(k.rows() >= 1, "attention: at least one key is required");
  require(q.cols() % heads == 0, "attention: channels not divisible by heads");

  const Eigen::Index d = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  // Reused across calls: the [N_q, N_kv] logits buffer dominates allocation.
  thread_local Matrix weights;
  weights.resize(q.rows(), k.rows());
  Matrix out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    weights.noalias() = q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose();
    weights *= scale;
    softmax_rows_inplace(weights);
    out.middleCols(h * d, d).noalias() = weights * v.middleCols(h * d, d);
  }
  return out;
}

Matrix self_attention(const AttentionTensors& t) {
  require(t.q.rows() == t.k.rows(), "self_attention: query and key token counts must match");
  return multi_head_attention(t.q, t.k, t.v, t.heads);
}

Matrix cross_3d_attention(const Matrix& q_content, const Matrix& k_style, const Matrix& v_style,
                          int heads) {
  if (q_content.cols() != k_style.cols() || k_style.cols() != v_style.cols())
    throw ContractViolation("cross_3d_attention: content has " + std::to_string(q_content.cols()) +
                            " channels, style has " + std::to_string(k_style.cols()));
  return multi_head_attention(q_content, k_style, v_style, heads);
}

}  // namespace sculpt
