#pragma once

// Attention kernels: QKV projection, multi-head self-attention and the
// cross-branch ("cross-3D") attention in which queries come from one
// branch's 3D latent and keys/values from another's.

#include "sculpt/core.hpp"

namespace sculpt {

// Projection parameters of one self-attention site. All four matrices are
// [C, C]; features are multiplied from the left (f * W).
struct SiteWeights {
  Matrix query;
  Matrix key;
  Matrix value;
  Matrix output;
  int heads = 1;

  Eigen::Index channels() const { return query.rows(); }
};

struct AttentionTensors {
  Matrix q;  // [N_q, C]
  Matrix k;  // [N_kv, C]
  Matrix v;  // [N_kv, C]
  int heads = 1;

  Eigen::Index head_dim() const { return q.cols() / heads; }
};

AttentionTensors qkv_project(const Matrix& features, const SiteWeights& weights);

// Row-wise softmax, shifted by the row max before exponentiation.
Matrix softmax_rows(const Matrix& logits);
void softmax_rows_inplace(Matrix& logits);

// softmax(Q K^T / sqrt(d_k)) V evaluated per head on contiguous channel
// slices of width C / heads, then concatenated back to C channels.
Matrix multi_head_attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads);

// Requires N_q == N_kv.
Matrix self_attention(const AttentionTensors& t);

// Queries from the content branch, keys/values from the style branch; the
// two token counts may differ. Output has one row per content token.
Matrix cross_3d_attention(const Matrix& q_content, const Matrix& k_style, const Matrix& v_style,
                          int heads);

}  // namespace sculpt
