#pragma once

#include "sculpt/core.hpp"

#include <span>

namespace sculpt {

enum class ConditionOrigin { content, style, edge, null };

struct ConditionEmbedding {
  Matrix tokens;  // [T, condition_dim]
  ConditionOrigin origin = ConditionOrigin::content;

  Eigen::Index dim() const { return tokens.cols(); }
  void validate() const {
    require(tokens.rows() >= 1, "condition embedding needs at least one token");
    require(all_finite(tokens), "condition embedding must be finite");
  }
};

// The unconditional branch's input: all-zero tokens of the given shape.
inline ConditionEmbedding null_condition(Eigen::Index tokens, Eigen::Index dim) {
  return {Matrix::Zero(tokens, dim), ConditionOrigin::null};
}

// Token-wise mean; used to fold several style images into one condition.
ConditionEmbedding mean_embedding(std::span<const ConditionEmbedding> embeddings);

}  // namespace sculpt
