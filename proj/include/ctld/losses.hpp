#pragma once

#include "ctld/ops.hpp"

namespace ctld {

/// Mean over the batch of the squared Frobenius distance between
/// predicted and target heatmap stacks (N x h x w x K).
template <typename S>
NodeId loss_regression(Graph<S>& g, NodeId pred, NodeId target) {
  detail::require_rank(g.value(pred), 4, "loss_regression prediction");
  return mean_sample_sqdist(g, target, pred);
}

/// Squared distance between temperature-softened class distributions,
/// averaged over the batch. The source side is inference-only: no
/// gradient flows into source_logits.
template <typename S>
NodeId loss_cd(Graph<S>& g, NodeId source_logits, NodeId target_logits, S mu) {
  NodeId ps = softmax_t(g, stop_gradient(g, source_logits), mu);
  NodeId pt = softmax_t(g, target_logits, mu);
  return mean_sample_sqdist(g, ps, pt);
}

/// Cosine misalignment between source and target embeddings. Mean over
/// the batch by default; Reduction::Sum keeps the literal per-batch sum.
/// No gradient flows into source_embeddings.
template <typename S>
NodeId loss_ed(Graph<S>& g, NodeId source_embeddings, NodeId target_embeddings,
               Reduction red = Reduction::Mean, int* zero_norm_count = nullptr) {
  return cosine_alignment(g, stop_gradient(g, source_embeddings), target_embeddings, red,
                          zero_norm_count);
}

/// L = L_R + lambda * L_D.
template <typename S>
NodeId loss_total(Graph<S>& g, NodeId l_r, NodeId l_d, S lambda) {
  if (lambda < S(0)) throw ConfigError("loss_total: lambda must be non-negative");
  return add(g, l_r, scale(g, l_d, lambda));
}

}  // namespace ctld
