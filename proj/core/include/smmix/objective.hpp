#pragma once

#include <vector>

#include "smmix/mixer.hpp"
#include "smmix/ops.hpp"
#include "smmix/vit.hpp"

namespace smmix {

// Per-term ablation switches (the six runnable combinations of the three
// loss components) plus the KL-direction toggle.
struct LossSwitches {
  bool cls = true;
  bool fine = true;
  bool con = true;
  // Default: KL(Y_M || mixture). Reversed: KL(mixture || Y_M).
  bool kl_reversed = false;
};

template <class S>
struct LossBreakdown {
  Tensor<S> l_cls, l_fine, l_con, l_total;
};

// Mean token embeddings inside the pasted region and over its complement.
template <class S>
struct RegionAggregates {
  Tensor<S> x_bar_A;  // [1 x d], mean of the h*w tokens under the mask
  Tensor<S> x_bar_B;  // [1 x d], mean of the N - h*w tokens outside it
  int inside = 0, outside = 0;
};

template <class S>
RegionAggregates<S> aggregate_region_tokens(Tape<S>& tape, const TokenSequence<S>& tokens,
                                            const MixPlan& plan) {
  const int rows = tokens.grid_rows, cols = tokens.grid_cols;
  if (plan.grid_rows != rows || plan.grid_cols != cols ||
      plan.mask.size() != static_cast<std::size_t>(rows) * cols)
    throw DimensionError("aggregate_region_tokens: plan grid does not match token grid");
  std::vector<int> inside, outside;
  for (int i = 0; i < rows * cols; ++i) (plan.mask[i] ? inside : outside).push_back(i);
  if (inside.empty() || outside.empty())
    throw ValidationError("aggregate_region_tokens: region or complement is empty");
  Tensor<S> both = ops::group_mean_rows(tape, tokens.tokens, {inside, outside});
  RegionAggregates<S> agg;
  agg.x_bar_A = ops::rows_slice(tape, both, 0, 1);
  agg.x_bar_B = ops::rows_slice(tape, both, 1, 1);
  agg.inside = static_cast<int>(inside.size());
  agg.outside = static_cast<int>(outside.size());
  return agg;
}

namespace detail {

// L_fine over a batch of aggregates: 1/2 (CE(F(xA), yA) + CE(F(xB), yB))
// with F the shared classification head.
template <class S>
Tensor<S> fine_grained_loss_batch(Tape<S>& tape, Tensor<S> x_bar_A, Tensor<S> x_bar_B,
                                  Tensor<S> head_w, Tensor<S> head_b, Tensor<S> y_A,
                                  Tensor<S> y_B) {
  Tensor<S> logits_A = ops::add_rowvec(tape, ops::matmul(tape, x_bar_A, head_w), head_b);
  Tensor<S> logits_B = ops::add_rowvec(tape, ops::matmul(tape, x_bar_B, head_w), head_b);
  Tensor<S> ce_A = ops::cross_entropy_soft(tape, logits_A, y_A);
  Tensor<S> ce_B = ops::cross_entropy_soft(tape, logits_B, y_B);
  return ops::scale(tape, ops::add(tape, ce_A, ce_B), S(0.5));
}

}  // namespace detail

template <class S>
Tensor<S> fine_grained_loss(Tape<S>& tape, const RegionAggregates<S>& agg, VitModel<S>& model,
                            Tensor<S> y_A, Tensor<S> y_B) {
  return detail::fine_grained_loss_batch(tape, agg.x_bar_A, agg.x_bar_B,
                                         model.param("head.weight"), model.param("head.bias"),
                                         y_A, y_B);
}

// L_con = KL(Y_M, lambda_M * Y_A + (1 - lambda_M) * Y_B), batch mean. The
// unmixed predictions must be detached: gradient flows only through Y_M.
template <class S>
Tensor<S> consistency_loss(Tape<S>& tape, Tensor<S> probs_mixed, const Tensor<S>& probs_A,
                           const Tensor<S>& probs_B, const std::vector<double>& lambda_m,
                           bool kl_reversed = false) {
  if (probs_A.requires_grad() || probs_B.requires_grad())
    throw ValidationError("consistency_loss: unmixed predictions must be detached");
  int B = probs_mixed.rows(), C = probs_mixed.cols();
  if (probs_A.shape() != probs_mixed.shape() || probs_B.shape() != probs_mixed.shape())
    throw DimensionError("consistency_loss: prediction shape mismatch");
  if (static_cast<int>(lambda_m.size()) != B)
    throw DimensionError("consistency_loss: need one lambda per row");
  Tensor<S> mixture({B, C});
  for (int r = 0; r < B; ++r) {
    S lam = static_cast<S>(lambda_m[r]);
    for (int c = 0; c < C; ++c)
      mixture.at(r, c) = lam * probs_A.at(r, c) + (S(1) - lam) * probs_B.at(r, c);
  }
  ops::check_distribution_rows(mixture, "consistency_loss mixture");
  return kl_reversed ? ops::kl_divergence(tape, mixture, probs_mixed)
                     : ops::kl_divergence(tape, probs_mixed, mixture);
}

// Overall objective L_total = L_cls + L_fine + L_con over one mixed batch.
//   batch          the mixed images/labels/plans
//   out            forward result of the mixed images (graph-connected)
//   orig_labels    unmixed per-image label rows [B x C] (y_A, y_B lookups)
//   unmixed_probs  detached prediction rows of the unmixed images [B x C];
//                  may be undefined when the consistency term is off
// Auxiliary terms apply only in SMMix mode: mixup/cutmix/none batches train
// with the classification term alone.
template <class S>
LossBreakdown<S> total_loss(Tape<S>& tape, VitModel<S>& model, const MixedBatch<S>& batch,
                            const ForwardResult<S>& out, const Tensor<S>& orig_labels,
                            const Tensor<S>& unmixed_probs, LossSwitches sw = {}) {
  const ModelConfig& cfg = model.cfg;
  const int B = out.batch, C = cfg.num_classes;
  LossBreakdown<S> lb;
  Tensor<S> zero = Tensor<S>::scalar(S(0));
  lb.l_cls = sw.cls ? ops::cross_entropy_soft(tape, out.logits, batch.labels) : zero;

  bool smmix = batch.mode == MixMode::Smmix;
  if (smmix && batch.plans.empty())
    throw ValidationError("total_loss: smmix batch without MixPlans");

  if (smmix && (sw.fine || sw.con)) {
    const int seq = cfg.seq_len(), cols = cfg.grid();
    const int off = cfg.use_class_token ? 1 : 0;
    if (sw.fine) {
      std::vector<std::vector<int>> inside(B), outside(B);
      Tensor<S> y_A({B, C}), y_B({B, C});
      for (const MixPlan& plan : batch.plans) {
        int b = plan.target_index;
        for (int i = 0; i < plan.grid_rows * cols; ++i)
          (plan.mask[i] ? inside[b] : outside[b]).push_back(b * seq + off + i);
        for (int c = 0; c < C; ++c) {
          y_A.at(b, c) = orig_labels.at(plan.source_index, c);
          y_B.at(b, c) = orig_labels.at(plan.target_index, c);
        }
      }
      std::vector<std::vector<int>> groups;
      groups.reserve(2 * B);
      for (int b = 0; b < B; ++b) {
        if (inside[b].empty() || outside[b].empty())
          throw ValidationError("total_loss: empty region in plan for image " + std::to_string(b));
        groups.push_back(inside[b]);
        groups.push_back(outside[b]);
      }
      Tensor<S> means = ops::group_mean_rows(tape, out.tokens, groups);
      std::vector<std::vector<int>> even(B), odd(B);
      for (int b = 0; b < B; ++b) {
        even[b] = {2 * b};
        odd[b] = {2 * b + 1};
      }
      Tensor<S> x_bar_A = ops::group_mean_rows(tape, means, even);
      Tensor<S> x_bar_B = ops::group_mean_rows(tape, means, odd);
      lb.l_fine = detail::fine_grained_loss_batch(tape, x_bar_A, x_bar_B,
                                                  model.param("head.weight"),
                                                  model.param("head.bias"), y_A, y_B);
    } else {
      lb.l_fine = zero;
    }
    if (sw.con) {
      if (!unmixed_probs.defined())
        throw ValidationError("total_loss: consistency term needs unmixed predictions");
      Tensor<S> probs_A({B, C}), probs_B({B, C});
      std::vector<double> lambdas(B);
      for (const MixPlan& plan : batch.plans) {
        int b = plan.target_index;
        lambdas[b] = plan.lambda_m;
        for (int c = 0; c < C; ++c) {
          probs_A.at(b, c) = unmixed_probs.at(plan.source_index, c);
          probs_B.at(b, c) = unmixed_probs.at(plan.target_index, c);
        }
      }
      lb.l_con = consistency_loss(tape, out.probs, probs_A, probs_B, lambdas, sw.kl_reversed);
    } else {
      lb.l_con = zero;
    }
  } else {
    lb.l_fine = zero;
    lb.l_con = zero;
  }
  lb.l_total = ops::add(tape, ops::add(tape, lb.l_cls, lb.l_fine), lb.l_con);
  return lb;
}

}  // namespace smmix
