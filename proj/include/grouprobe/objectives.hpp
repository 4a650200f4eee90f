#pragma once

#include <optional>

#include "grouprobe/linmodel.hpp"
#include "grouprobe/synthgen.hpp"

namespace grouprobe {

// Loss value together with its gradient with respect to every parameter
// block. Blocks a loss does not touch hold exact zeros.
struct LossEval {
  double value = 0.0;
  Vec grad_a;
  Vec grad_w_end;
  Mat grad_W_aux;

  static LossEval zeros(Index d);
  bool all_finite() const;
  LossEval& operator+=(const LossEval& other);
  LossEval& operator*=(double s);
};

LossEval operator+(LossEval lhs, const LossEval& rhs);
LossEval operator*(double s, LossEval rhs);

struct LossWeights {
  double alpha_aux = 0.0;
  double alpha_reg = 0.0;
  double lambda_l2 = 1.0;

  void validate() const;
};

// Numerically stable log(1 + e^z).
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Per-example BCE terms softplus(z) - t z with t = (y + 1) / 2.
Vec end_losses_per_example(const ModelParams& params, const LabeledDataset& batch);

// -(1/B) sum w_i [t log s(z) + (1-t) log(1-s(z))] + (lambda/2)||w_end||^2.
// example_weights (length B) default to 1.
LossEval end_loss(const ModelParams& params, const LabeledDataset& batch, double lambda_l2,
                  const Vec* example_weights = nullptr);

// (1/2B) sum ||x_i - W_aux^T (a .* x~_i)||^2.
LossEval recon_loss(const ModelParams& params, const AuxDataset& batch);

// Batch mean of (||h_end||_1 + ||h_aux||_1) / d with h_end = h_aux = a .* x,
// i.e. 2 mean ||a .* x||_1 / d. Subgradient 0 where a_j x_ij == 0.
LossEval activation_l1(const ModelParams& params, const LabeledDataset& batch);

// end_loss + alpha_aux * recon_loss + alpha_reg * activation_l1.
LossEval multitask_loss(const ModelParams& params, const LabeledDataset& end_batch,
                        const AuxDataset& aux_batch, const LossWeights& weights,
                        const Vec* example_weights = nullptr);

}  // namespace grouprobe
