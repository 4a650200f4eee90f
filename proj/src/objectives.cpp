#include "grouprobe/objectives.hpp"

namespace grouprobe {

LossEval LossEval::zeros(Index d) {
  LossEval e;
  e.grad_a = Vec::Zero(d);
  e.grad_w_end = Vec::Zero(d);
  e.grad_W_aux = Mat::Zero(d, d);
  return e;
}

bool LossEval::all_finite() const {
  return std::isfinite(value) && grad_a.allFinite() && grad_w_end.allFinite() &&
         grad_W_aux.allFinite();
}

LossEval& LossEval::operator+=(const LossEval& other) {
  value += other.value;
  grad_a += other.grad_a;
  grad_w_end += other.grad_w_end;
  grad_W_aux += other.grad_W_aux;
  return *this;
}

LossEval& LossEval::operator*=(double s) {
  value *= s;
  grad_a *= s;
  grad_w_end *= s;
  grad_W_aux *= s;
  return *this;
}

LossEval operator+(LossEval lhs, const LossEval& rhs) { return lhs += rhs; }
LossEval operator*(double s, LossEval rhs) { return rhs *= s; }

void LossWeights::validate() const {
  if (!(alpha_aux >= 0) || !(alpha_reg >= 0) || !(lambda_l2 >= 0))
    throw InvalidInput("loss weights must be non-negative");
}

namespace {

void check_end_batch(const ModelParams& params, const LabeledDataset& batch) {
  if (batch.empty()) throw InvalidInput("empty end-task batch");
  if (batch.dim() != params.dim()) throw ShapeError("end batch width does not match model");
  params.check_shapes();
}

}  // namespace

Vec end_losses_per_example(const ModelParams& params, const LabeledDataset& batch) {
  check_end_batch(params, batch);
  const Vec z = predict_end_batch(params, batch.features);
  Vec out(z.size());
  for (Index i = 0; i < z.size(); ++i) {
    const double t = 0.5 * (batch.labels[i] + 1);
    out[i] = softplus(z[i]) - t * z[i];
  }
  return out;
}

LossEval end_loss(const ModelParams& params, const LabeledDataset& batch, double lambda_l2,
                  const Vec* example_weights) {
  check_end_batch(params, batch);
  const Index B = batch.size();
  if (example_weights && example_weights->size() != B)
    throw ShapeError("example weights length does not match batch");
  if (example_weights && !(example_weights->array() >= 0).all())
    throw InvalidInput("example weights must be non-negative");
  const Vec z = predict_end_batch(params, batch.features);
  Vec dz(B);
  double total = 0.0;
  for (Index i = 0; i < B; ++i) {
    const double t = 0.5 * (batch.labels[i] + 1);
    const double w = example_weights ? (*example_weights)[i] : 1.0;
    total += w * (softplus(z[i]) - t * z[i]);
    dz[i] = w * (sigmoid(z[i]) - t);
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  // d/d(fused) of the data term.
  const Vec g_fused = batch.features.transpose() * dz * inv_b;

  LossEval e;
  e.value = total * inv_b + 0.5 * lambda_l2 * params.w_end.squaredNorm();
  e.grad_a = g_fused.cwiseProduct(params.w_end);
  e.grad_w_end = g_fused.cwiseProduct(params.a) + lambda_l2 * params.w_end;
  e.grad_W_aux = Mat::Zero(params.dim(), params.dim());
  return e;
}

LossEval recon_loss(const ModelParams& params, const AuxDataset& batch) {
  if (batch.empty()) throw InvalidInput("empty auxiliary batch");
  if (batch.dim() != params.dim()) throw ShapeError("aux batch width does not match model");
  params.check_shapes();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  // Row form: prediction_i^T = (a .* x~_i)^T W_aux.
  const Mat F = batch.noised * params.a.asDiagonal();
  const Mat R = F * params.W_aux - batch.targets;

  LossEval e;
  e.value = 0.5 * R.squaredNorm() * inv_b;
  e.grad_W_aux = F.transpose() * R * inv_b;
  e.grad_a = ((R * params.W_aux.transpose()).cwiseProduct(batch.noised)).colwise().sum().transpose() * inv_b;
  e.grad_w_end = Vec::Zero(params.dim());
  return e;
}

LossEval activation_l1(const ModelParams& params, const LabeledDataset& batch) {
  check_end_batch(params, batch);
  const Index d = params.dim();
  const double scale = 2.0 / (static_cast<double>(batch.size()) * static_cast<double>(d));
  LossEval e = LossEval::zeros(d);
  double total = 0.0;
  for (Index i = 0; i < batch.size(); ++i) {
    for (Index j = 0; j < d; ++j) {
      const double h = params.a[j] * batch.features(i, j);
      total += std::abs(h);
      if (h > 0)
        e.grad_a[j] += batch.features(i, j);
      else if (h < 0)
        e.grad_a[j] -= batch.features(i, j);
    }
  }
  e.value = total * scale;
  e.grad_a *= scale;
  return e;
}

LossEval multitask_loss(const ModelParams& params, const LabeledDataset& end_batch,
                        const AuxDataset& aux_batch, const LossWeights& weights,
                        const Vec* example_weights) {
  weights.validate();
  if (aux_batch.empty()) throw InvalidInput("empty auxiliary batch");
  LossEval total = end_loss(params, end_batch, weights.lambda_l2, example_weights);
  if (weights.alpha_aux != 0.0) total += weights.alpha_aux * recon_loss(params, aux_batch);
  if (weights.alpha_reg != 0.0) total += weights.alpha_reg * activation_l1(params, end_batch);
  return total;
}

}  // namespace grouprobe
