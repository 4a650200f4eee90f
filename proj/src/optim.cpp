#include "grouprobe/optim.hpp"

#include <algorithm>
#include <numeric>

namespace grouprobe {

void OptimConfig::validate() const {
  if (!(learning_rate > 0)) throw InvalidSpec("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidSpec("batch_size must be >= 1");
  if (epochs < 1) throw InvalidSpec("epochs must be >= 1");
  if (patience < 0) throw InvalidSpec("patience must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw InvalidSpec("momentum must be in [0, 1)");
}

void sgd_step(ModelParams& params, const LossEval& grads, const OptimConfig& cfg,
              MomentumState& state, Index epoch) {
  const Index d = params.dim();
  if (grads.grad_a.size() != d || grads.grad_w_end.size() != d || grads.grad_W_aux.rows() != d ||
      grads.grad_W_aux.cols() != d)
    throw ShapeError("sgd_step: gradient shapes do not match parameters");
  if (!grads.all_finite()) throw Diverged("non-finite loss or gradient", epoch);

  if (cfg.momentum > 0) {
    if (state.a.size() != d) {
      state.a = Vec::Zero(d);
      state.w_end = Vec::Zero(d);
      state.W_aux = Mat::Zero(d, d);
    }
    state.a = cfg.momentum * state.a + grads.grad_a;
    state.w_end = cfg.momentum * state.w_end + grads.grad_w_end;
    state.W_aux = cfg.momentum * state.W_aux + grads.grad_W_aux;
    params.a -= cfg.learning_rate * state.a;
    params.w_end -= cfg.learning_rate * state.w_end;
    params.W_aux -= cfg.learning_rate * state.W_aux;
  } else {
    params.a -= cfg.learning_rate * grads.grad_a;
    params.w_end -= cfg.learning_rate * grads.grad_w_end;
    params.W_aux -= cfg.learning_rate * grads.grad_W_aux;
  }
  if (!params.all_finite()) throw Diverged("parameters became non-finite", epoch);
  try {
    enforce_constraints(params);
  } catch (const DegenerateInput& e) {
    throw Diverged(std::string("constraint projection failed: ") + e.what(), epoch);
  }
  if (cfg.check_feasibility) {
    if (params.l1_active() && params.a.lpNorm<1>() > params.tau + 1e-9)
      throw Error("feasibility check failed: ||a||_1 > tau");
    if (params.fro_radius > 0 && std::abs(params.W_aux.norm() - params.fro_radius) > 1e-9)
      throw Error("feasibility check failed: ||W_aux||_F != fro_radius");
  }
}

// ---------------------------------------------------------------------------

void BatchSchedule::Stream::reshuffle() {
  order.resize(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  cursor = 0;
}

std::vector<Index> BatchSchedule::Stream::take(Index count) {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<Index>(out.size()) < count) {
    if (cursor >= order.size()) reshuffle();
    out.push_back(order[cursor++]);
  }
  return out;
}

BatchSchedule::BatchSchedule(Index n_end, Index n_aux, Index batch_size, std::uint64_t seed)
    : batch_size_(batch_size) {
  if (batch_size < 1) throw InvalidSpec("batch_size must be >= 1");
  if (n_end < 0 || n_aux < 0 || n_end + n_aux == 0) throw InvalidInput("heterogeneous_batches: empty dataset");
  end_.n = n_end;
  aux_.n = n_aux;
  end_.rng.seed(derive_seed(seed, 0xE17D));
  aux_.rng.seed(derive_seed(seed, 0xA0C5));
}

Index BatchSchedule::steps_per_epoch() const {
  const Index n = std::max(end_.n, aux_.n);
  return (n + batch_size_ - 1) / batch_size_;
}

std::vector<BatchIndices> BatchSchedule::next_epoch() {
  const Index longest = std::max(end_.n, aux_.n);
  if (end_.n > 0) end_.reshuffle();
  if (aux_.n > 0) aux_.reshuffle();
  std::vector<BatchIndices> out;
  out.reserve(static_cast<std::size_t>(steps_per_epoch()));
  for (Index start = 0; start < longest; start += batch_size_) {
    const Index size = std::min(batch_size_, longest - start);
    BatchIndices b;
    if (end_.n > 0) b.end_rows = end_.take(size);
    if (aux_.n > 0) b.aux_rows = aux_.take(size);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<BatchIndices> heterogeneous_batches(Index n_end, Index n_aux, Index batch_size,
                                                std::uint64_t seed) {
  return BatchSchedule(n_end, n_aux, batch_size, seed).next_epoch();
}

// ---------------------------------------------------------------------------

TrainResult train(ModelParams params, const TrainData& data, const Objective& objective,
                  const OptimConfig& cfg, const LabeledDataset& val, SelectionStrategy selector) {
  cfg.validate();
  if (val.empty()) throw InvalidInput("train: empty validation set");
  if (selector == SelectionStrategy::ValGp && !val.has_groups())
    throw InvalidInput("VAL_GP selection needs group ids on validation data");
  const Index n_end = data.end ? data.end->size() : 0;
  const Index n_aux = data.aux ? data.aux->size() : 0;
  if (data.end && data.aux && (n_end == 0 || n_aux == 0))
    throw InvalidInput("train: multitask training needs both datasets nonempty");
  params.check_shapes();
  enforce_constraints(params);

  BatchSchedule schedule(n_end, n_aux, cfg.batch_size, cfg.seed);
  MomentumState momentum;
  TrainResult result;
  double best_metric = -kInf;
  Index since_improvement = 0;

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    Index steps = 0;
    for (const auto& rows : schedule.next_epoch()) {
      Batch batch;
      batch.rows = &rows;
      if (n_end > 0) batch.end = data.end->take(rows.end_rows);
      if (n_aux > 0) batch.aux = data.aux->take(rows.aux_rows);
      const LossEval eval = objective(params, batch);
      loss_sum += eval.value;
      ++steps;
      sgd_step(params, eval, cfg, momentum, epoch);
    }
    const double train_loss = loss_sum / static_cast<double>(steps);
    if (!std::isfinite(train_loss)) throw Diverged("non-finite training loss", epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.val = evaluate(params, val);
    result.trace.epochs.push_back(rec);
    if (cfg.keep_snapshots) result.trace.snapshots.push_back(params);
    result.trace.stop_epoch = epoch + 1;

    const double metric = selection_metric(rec.val, selector);
    if (metric > best_metric + 1e-12) {
      best_metric = metric;
      result.best = params;
      result.best_epoch = epoch;
      since_improvement = 0;
    } else if (cfg.patience > 0 && ++since_improvement >= cfg.patience) {
      break;
    }
  }
  result.last = params;
  return result;
}

Objective make_standard_objective(const LossWeights& weights) {
  weights.validate();
  return [weights](const ModelParams& p, const Batch& b) -> LossEval {
    if (b.aux.empty()) {
      LossEval e = end_loss(p, b.end, weights.lambda_l2);
      if (weights.alpha_reg != 0.0) e += weights.alpha_reg * activation_l1(p, b.end);
      return e;
    }
    if (b.end.empty()) return recon_loss(p, b.aux);
    return multitask_loss(p, b.end, b.aux, weights);
  };
}

TrainResult train(ModelParams params, const LabeledDataset* end_data, const AuxDataset* aux_data,
                  const LossWeights& weights, const OptimConfig& cfg, const LabeledDataset& val,
                  SelectionStrategy selector) {
  TrainData data{end_data, aux_data};
  // Auxiliary data with zero auxiliary weight is dropped so that the batch
  // stream reduces exactly to single-task training.
  if (end_data && aux_data && weights.alpha_aux == 0.0) data.aux = nullptr;
  return train(std::move(params), data, make_standard_objective(weights), cfg, val, selector);
}

}  // namespace grouprobe
