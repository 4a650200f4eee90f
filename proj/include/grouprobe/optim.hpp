#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "grouprobe/evalsel.hpp"
#include "grouprobe/objectives.hpp"

namespace grouprobe {

struct OptimConfig {
  double learning_rate = 1e-3;
  Index batch_size = 64;
  Index epochs = 500;
  // 0 disables early stopping.
  Index patience = 0;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  bool keep_snapshots = false;
  // Re-check constraint feasibility after every step.
  bool check_feasibility = false;

  void validate() const;
};

struct MomentumState {
  Vec a;
  Vec w_end;
  Mat W_aux;
};

// params <- params - lr * v with v <- momentum * v + grad, then the L1 ball
// (or sphere, in strict mode) on a and the Frobenius sphere on W_aux.
// Throws Diverged when the gradient or the updated parameters are not finite.
void sgd_step(ModelParams& params, const LossEval& grads, const OptimConfig& cfg,
              MomentumState& state, Index epoch = 0);

struct BatchIndices {
  std::vector<Index> end_rows;
  std::vector<Index> aux_rows;
};

// Task-heterogeneous batching: every step pairs one end-task batch with one
// auxiliary batch of the same size. Each stream has its own PRNG and is
// reshuffled at every epoch; the shorter stream recycles (reshuffling when
// exhausted) so that an epoch covers the longer stream exactly once, with a
// short final batch. Either stream may be empty (single-task training).
class BatchSchedule {
 public:
  BatchSchedule(Index n_end, Index n_aux, Index batch_size, std::uint64_t seed);

  std::vector<BatchIndices> next_epoch();
  Index steps_per_epoch() const;

 private:
  struct Stream {
    Index n = 0;
    std::vector<Index> order;
    std::size_t cursor = 0;
    std::mt19937_64 rng;

    void reshuffle();
    std::vector<Index> take(Index count);
  };

  Index batch_size_;
  Stream end_;
  Stream aux_;
};

std::vector<BatchIndices> heterogeneous_batches(Index n_end, Index n_aux, Index batch_size,
                                                std::uint64_t seed);

// Materialised batch handed to an objective. end/aux are empty when the
// respective task is not trained.
struct Batch {
  LabeledDataset end;
  AuxDataset aux;
  const BatchIndices* rows = nullptr;
};

using Objective = std::function<LossEval(const ModelParams&, const Batch&)>;

struct TrainData {
  const LabeledDataset* end = nullptr;
  const AuxDataset* aux = nullptr;
};

struct TrainResult {
  TrainTrace trace;
  ModelParams best;
  Index best_epoch = 0;
  ModelParams last;
};

// Epoch loop: heterogeneous batched projected SGD on `objective`, one
// validation pass after the last step of every epoch, checkpoint tracking
// under `selector` (strict improvement by more than 1e-12), and early stop
// after `patience` non-improving epochs.
TrainResult train(ModelParams params, const TrainData& data, const Objective& objective,
                  const OptimConfig& cfg, const LabeledDataset& val, SelectionStrategy selector);

// Standard objective: end_loss when there is no aux data (or alpha_aux and
// alpha_reg are both 0 without aux data), multitask_loss otherwise, recon
// only when there is no end data.
Objective make_standard_objective(const LossWeights& weights);

TrainResult train(ModelParams params, const LabeledDataset* end_data, const AuxDataset* aux_data,
                  const LossWeights& weights, const OptimConfig& cfg, const LabeledDataset& val,
                  SelectionStrategy selector);

}  // namespace grouprobe
