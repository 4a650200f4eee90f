#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grouprobe/optim.hpp"

namespace grouprobe {

// Everything one run consumes. aux may be empty for single-task methods;
// test may be empty, in which case no test metrics are reported.
struct Splits {
  LabeledDataset train;
  AuxDataset aux;
  LabeledDataset val;
  LabeledDataset test;
};

// Shared knobs of every trainer.
struct FitConfig {
  OptimConfig optim;
  // lambda_l2 applies to all methods; alpha_aux / alpha_reg only to reg_mtl.
  LossWeights weights;
  double tau = kInf;
  bool strict_boundary = false;
  double fro_radius = 1.0;
  WAuxInit w_aux_init = WAuxInit::Identity;
  SelectionStrategy selector = SelectionStrategy::NoGp;
};

struct JttConfig {
  Index id_epochs = 50;
  double upweight = 5.0;

  void validate() const;
};

struct GroupDroConfig {
  double group_step = 0.01;
  // Keep per-step (q_before, losses, q_after) records in memory.
  bool record_steps = false;

  void validate() const;
};

struct JttStats {
  Index error_set_size = 0;
  std::array<Index, kNumGroups> error_set_groups{};
  bool fallback = false;

  double minority_fraction() const;
};

struct DroStep {
  std::array<double, kNumGroups> q_before{};
  std::array<double, kNumGroups> q_after{};
  std::array<double, kNumGroups> group_loss{};
  std::array<bool, kNumGroups> present{};
};

struct DroStats {
  std::array<double, kNumGroups> final_q{};
  // q after the last step of every epoch.
  std::vector<std::array<double, kNumGroups>> q_per_epoch;
  std::vector<DroStep> steps;
};

struct FitResult {
  std::string method;
  nlohmann::json config;
  ModelParams params;  // selected checkpoint
  ModelParams last;
  TrainTrace trace;
  Index selected_epoch = 0;
  GroupMetrics val;
  std::optional<GroupMetrics> test;
  std::optional<JttStats> jtt;
  std::optional<DroStats> dro;
};

nlohmann::json to_json(const FitResult& r, bool include_trace = false);

FitResult train_erm(const Splits& data, const FitConfig& cfg);
FitResult train_jtt(const Splits& data, const FitConfig& cfg, const JttConfig& jtt);
FitResult train_group_dro(const Splits& data, const FitConfig& cfg, const GroupDroConfig& dro);
// End task plus reconstruction under the L1 ball of radius cfg.tau.
FitResult train_reg_mtl(const Splits& data, const FitConfig& cfg);
// Reconstruction only; the end head is never trained. The reported
// parameters are the final iterate regardless of cfg.selector.
FitResult train_aux_only(const Splits& data, const FitConfig& cfg);

// Exponentiated-gradient step on the simplex restricted to the groups marked
// present: q_g *= exp(step * loss_g), then renormalise over all groups.
std::array<double, kNumGroups> dro_update(const std::array<double, kNumGroups>& q,
                                          const std::array<double, kNumGroups>& group_loss,
                                          const std::array<bool, kNumGroups>& present,
                                          double step);

// JTT weights: upweight on the error set, 1 elsewhere, scaled to mean 1.
Vec jtt_weights(const std::vector<bool>& in_error_set, double upweight);

// Seeds derived from the optimiser seed for model initialisation.
ModelParams initial_params(const FitConfig& cfg, Index d, std::uint64_t seed);

}  // namespace grouprobe
