#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grouprobe/baselines.hpp"

namespace grouprobe {

inline constexpr const char* kExperimentSchema = "grouprobe.experiment/1";
inline constexpr const char* kSweepSchema = "grouprobe.sweep/1";

struct DataConfig {
  GroupDataSpec spec;
  // Validation follows the training mix unless val_balanced.
  Index n_val = 100;
  bool val_balanced = false;
  Index test_per_group = 250;
  // Held-out set drawn with the training mix; 0 disables it.
  Index n_test_id = 1000;
  // Noise a fresh draw of the training distribution instead of the training
  // features themselves.
  bool aux_fresh_draw = false;

  void validate() const;
};

enum class Method { Erm, Jtt, GroupDro, RegMtl, AuxOnly };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct ArmConfig {
  std::string name;
  Method method = Method::Erm;
  FitConfig fit;
  JttConfig jtt;
  GroupDroConfig dro;
};

struct HyperGrid {
  std::vector<double> learning_rate;
  std::vector<Index> batch_size;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<ArmConfig> arms;
  // When set, every arm is additionally run over lr x batch and the
  // configuration with the best mean validation selector metric is reported.
  std::optional<HyperGrid> hp_grid;

  void validate() const;
};

// Throws ConfigError naming the offending key path. Unknown keys are errors.
ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig parse_experiment_text(const std::string& text);
ExperimentConfig load_experiment(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

std::vector<std::string> experiment_recipe_names();
ExperimentConfig experiment_recipe(const std::string& name);

// Training, auxiliary, validation and test data for one seed. Every split
// draws from its own sub-stream of `seed`.
struct SeedData {
  Splits splits;
  LabeledDataset test_id;
};

SeedData make_seed_data(const DataConfig& cfg, std::uint64_t seed);
LabeledDataset make_in_distribution(const GroupDataSpec& spec, Index n, std::uint64_t seed);

struct RunRecord {
  std::string arm;
  std::uint64_t seed = 0;
  FitResult fit;
  std::optional<GroupMetrics> test_id;
  double log_ratio = 0.0;  // NaN when undefined
};

RunRecord run_arm(const ArmConfig& arm, const SeedData& data, std::uint64_t seed, Index d_c, Index d_s);
nlohmann::json to_json(const RunRecord& r);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample std; 0 for a single value
};

Stat mean_std(const std::vector<double>& xs);

struct SummaryRow {
  std::string arm;
  std::string method;
  std::string selector;
  double tau = kInf;
  double alpha_aux = 0.0;
  double alpha_reg = 0.0;
  double learning_rate = 0.0;
  Index batch_size = 0;
  Index n_seeds = 0;
  Stat test_avg, test_wg, id_avg, id_wg, log_ratio, val_metric;
};

SummaryRow summarize(const ArmConfig& arm, const std::vector<const RunRecord*>& runs);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);
std::string summary_csv_header();

// Capped by GROUPROBE_WORKERS when set, else hardware concurrency.
unsigned default_workers();

// Runs fn(i) for i in [0, n) on a bounded pool. The first exception thrown
// by any task is rethrown after all workers stop.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn);

struct ExperimentOutput {
  std::vector<RunRecord> runs;  // arm-major, seed-minor
  std::vector<SummaryRow> summary;
  std::vector<SummaryRow> grid_summary;
  std::vector<SummaryRow> best_over_grid;
};

// With a nonempty out_dir writes config.json, runs/<arm>_seed<k>.json,
// traces/<arm>_seed<k>.csv, summary.csv and (with hp_grid) grid.csv and
// best_over_grid.csv. Every file is written via temp-and-rename.
ExperimentOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir = {},
                                unsigned workers = 0);

struct SweepGrid {
  std::vector<double> alpha_aux;
  std::vector<double> alpha_reg;
  std::vector<double> tau;
  std::vector<double> learning_rate;
  std::vector<Index> batch_size;

  std::size_t cells() const;
};

struct SweepConfig {
  std::string name = "sweep";
  DataConfig data;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  ArmConfig base;
  SweepGrid grid;

  void validate() const;
  // Cartesian product in the order alpha_reg, alpha_aux, tau, lr, batch.
  std::vector<ArmConfig> expand() const;
};

SweepConfig parse_sweep(const nlohmann::json& j);
SweepConfig load_sweep(const std::string& path);
nlohmann::json to_json(const SweepConfig& cfg);

std::vector<std::string> sweep_recipe_names();
SweepConfig sweep_recipe(const std::string& name);

struct SweepOutput {
  std::vector<SummaryRow> rows;
  std::vector<ParetoPoint> points;
  std::vector<ParetoPoint> front;
};

// Each cell averaged over seeds (balanced test metrics), then pareto_front.
// With a nonempty out_dir writes sweep.csv, pareto.csv and pareto.dat.
SweepOutput run_sweep(const SweepConfig& cfg, const std::string& out_dir = {}, unsigned workers = 0);

// Writes via `<path>.tmp` and rename.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace grouprobe
