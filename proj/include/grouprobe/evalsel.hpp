#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "grouprobe/linmodel.hpp"
#include "grouprobe/synthgen.hpp"

namespace grouprobe {

struct GroupMetrics {
  std::array<double, kNumGroups> per_group_acc{};
  std::array<Index, kNumGroups> group_sizes{};
  double avg_acc = 0.0;
  // Minimum over groups present in the data; NaN when group ids are absent.
  double wg_acc = 0.0;
  bool has_groups = true;
  // False when some group has zero examples; wg_acc then covers present groups.
  bool all_groups_present = true;
};

// Accuracy of sign(predict_end) (sign(0) = +1), overall and per group.
GroupMetrics evaluate(const ModelParams& params, const LabeledDataset& dataset);

enum class SelectionStrategy { ValGp, NoGp };

std::string to_string(SelectionStrategy s);
SelectionStrategy selection_from_string(const std::string& s);

struct EpochRecord {
  Index epoch = 0;
  double train_loss = 0.0;
  GroupMetrics val;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  // Optional per-epoch parameter snapshots (OptimConfig::keep_snapshots).
  std::vector<ModelParams> snapshots;
  Index stop_epoch = 0;
};

double selection_metric(const GroupMetrics& m, SelectionStrategy s);

// Argmax over epochs of val wg_acc (ValGp) or val avg_acc (NoGp); ties go to
// the earliest epoch. Returns the position in trace.epochs.
Index select_checkpoint(const TrainTrace& trace, SelectionStrategy strategy);

// ln(||a_spur||_1 / ||a_core||_1) over the blocks [0, d_c) and [d_c, d_c+d_s).
// Zero spurious mass yields -inf; zero core mass throws DegenerateInput.
double spur_core_log_ratio(const Vec& a, Index d_c, Index d_s);

struct ParetoPoint {
  double avg_acc = 0.0;
  double wg_acc = 0.0;
  std::string method;
  double alpha_aux = 0.0;
  double alpha_reg = 0.0;
  double tau = kInf;
  double lr = 0.0;
  Index batch = 0;
  std::string seed_set;
};

// p dominates q iff p.avg >= q.avg and p.wg >= q.wg with one strict.
bool dominates(const ParetoPoint& p, const ParetoPoint& q);

// Non-dominated subset, sorted by avg_acc descending (then wg descending;
// stable otherwise). Duplicated points are all kept.
std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points);

// `avg_acc,wg_acc,method,alpha_aux,alpha_reg,tau,lr,batch`
void write_pareto_csv(std::ostream& os, const std::vector<ParetoPoint>& points);
std::vector<ParetoPoint> read_pareto_csv(std::istream& is);
// Two whitespace-separated columns `avg_acc wg_acc` for gnuplot.
void write_pareto_dat(std::ostream& os, const std::vector<ParetoPoint>& points);

// `epoch,train_loss,val_avg_acc,val_wg_acc,g0,g1,g2,g3`
void write_trace_csv(std::ostream& os, const TrainTrace& trace);

nlohmann::json to_json(const GroupMetrics& m);

}  // namespace grouprobe
