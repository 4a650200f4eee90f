#include "grouprobe/evalsel.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace grouprobe {

GroupMetrics evaluate(const ModelParams& params, const LabeledDataset& dataset) {
  if (dataset.empty()) throw InvalidInput("evaluate: empty dataset");
  const Vec z = predict_end_batch(params, dataset.features);
  GroupMetrics m;
  m.has_groups = dataset.has_groups();
  std::array<Index, kNumGroups> correct{};
  Index total_correct = 0;
  for (Index i = 0; i < dataset.size(); ++i) {
    const bool ok = predicted_label(z[i]) == dataset.labels[i];
    total_correct += ok;
    if (m.has_groups) {
      const int g = dataset.group_ids[i];
      ++m.group_sizes[g];
      correct[g] += ok;
    }
  }
  m.avg_acc = static_cast<double>(total_correct) / static_cast<double>(dataset.size());
  if (!m.has_groups) {
    m.wg_acc = std::numeric_limits<double>::quiet_NaN();
    m.all_groups_present = false;
    m.per_group_acc.fill(std::numeric_limits<double>::quiet_NaN());
    return m;
  }
  m.wg_acc = 1.0;
  for (int g = 0; g < kNumGroups; ++g) {
    if (m.group_sizes[g] == 0) {
      m.all_groups_present = false;
      m.per_group_acc[g] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    m.per_group_acc[g] = static_cast<double>(correct[g]) / static_cast<double>(m.group_sizes[g]);
    m.wg_acc = std::min(m.wg_acc, m.per_group_acc[g]);
  }
  return m;
}

std::string to_string(SelectionStrategy s) { return s == SelectionStrategy::ValGp ? "val_gp" : "no_gp"; }

SelectionStrategy selection_from_string(const std::string& s) {
  if (s == "val_gp" || s == "VAL_GP" || s == "val-gp") return SelectionStrategy::ValGp;
  if (s == "no_gp" || s == "NO_GP" || s == "no-gp") return SelectionStrategy::NoGp;
  throw InvalidInput("unknown selection strategy '" + s + "'");
}

double selection_metric(const GroupMetrics& m, SelectionStrategy s) {
  if (s == SelectionStrategy::ValGp) {
    if (!m.has_groups) throw InvalidInput("VAL_GP selection needs group ids on validation data");
    return m.wg_acc;
  }
  return m.avg_acc;
}

Index select_checkpoint(const TrainTrace& trace, SelectionStrategy strategy) {
  if (trace.epochs.empty()) throw InvalidInput("select_checkpoint: empty trace");
  Index best = 0;
  double best_metric = selection_metric(trace.epochs[0].val, strategy);
  for (std::size_t k = 1; k < trace.epochs.size(); ++k) {
    const double m = selection_metric(trace.epochs[k].val, strategy);
    if (m > best_metric) {
      best_metric = m;
      best = static_cast<Index>(k);
    }
  }
  return best;
}

double spur_core_log_ratio(const Vec& a, Index d_c, Index d_s) {
  if (d_c < 1 || d_s < 1 || d_c + d_s != a.size())
    throw ShapeError("spur_core_log_ratio: d_c + d_s must equal len(a)");
  const double core = a.head(d_c).lpNorm<1>();
  const double spur = a.tail(d_s).lpNorm<1>();
  if (!(core > 0)) throw DegenerateInput("spur_core_log_ratio: zero core mass");
  if (spur == 0) return -kInf;
  return std::log(spur / core);
}

bool dominates(const ParetoPoint& p, const ParetoPoint& q) {
  return p.avg_acc >= q.avg_acc && p.wg_acc >= q.wg_acc &&
         (p.avg_acc > q.avg_acc || p.wg_acc > q.wg_acc);
}

std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points) {
  std::vector<ParetoPoint> sorted = points;
  std::stable_sort(sorted.begin(), sorted.end(), [](const ParetoPoint& p, const ParetoPoint& q) {
    if (p.avg_acc != q.avg_acc) return p.avg_acc > q.avg_acc;
    return p.wg_acc > q.wg_acc;
  });
  // Sweep in avg-descending order. A point survives iff no point with
  // strictly larger avg has wg >= its wg, and no point with equal avg has
  // strictly larger wg.
  std::vector<ParetoPoint> front;
  double best_wg_higher_avg = -kInf;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].avg_acc == sorted[i].avg_acc) ++j;
    const double top_wg = sorted[i].wg_acc;  // block is wg-descending
    for (std::size_t k = i; k < j; ++k) {
      if (sorted[k].wg_acc == top_wg && sorted[k].wg_acc > best_wg_higher_avg) front.push_back(sorted[k]);
    }
    best_wg_higher_avg = std::max(best_wg_higher_avg, top_wg);
    i = j;
  }
  return front;
}

namespace {

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  return std::stod(s);
}

}  // namespace

void write_pareto_csv(std::ostream& os, const std::vector<ParetoPoint>& points) {
  os << "avg_acc,wg_acc,method,alpha_aux,alpha_reg,tau,lr,batch\n";
  for (const auto& p : points) {
    os << format_double(p.avg_acc) << ',' << format_double(p.wg_acc) << ',' << p.method << ','
       << format_double(p.alpha_aux) << ',' << format_double(p.alpha_reg) << ','
       << format_double(p.tau) << ',' << format_double(p.lr) << ',' << p.batch << '\n';
  }
}

std::vector<ParetoPoint> read_pareto_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("empty Pareto CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "avg_acc,wg_acc,method,alpha_aux,alpha_reg,tau,lr,batch")
    throw InvalidInput("unexpected Pareto CSV header");
  std::vector<ParetoPoint> out;
  Index lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw InvalidInput("Pareto CSV line " + std::to_string(lineno) + ": expected 8 columns");
    try {
      ParetoPoint p;
      p.avg_acc = parse_double(cells[0]);
      p.wg_acc = parse_double(cells[1]);
      p.method = cells[2];
      p.alpha_aux = parse_double(cells[3]);
      p.alpha_reg = parse_double(cells[4]);
      p.tau = parse_double(cells[5]);
      p.lr = parse_double(cells[6]);
      p.batch = std::stoll(cells[7]);
      out.push_back(std::move(p));
    } catch (const std::logic_error&) {
      throw InvalidInput("Pareto CSV line " + std::to_string(lineno) + ": unparseable value");
    }
  }
  return out;
}

void write_pareto_dat(std::ostream& os, const std::vector<ParetoPoint>& points) {
  os << "# avg_acc wg_acc\n";
  for (const auto& p : points) os << format_double(p.avg_acc) << ' ' << format_double(p.wg_acc) << '\n';
}

void write_trace_csv(std::ostream& os, const TrainTrace& trace) {
  os << "epoch,train_loss,val_avg_acc,val_wg_acc,g0,g1,g2,g3\n";
  for (const auto& r : trace.epochs) {
    os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val.avg_acc) << ','
       << format_double(r.val.wg_acc);
    for (double g : r.val.per_group_acc) os << ',' << format_double(g);
    os << '\n';
  }
}

nlohmann::json to_json(const GroupMetrics& m) {
  nlohmann::json j;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json groups = nlohmann::json::array();
  for (double g : m.per_group_acc) groups.push_back(num(g));
  j["avg_acc"] = m.avg_acc;
  j["wg_acc"] = num(m.wg_acc);
  j["per_group_acc"] = groups;
  j["group_sizes"] = m.group_sizes;
  j["all_groups_present"] = m.all_groups_present;
  return j;
}

}  // namespace grouprobe
