// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "brute.hpp"
#include "grouprobe/experiment.hpp"
#include "grouprobe/oracle.hpp"
#include "hiprec.hpp"
#include "support.hpp"

using namespace grouprobe;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  std::printf("%s criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const SummaryRow& row(const ExperimentOutput& out, const std::string& arm) {
  for (const auto& r : out.summary)
    if (r.arm == arm) return r;
  throw Error("missing arm " + arm);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void table2(const ExperimentOutput& out, double secs) {
  const double reg01 = row(out, "reg_mtl_tau0.1").test_wg.mean;
  const double reg10 = row(out, "reg_mtl_tau10").test_wg.mean;
  const double end01 = row(out, "end_only_tau0.1").test_wg.mean;
  const double end10 = row(out, "end_only_tau10").test_wg.mean;
  std::vector<std::string> failed;
  if (!(reg01 >= 0.85)) failed.push_back("reg tau=0.1 >= 0.85");
  if (!(reg01 > end01 && end01 > end10)) failed.push_back("reg 0.1 > end 0.1 > end 10");
  if (!(reg10 <= 0.20)) failed.push_back("reg tau=10 <= 0.20");
  const std::pair<double, double> centers[] = {{reg01, 0.9402}, {end01, 0.6415}, {end10, 0.4830}, {reg10, 0.0}};
  for (const auto& [got, ref] : centers)
    if (std::abs(got - ref) > 0.10) failed.push_back("|" + fmt("%.4f", got) + " - " + fmt("%.4f", ref) + "| <= 0.10");
  if (!(secs < 300)) failed.push_back("runtime < 300 s");
  std::string detail = "wg reg0.1=" + fmt("%.4f", reg01) + " end0.1=" + fmt("%.4f", end01) +
                       " end10=" + fmt("%.4f", end10) + " reg10=" + fmt("%.4f", reg10) + " runtime=" +
                       fmt("%.1fs", secs);
  for (const auto& f : failed) detail += "; violated: " + f;
  report(1, "table2 ordering", failed.empty(), detail);
}

void fig3(const ExperimentOutput& out) {
  int neg_small = 0, nonneg_large = 0;
  std::string detail;
  for (const auto& r : out.summary) {
    const double m = r.log_ratio.mean;
    detail += r.arm + "=" + fmt("%.3f", m) + " ";
    if (r.tau == 0.1 && m < 0) ++neg_small;
    if (r.tau == 10.0 && m >= 0) ++nonneg_large;
  }
  detail += "| tau=0.1 negative " + std::to_string(neg_small) + "/4, tau=10 non-negative " +
            std::to_string(nonneg_large) + "/4";
  report(2, "aux-only log-ratio signs", neg_small >= 3 && nonneg_large >= 1, detail);
}

void erm_reliance(const ExperimentOutput& out) {
  const auto& r = row(out, "erm_no_gp");
  const bool pass = r.id_avg.mean >= 0.85 && r.id_wg.mean <= 0.70;
  report(3, "ERM spurious reliance", pass,
         "in-distribution avg=" + fmt("%.4f", r.id_avg.mean) + " wg=" + fmt("%.4f", r.id_wg.mean) +
             " (balanced test avg=" + fmt("%.4f", r.test_avg.mean) + " wg=" + fmt("%.4f", r.test_wg.mean) + ")");
}

void baseline_order(const ExperimentOutput& out) {
  const double erm = row(out, "erm_val_gp").test_wg.mean;
  const double jtt = row(out, "jtt_val_gp").test_wg.mean;
  const double dro = row(out, "group_dro_val_gp").test_wg.mean;
  const double reg = row(out, "reg_mtl_val_gp").test_wg.mean;
  std::vector<std::string> failed;
  if (!(dro >= reg)) failed.push_back("groupDRO >= reg-MTL");
  if (!(reg >= erm)) failed.push_back("reg-MTL >= ERM");
  if (!(jtt >= erm)) failed.push_back("JTT >= ERM");
  std::string detail = "val_gp wg erm=" + fmt("%.4f", erm) + " jtt=" + fmt("%.4f", jtt) + " dro=" +
                       fmt("%.4f", dro) + " reg_mtl=" + fmt("%.4f", reg);
  for (const auto& f : failed) detail += "; violated: " + f;
  report(4, "baseline ordering", failed.empty(), detail);
}

void oracle_agreement() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  double worst = 0;
  for (int t = 0; t < 10; ++t) {
    const BayesWeightInputs in{u(rng), u(rng), u(rng), u(rng)};
    worst = std::max(worst, std::abs(numeric_bayes_weight(in, 1000000, 9000 + t) - bayes_weight(in)));
  }
  const GradCheckReport g = run_gradient_checks(20, 2024);
  std::map<std::string, int> trials;
  double worst_rel = 0;
  for (const auto& c : g.cases) {
    ++trials[c.loss];
    worst_rel = std::max(worst_rel, c.rel_error);
  }
  bool all_twenty = !trials.empty();
  for (const auto& [loss, n] : trials) all_twenty = all_twenty && n == 20;
  const bool pass = worst <= 0.01 && g.all_pass() && all_twenty;
  report(5, "oracle agreement", pass,
         "max |numeric - closed form| = " + fmt("%.2e", worst) + " over 10 sets; " + std::to_string(g.cases.size()) +
             " gradient checks over " + std::to_string(trials.size()) + " losses, max rel error " +
             fmt("%.2e", worst_rel));
}

void projection() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> tau_d(0.05, 3.0);
  double worst_2d = 0;
  for (int t = 0; t < 100; ++t) {
    const Vec v = testsupport::random_vec(rng, 2, 2.0);
    const double tau = tau_d(rng);
    worst_2d = std::max(worst_2d, (project_l1(v, tau) - brute::project_l1_2d(v, tau)).norm());
  }
  std::uniform_int_distribution<int> dim(1, 64);
  std::uniform_real_distribution<double> log_scale(-3, 3);
  int bad = 0;
  for (int t = 0; t < 10000; ++t) {
    const Vec v = testsupport::random_vec(rng, dim(rng), std::pow(10.0, log_scale(rng)));
    const double tau = std::pow(10.0, log_scale(rng));
    const Vec p = project_l1(v, tau);
    const Vec pp = project_l1(p, tau);
    const bool feasible = p.lpNorm<1>() <= tau * (1 + 1e-12);
    const bool idempotent = (pp - p).norm() <= 1e-12 * std::max(1.0, p.norm());
    if (!feasible || !idempotent) ++bad;
  }
  report(6, "projection correctness", worst_2d <= 1e-3 && bad == 0,
         "2-D max distance to brute force " + fmt("%.2e", worst_2d) + "; fuzz violations " + std::to_string(bad) +
             "/10000");
}

bool same_set(std::vector<ParetoPoint> a, std::vector<ParetoPoint> b) {
  auto key = [](const ParetoPoint& p) { return std::make_tuple(p.avg_acc, p.wg_acc, p.method); };
  auto less = [&](const ParetoPoint& p, const ParetoPoint& q) { return key(p) < key(q); };
  std::sort(a.begin(), a.end(), less);
  std::sort(b.begin(), b.end(), less);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (key(a[i]) != key(b[i])) return false;
  return true;
}

void pareto() {
  std::mt19937_64 rng(707);
  std::uniform_int_distribution<int> size(1, 1000);
  std::uniform_int_distribution<int> grid(0, 25);
  std::uniform_real_distribution<double> unit(0, 1);
  int mismatches = 0;
  std::size_t largest = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = size(rng);
    largest = std::max<std::size_t>(largest, n);
    std::vector<ParetoPoint> pts;
    for (int i = 0; i < n; ++i) {
      ParetoPoint p;
      const bool coarse = t % 3 == 0;
      p.avg_acc = coarse ? grid(rng) / 25.0 : unit(rng);
      p.wg_acc = coarse ? grid(rng) / 25.0 : unit(rng) * p.avg_acc;
      p.method = std::to_string(i);
      pts.push_back(p);
    }
    if (!same_set(pareto_front(pts), brute::pareto(pts))) ++mismatches;
  }
  report(7, "pareto correctness", mismatches == 0,
         std::to_string(mismatches) + " mismatches over 200 sets (largest n=" + std::to_string(largest) + ")");
}

void bounds() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> pos(0.01, 3.0);
  std::uniform_int_distribution<long> dims(1, 10);
  double worst_err = 0;
  int out_of_range = 0, underflow = 0;
  for (int t = 0; t < 1000; ++t) {
    BoundInputs in{pos(rng), pos(rng), pos(rng), pos(rng), pos(rng), dims(rng), dims(rng), 0.1};
    const double arg = worst_group_error_bound_argument(in);
    const double b = worst_group_error_bound(in);
    const hiprec::Real ref = hiprec::phi(hiprec::Real(arg));
    worst_err = std::max(worst_err, std::abs(b - static_cast<double>(ref)));
    if (!(b > 0 && b < 0.5)) ++out_of_range;
    if (ref < std::numeric_limits<double>::min()) ++underflow;
  }
  double worst_rt = 0;
  for (int k = 1; k < 1000; ++k) {
    const double p = k / 1000.0;
    worst_rt = std::max(worst_rt, std::abs(normal_cdf(normal_quantile(p)) - p));
  }
  for (double p : {1e-10, 1e-6, 0.01, 0.49, 0.5, 0.51, 0.99, 1 - 1e-6})
    worst_rt = std::max(worst_rt, std::abs(normal_cdf(normal_quantile(p)) - p));
  const bool pass = worst_err <= 1e-12 && out_of_range == 0 && worst_rt <= 1e-10;
  report(8, "bound calculators", pass,
         "max |bound - 50-digit Phi| = " + fmt("%.2e", worst_err) + "; outside (0, 0.5): " +
             std::to_string(out_of_range) + "/1000 (" + std::to_string(underflow) +
             " below the normal double range); max roundtrip error " + fmt("%.2e", worst_rt));
}

}  // namespace

int main() {
  const fs::path root = testsupport::temp_dir("acceptance");
  std::map<std::string, ExperimentOutput> outs;
  std::map<std::string, double> secs;
  try {
    for (const auto& name : experiment_recipe_names()) {
      const auto t0 = std::chrono::steady_clock::now();
      outs[name] = run_experiment(experiment_recipe(name), (root / name / "a").string());
      secs[name] = seconds_since(t0);
    }
    table2(outs["table2"], secs["table2"]);
    fig3(outs["fig3"]);
    erm_reliance(outs["baselines"]);
    baseline_order(outs["baselines"]);
  } catch (const std::exception& e) {
    std::printf("FAIL criteria 1-4: experiment error: %s\n", e.what());
    failures += 4;
  }

  oracle_agreement();
  projection();
  pareto();
  bounds();

  // Rerun every recipe with a different worker count and compare bytes.
  std::vector<std::string> differing;
  std::size_t compared = 0;
  try {
    for (const auto& name : experiment_recipe_names()) {
      const fs::path a = root / name / "a", b = root / name / "b";
      run_experiment(experiment_recipe(name), b.string(), 1);
      for (const char* f : {"summary.csv", "grid.csv", "best_over_grid.csv"}) {
        if (!fs::exists(a / f) && !fs::exists(b / f)) continue;
        ++compared;
        if (slurp(a / f) != slurp(b / f)) differing.push_back(name + "/" + f);
      }
    }
    for (const auto& name : sweep_recipe_names()) {
      const fs::path a = root / ("sweep_" + name) / "a", b = root / ("sweep_" + name) / "b";
      run_sweep(sweep_recipe(name), a.string());
      run_sweep(sweep_recipe(name), b.string(), 1);
      for (const char* f : {"sweep.csv", "pareto.csv"}) {
        ++compared;
        if (slurp(a / f) != slurp(b / f)) differing.push_back("sweep " + name + "/" + f);
      }
    }
    std::string detail = std::to_string(compared) + " summary files compared, " +
                         std::to_string(differing.size()) + " differ";
    for (const auto& d : differing) detail += "; " + d;
    report(9, "determinism", differing.empty() && compared > 0, detail);
  } catch (const std::exception& e) {
    report(9, "determinism", false, std::string("error: ") + e.what());
  }

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
