#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "grouprobe/experiment.hpp"
#include "grouprobe/oracle.hpp"

namespace gp = grouprobe;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw gp::ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw gp::ConfigError("'" + path + "': " + e.what());
  }
}

gp::ExperimentConfig experiment_from(const std::string& config, const std::string& recipe) {
  if (!config.empty() && !recipe.empty()) throw gp::ConfigError("use either --config or --recipe, not both");
  if (!config.empty()) return gp::load_experiment(config);
  if (!recipe.empty()) return gp::experiment_recipe(recipe);
  throw gp::ConfigError("one of --config or --recipe is required");
}

gp::SweepConfig sweep_from(const std::string& config, const std::string& recipe) {
  if (!config.empty() && !recipe.empty()) throw gp::ConfigError("use either --config or --recipe, not both");
  if (!config.empty()) return gp::load_sweep(config);
  if (!recipe.empty()) return gp::sweep_recipe(recipe);
  throw gp::ConfigError("one of --config or --recipe is required");
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ", ") + x;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grouprobe: worst-group robustness workbench for regularized multitask learning on synthetic data"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Sample one split of the synthetic group-shift data");
  std::string gen_spec = "table2", gen_split = "train", gen_out;
  std::uint64_t gen_seed = 0;
  gp::DataConfig gen_data;
  gen->add_option("--spec", gen_spec, "Named data spec (table2)")->capture_default_str();
  gen->add_option("--split", gen_split, "train | val | test | test_id | aux")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Run seed; splits use the same sub-streams as training")->capture_default_str();
  gen->add_option("--out", gen_out, "Output path; .bin selects the binary cache format")->required();
  gen->add_option("--d-c", gen_data.spec.d_c, "Core dimensions")->capture_default_str();
  gen->add_option("--d-s", gen_data.spec.d_s, "Spurious dimensions")->capture_default_str();
  gen->add_option("--sigma2-core", gen_data.spec.sigma2_core, "Core variance")->capture_default_str();
  gen->add_option("--sigma2-spur", gen_data.spec.sigma2_spur, "Spurious variance")->capture_default_str();
  gen->add_option("--n-maj", gen_data.spec.n_maj, "Majority sample count")->capture_default_str();
  gen->add_option("--n-min", gen_data.spec.n_min, "Minority sample count")->capture_default_str();
  gen->add_option("--sigma2-noise", gen_data.spec.sigma2_noise, "Auxiliary noise variance")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Run an experiment config or named recipe over its seeds");
  std::string tr_config, tr_recipe, tr_out;
  std::vector<std::uint64_t> tr_seeds;
  unsigned tr_workers = 0;
  tr->add_option("--config", tr_config, "Experiment JSON (schema grouprobe.experiment/1)");
  tr->add_option("--recipe", tr_recipe, "Named recipe: " + join(gp::experiment_recipe_names()));
  tr->add_option("--seed", tr_seeds, "Seed(s) replacing the config's seed list; repeatable");
  tr->add_option("--out", tr_out, "Output directory (default: runs/<name>)");
  tr->add_option("--workers", tr_workers, "Worker threads (0: GROUPROBE_WORKERS or all cores)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate saved parameters on a dataset");
  std::string ev_params, ev_data;
  gp::Index ev_dc = 1;
  ev->add_option("--params", ev_params, "Parameter JSON or run JSON with a \"params\" field")->required();
  ev->add_option("--data", ev_data, "Dataset (.csv or .bin)")->required();
  ev->add_option("--d-c", ev_dc, "Core dimensions of a CSV dataset")->capture_default_str();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run a loss-weight sweep grid and extract its Pareto front");
  std::string sw_config, sw_recipe, sw_out;
  std::vector<std::uint64_t> sw_seeds;
  unsigned sw_workers = 0;
  sw->add_option("--config", sw_config, "Sweep JSON (schema grouprobe.sweep/1)");
  sw->add_option("--recipe", sw_recipe, "Named sweep: " + join(gp::sweep_recipe_names()));
  sw->add_option("--seed", sw_seeds, "Seed(s) replacing the config's seed list; repeatable");
  sw->add_option("--out", sw_out, "Output directory (default: runs/<name>)");
  sw->add_option("--workers", sw_workers, "Worker threads (0: GROUPROBE_WORKERS or all cores)");

  // pareto
  auto* pa = app.add_subcommand("pareto", "Non-dominated subset of a Pareto CSV");
  std::string pa_in, pa_out, pa_dat;
  pa->add_option("--in", pa_in, "Input CSV avg_acc,wg_acc,method,alpha_aux,alpha_reg,tau,lr,batch")->required();
  pa->add_option("--out", pa_out, "Front CSV (default: stdout)");
  pa->add_option("--dat", pa_dat, "Optional two-column gnuplot file");

  // bound
  auto* bd = app.add_subcommand("bound", "Evaluate the closed-form worst-group error and core-mass bounds");
  gp::BoundInputs bin;
  bool bd_eps_set = false;
  bd->add_option("--gamma", bin.gamma, "Margin gamma > 0")->capture_default_str();
  bd->add_option("--sigma-spur", bin.sigma_spur, "Spurious standard deviation > 0")->capture_default_str();
  bd->add_option("--eta", bin.eta, "Norm bound eta > 0")->capture_default_str();
  bd->add_option("--tau", bin.tau, "L1 radius")->capture_default_str();
  bd->add_option("--lam", bin.lam, "Spurious mass bound")->capture_default_str();
  bd->add_option("--dc", bin.d_c, "Core dimension count")->capture_default_str();
  bd->add_option("--ds", bin.d_s, "Spurious dimension count")->capture_default_str();
  auto* eps_opt = bd->add_option("--eps", bin.eps_trans, "Transfer-task error in (0, 0.5) for the core-mass bound");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Compare closed-form gradients with central differences");
  gp::Index gc_trials = 20;
  std::uint64_t gc_seed = 0;
  double gc_h = 1e-5, gc_tol = 1e-5;
  gc->add_option("--trials", gc_trials, "Random instances per loss")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gc->add_option("--step", gc_h, "Finite-difference step")->capture_default_str();
  gc->add_option("--tol", gc_tol, "Relative tolerance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      if (gen_spec != "table2") throw gp::ConfigError("unknown data spec '" + gen_spec + "'");
      const gp::SeedData d = gp::make_seed_data(gen_data, gen_seed);
      if (gen_split == "aux") {
        // Noised inputs paired with their clean targets.
        gp::LabeledDataset noised = d.splits.train;
        noised.features = d.splits.aux.noised;
        gp::save_dataset(gen_out, noised);
      } else if (gen_split == "train") {
        gp::save_dataset(gen_out, d.splits.train);
      } else if (gen_split == "val") {
        gp::save_dataset(gen_out, d.splits.val);
      } else if (gen_split == "test") {
        gp::save_dataset(gen_out, d.splits.test);
      } else if (gen_split == "test_id") {
        gp::save_dataset(gen_out, d.test_id);
      } else {
        throw gp::ConfigError("unknown split '" + gen_split + "'");
      }
      return kExitOk;
    }
    if (*tr) {
      gp::ExperimentConfig cfg = experiment_from(tr_config, tr_recipe);
      if (!tr_seeds.empty()) cfg.seeds = tr_seeds;
      try {
        cfg.validate();
      } catch (const gp::InvalidSpec& e) {
        throw gp::ConfigError(e.what());
      }
      const std::string out = tr_out.empty() ? "runs/" + cfg.name : tr_out;
      const auto res = gp::run_experiment(cfg, out, tr_workers);
      gp::write_summary_csv(std::cout, res.summary);
      if (!res.best_over_grid.empty()) {
        std::cout << "\n# best over lr x batch (by mean validation selector metric)\n";
        gp::write_summary_csv(std::cout, res.best_over_grid);
      }
      std::cerr << "wrote " << out << "\n";
      return kExitOk;
    }
    if (*ev) {
      json j = read_json_file(ev_params);
      if (j.contains("params")) j = j.at("params");
      const gp::ModelParams params = gp::params_from_json(j);
      const gp::LabeledDataset data = gp::load_dataset(ev_data, ev_dc);
      std::cout << gp::to_json(gp::evaluate(params, data)).dump(2) << "\n";
      return kExitOk;
    }
    if (*sw) {
      gp::SweepConfig cfg = sweep_from(sw_config, sw_recipe);
      if (!sw_seeds.empty()) cfg.seeds = sw_seeds;
      const std::string out = sw_out.empty() ? "runs/" + cfg.name : sw_out;
      const auto res = gp::run_sweep(cfg, out, sw_workers);
      gp::write_pareto_csv(std::cout, res.front);
      std::cerr << "wrote " << out << " (" << res.rows.size() << " cells, " << res.front.size() << " on the front)\n";
      return kExitOk;
    }
    if (*pa) {
      std::ifstream in(pa_in);
      if (!in) throw gp::ConfigError("cannot open '" + pa_in + "'");
      const auto front = gp::pareto_front(gp::read_pareto_csv(in));
      std::ostringstream csv;
      gp::write_pareto_csv(csv, front);
      if (pa_out.empty())
        std::cout << csv.str();
      else
        gp::write_file_atomic(pa_out, csv.str());
      if (!pa_dat.empty()) {
        std::ostringstream dat;
        gp::write_pareto_dat(dat, front);
        gp::write_file_atomic(pa_dat, dat.str());
      }
      return kExitOk;
    }
    if (*bd) {
      bd_eps_set = eps_opt->count() > 0;
      json out;
      out["inputs"] = {{"gamma", bin.gamma}, {"sigma_spur", bin.sigma_spur}, {"eta", bin.eta}, {"tau", bin.tau},
                       {"lam", bin.lam},     {"d_c", bin.d_c},               {"d_s", bin.d_s}};
      out["argument"] = gp::worst_group_error_bound_argument(bin);
      out["worst_group_error_bound"] = gp::worst_group_error_bound(bin);
      if (bd_eps_set) {
        out["inputs"]["eps_trans"] = bin.eps_trans;
        const auto cm = gp::transfer_core_mass_lower_bound(bin);
        out["core_mass_lower_bound"] = cm.value;
        out["core_mass_bound_vacuous"] = cm.vacuous;
      }
      std::cout << std::setprecision(17) << out.dump(2) << "\n";
      return kExitOk;
    }
    if (*gc) {
      const auto report = gp::run_gradient_checks(gc_trials, gc_seed, gc_h, gc_tol);
      std::cout << report.to_json().dump(2) << "\n";
      return report.all_pass() ? kExitOk : kExitRuntime;
    }
  } catch (const gp::Diverged& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const gp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const gp::InvalidSpec& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const gp::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
