#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grouprobe/objectives.hpp"

namespace grouprobe {

// Standard normal CDF through erfc, accurate in both tails.
double normal_cdf(double x);
// Inverse CDF by bisection; p must lie in (0, 1). Absolute tolerance 1e-12 or
// better on the returned abscissa.
double normal_quantile(double p);

struct BayesWeightInputs {
  double sigma2_i = 0.6;
  double mu2_pos = 1.0;
  double mu2_neg = 1.0;
  double sigma2_noise = 1.0;

  void validate() const;
};

// Minimiser of E[(x - w x~)^2] for x~ = x + noise under the balanced
// two-component mixture: m / (m + sigma2_noise), m = sigma2 + (mu2_pos + mu2_neg)/2.
double bayes_weight(const BayesWeightInputs& in);

// Monte-Carlo estimate sum(x x~) / sum(x~^2) with y uniform on {-1, +1},
// x | y ~ N(mu_y, sigma2_i), noise ~ N(0, sigma2_noise). samples >= 1e4.
double numeric_bayes_weight(const BayesWeightInputs& in, Index samples, std::uint64_t seed);

// Central differences (L(t + h e_k) - L(t - h e_k)) / 2h per coordinate.
Vec finite_diff_grad(const std::function<double(const Vec&)>& loss, const Vec& theta, double h = 1e-5);

// Parameter vector [a; w_end; vec(W_aux)] (column-major) and back. The
// constraint settings of `like` are copied through.
Vec flatten(const ModelParams& params);
Vec flatten(const LossEval& grads);
ModelParams unflatten(const Vec& theta, const ModelParams& like);

struct GradCheckCase {
  std::string loss;
  Index trial = 0;
  double rel_error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double tolerance = 1e-5;

  bool all_pass() const;
  double max_rel_error(const std::string& loss) const;
  nlohmann::json to_json() const;
};

// rel = ||g - g_fd||_2 / max(||g||_2, ||g_fd||_2, 1e-8).
double relative_error(const Vec& analytic, const Vec& numeric);

// For each loss (end, weighted end, recon, activation L1, multitask) draws
// `trials` random parameter/batch instances and compares the closed-form
// gradient with central differences. a is drawn away from zero so no L1
// kink lies within h of the evaluation point.
GradCheckReport run_gradient_checks(Index trials, std::uint64_t seed, double h = 1e-5,
                                    double tolerance = 1e-5);

struct BoundInputs {
  double gamma = 1.0;
  double sigma_spur = 1.0;
  double eta = 1.0;
  double tau = 0.1;
  double lam = 0.1;
  Index d_c = 1;
  Index d_s = 1;
  double eps_trans = 0.1;
};

// -(eta / (gamma sigma)) sqrt(gamma^2 + (d_c tau + d_s lam)(d_c tau + d_s lam + 2 gamma)).
double worst_group_error_bound_argument(const BoundInputs& in);
// Phi of the argument above, never below the smallest positive double.
double worst_group_error_bound(const BoundInputs& in);

struct CoreMassBound {
  double value = 0.0;
  bool vacuous = false;
};

// (sqrt(sigma_spur^2 eta^2 Phi^-1(eps)^2 + gamma^2) - d_s tau) / (d_c - d_s).
CoreMassBound transfer_core_mass_lower_bound(const BoundInputs& in);

}  // namespace grouprobe
