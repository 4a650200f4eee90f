#include "grouprobe/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace grouprobe {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidInput("normal_quantile: p must lie in (0, 1)");
  double lo = -40.0;
  double hi = 40.0;
  // Stop when the bracket no longer shrinks in floating point.
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (normal_cdf(mid) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

void BayesWeightInputs::validate() const {
  if (!(sigma2_i >= 0) || !(mu2_pos >= 0) || !(mu2_neg >= 0) || !(sigma2_noise >= 0))
    throw InvalidInput("bayes weight inputs must be non-negative");
}

double bayes_weight(const BayesWeightInputs& in) {
  in.validate();
  const double m = in.sigma2_i + 0.5 * (in.mu2_pos + in.mu2_neg);
  const double denom = m + in.sigma2_noise;
  if (!(denom > 0)) throw DegenerateInput("bayes_weight: zero denominator");
  return m / denom;
}

double numeric_bayes_weight(const BayesWeightInputs& in, Index samples, std::uint64_t seed) {
  in.validate();
  if (samples < 10000) throw InvalidInput("numeric_bayes_weight: need at least 1e4 samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  const double mu_pos = std::sqrt(in.mu2_pos);
  const double mu_neg = -std::sqrt(in.mu2_neg);
  const double sd = std::sqrt(in.sigma2_i);
  const double sd_noise = std::sqrt(in.sigma2_noise);
  double cross = 0.0;
  double energy = 0.0;
  for (Index k = 0; k < samples; ++k) {
    const double x = (coin(rng) ? mu_pos : mu_neg) + sd * normal(rng);
    const double xt = x + sd_noise * normal(rng);
    cross += x * xt;
    energy += xt * xt;
  }
  if (!(energy > 0)) throw DegenerateInput("numeric_bayes_weight: all noised samples are zero");
  return cross / energy;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& loss, const Vec& theta, double h) {
  if (!(h > 0)) throw InvalidInput("finite_diff_grad: h must be > 0");
  Vec g(theta.size());
  Vec t = theta;
  for (Index k = 0; k < theta.size(); ++k) {
    t[k] = theta[k] + h;
    const double up = loss(t);
    t[k] = theta[k] - h;
    const double down = loss(t);
    t[k] = theta[k];
    if (!std::isfinite(up) || !std::isfinite(down)) throw DegenerateInput("finite_diff_grad: non-finite loss");
    g[k] = (up - down) / (2 * h);
  }
  return g;
}

Vec flatten(const ModelParams& params) {
  const Index d = params.dim();
  Vec out(2 * d + d * d);
  out << params.a, params.w_end, params.W_aux.reshaped();
  return out;
}

Vec flatten(const LossEval& grads) {
  const Index d = grads.grad_a.size();
  Vec out(2 * d + d * d);
  out << grads.grad_a, grads.grad_w_end, grads.grad_W_aux.reshaped();
  return out;
}

ModelParams unflatten(const Vec& theta, const ModelParams& like) {
  const Index d = like.dim();
  if (theta.size() != 2 * d + d * d) throw ShapeError("unflatten: length does not match model");
  ModelParams p = like;
  p.a = theta.segment(0, d);
  p.w_end = theta.segment(d, d);
  p.W_aux = theta.segment(2 * d, d * d).reshaped(d, d);
  return p;
}

bool GradCheckReport::all_pass() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.pass; });
}

double GradCheckReport::max_rel_error(const std::string& loss) const {
  double m = 0.0;
  for (const auto& c : cases)
    if (c.loss == loss) m = std::max(m, c.rel_error);
  return m;
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json by_loss = nlohmann::json::object();
  for (const auto& c : cases) {
    auto& e = by_loss[c.loss];
    if (e.is_null()) e = {{"trials", 0}, {"passed", 0}, {"max_rel_error", 0.0}};
    e["trials"] = e["trials"].get<Index>() + 1;
    e["passed"] = e["passed"].get<Index>() + (c.pass ? 1 : 0);
    e["max_rel_error"] = std::max(e["max_rel_error"].get<double>(), c.rel_error);
  }
  return {{"tolerance", tolerance}, {"all_pass", all_pass()}, {"losses", by_loss}};
}

double relative_error(const Vec& analytic, const Vec& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

namespace {

struct Instance {
  ModelParams params;
  LabeledDataset end;
  AuxDataset aux;
  Vec weights;
};

Instance random_instance(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<Index> dim(2, 6);
  std::uniform_int_distribution<Index> rows(3, 12);
  std::uniform_real_distribution<double> mag(0.1, 1.5);
  std::uniform_real_distribution<double> weight(0.2, 3.0);
  std::bernoulli_distribution coin(0.5);

  Instance in;
  const Index d = dim(rng);
  const Index B = rows(rng);
  in.params.a.resize(d);
  for (Index j = 0; j < d; ++j) in.params.a[j] = (coin(rng) ? 1.0 : -1.0) * mag(rng);
  in.params.w_end = Vec::NullaryExpr(d, [&] { return normal(rng); });
  in.params.W_aux = Mat::NullaryExpr(d, d, [&] { return normal(rng) / std::sqrt(double(d)); });

  in.end.features = Mat::NullaryExpr(B, d, [&] { return normal(rng); });
  in.end.labels.resize(B);
  in.end.spurious_attrs.resize(B);
  for (Index i = 0; i < B; ++i) {
    in.end.labels[i] = coin(rng) ? 1 : -1;
    in.end.spurious_attrs[i] = coin(rng) ? 1 : -1;
  }
  in.end.d_c = 1;
  in.end.d_s = d - 1;
  in.aux.targets = Mat::NullaryExpr(B, d, [&] { return normal(rng); });
  in.aux.noised = in.aux.targets + Mat::NullaryExpr(B, d, [&] { return normal(rng); });
  in.weights = Vec::NullaryExpr(B, [&] { return weight(rng); });
  return in;
}

}  // namespace

GradCheckReport run_gradient_checks(Index trials, std::uint64_t seed, double h, double tolerance) {
  if (trials < 1) throw InvalidInput("run_gradient_checks: trials must be >= 1");
  GradCheckReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  using Eval = std::function<LossEval(const ModelParams&, const Instance&)>;
  const std::vector<std::pair<std::string, Eval>> losses = {
      {"end_loss", [](const ModelParams& p, const Instance& in) { return end_loss(p, in.end, 0.7); }},
      {"end_loss_weighted",
       [](const ModelParams& p, const Instance& in) { return end_loss(p, in.end, 0.3, &in.weights); }},
      {"recon_loss", [](const ModelParams& p, const Instance& in) { return recon_loss(p, in.aux); }},
      {"activation_l1", [](const ModelParams& p, const Instance& in) { return activation_l1(p, in.end); }},
      {"multitask_loss",
       [](const ModelParams& p, const Instance& in) {
         return multitask_loss(p, in.end, in.aux, LossWeights{1.7, 0.4, 0.5});
       }},
  };

  for (const auto& [name, eval] : losses) {
    for (Index t = 0; t < trials; ++t) {
      const Instance in = random_instance(rng);
      const Vec analytic = flatten(eval(in.params, in));
      const Vec numeric = finite_diff_grad(
          [&](const Vec& theta) { return eval(unflatten(theta, in.params), in).value; }, flatten(in.params), h);
      GradCheckCase c;
      c.loss = name;
      c.trial = t;
      c.rel_error = relative_error(analytic, numeric);
      c.pass = c.rel_error <= tolerance;
      report.cases.push_back(c);
    }
  }
  return report;
}

namespace {

void check_bound_inputs(const BoundInputs& in) {
  if (!(in.gamma > 0)) throw InvalidInput("bound: gamma must be > 0");
  if (!(in.sigma_spur > 0)) throw InvalidInput("bound: sigma_spur must be > 0");
  if (!(in.eta > 0)) throw InvalidInput("bound: eta must be > 0");
  if (!(in.tau >= 0) || !(in.lam >= 0)) throw InvalidInput("bound: tau and lam must be >= 0");
  if (in.d_c < 0 || in.d_s < 0) throw InvalidInput("bound: dimension counts must be >= 0");
}

}  // namespace

double worst_group_error_bound_argument(const BoundInputs& in) {
  check_bound_inputs(in);
  const double m = static_cast<double>(in.d_c) * in.tau + static_cast<double>(in.d_s) * in.lam;
  return -(in.eta / (in.gamma * in.sigma_spur)) * std::sqrt(in.gamma * in.gamma + m * (m + 2 * in.gamma));
}

double worst_group_error_bound(const BoundInputs& in) {
  // Phi of a finite argument is positive; an underflowed tail is rounded up
  // so the result stays a valid upper bound.
  return std::max(normal_cdf(worst_group_error_bound_argument(in)), std::numeric_limits<double>::denorm_min());
}

CoreMassBound transfer_core_mass_lower_bound(const BoundInputs& in) {
  check_bound_inputs(in);
  if (in.d_c <= in.d_s) throw InvalidInput("core mass bound needs d_c > d_s");
  if (!(in.eps_trans > 0 && in.eps_trans < 0.5)) throw InvalidInput("core mass bound needs eps_trans in (0, 0.5)");
  const double z = normal_quantile(in.eps_trans);
  const double root = std::sqrt(in.sigma_spur * in.sigma_spur * in.eta * in.eta * z * z + in.gamma * in.gamma);
  CoreMassBound b;
  b.value = (root - static_cast<double>(in.d_s) * in.tau) / static_cast<double>(in.d_c - in.d_s);
  b.vacuous = b.value < 0;
  return b;
}

}  // namespace grouprobe
