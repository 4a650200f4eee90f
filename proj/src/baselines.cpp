#include "grouprobe/baselines.hpp"

#include <cmath>

namespace grouprobe {

namespace {

constexpr std::uint64_t kInitStream = 0x1A17;
constexpr std::uint64_t kJttStage2Stream = 0x277;

nlohmann::json json_number(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

nlohmann::json echo(const FitConfig& cfg) {
  nlohmann::json j;
  j["learning_rate"] = cfg.optim.learning_rate;
  j["batch_size"] = cfg.optim.batch_size;
  j["epochs"] = cfg.optim.epochs;
  j["patience"] = cfg.optim.patience;
  j["momentum"] = cfg.optim.momentum;
  j["seed"] = cfg.optim.seed;
  j["alpha_aux"] = cfg.weights.alpha_aux;
  j["alpha_reg"] = cfg.weights.alpha_reg;
  j["lambda_l2"] = cfg.weights.lambda_l2;
  j["tau"] = json_number(cfg.tau);
  j["strict_boundary"] = cfg.strict_boundary;
  j["fro_radius"] = cfg.fro_radius;
  j["w_aux_init"] = to_string(cfg.w_aux_init);
  j["selector"] = to_string(cfg.selector);
  return j;
}

void check_splits(const Splits& data) {
  if (data.train.empty()) throw InvalidInput("empty training set");
  data.train.check_consistent();
  data.val.check_consistent();
  if (data.val.dim() != data.train.dim()) throw ShapeError("validation width does not match training data");
  if (!data.test.empty() && data.test.dim() != data.train.dim())
    throw ShapeError("test width does not match training data");
}

FitResult finish(std::string method, const FitConfig& cfg, const Splits& data, TrainResult tr) {
  FitResult r;
  r.method = std::move(method);
  r.config = echo(cfg);
  r.params = std::move(tr.best);
  r.last = std::move(tr.last);
  r.selected_epoch = tr.best_epoch;
  r.trace = std::move(tr.trace);
  r.val = r.trace.epochs.at(static_cast<std::size_t>(r.selected_epoch)).val;
  if (!data.test.empty()) r.test = evaluate(r.params, data.test);
  return r;
}

}  // namespace

void JttConfig::validate() const {
  if (id_epochs < 1) throw InvalidSpec("jtt.id_epochs must be >= 1");
  if (!(upweight >= 1)) throw InvalidSpec("jtt.upweight must be >= 1");
}

void GroupDroConfig::validate() const {
  if (!(group_step >= 0) || !std::isfinite(group_step)) throw InvalidSpec("group_dro.group_step must be >= 0");
}

double JttStats::minority_fraction() const {
  if (error_set_size == 0) return 0.0;
  return static_cast<double>(error_set_groups[2] + error_set_groups[3]) /
         static_cast<double>(error_set_size);
}

ModelParams initial_params(const FitConfig& cfg, Index d, std::uint64_t seed) {
  return init_params(d, cfg.tau, derive_seed(seed, kInitStream), cfg.fro_radius, cfg.strict_boundary,
                     cfg.w_aux_init);
}

FitResult train_erm(const Splits& data, const FitConfig& cfg) {
  check_splits(data);
  LossWeights w = cfg.weights;
  w.alpha_aux = 0;
  w.alpha_reg = 0;
  auto tr = train(initial_params(cfg, data.train.dim(), cfg.optim.seed), &data.train, nullptr, w,
                  cfg.optim, data.val, cfg.selector);
  FitResult r = finish("erm", cfg, data, std::move(tr));
  r.config["alpha_aux"] = 0.0;
  r.config["alpha_reg"] = 0.0;
  return r;
}

Vec jtt_weights(const std::vector<bool>& in_error_set, double upweight) {
  if (in_error_set.empty()) throw InvalidInput("jtt_weights: empty training set");
  Vec w(static_cast<Index>(in_error_set.size()));
  for (std::size_t i = 0; i < in_error_set.size(); ++i) w[static_cast<Index>(i)] = in_error_set[i] ? upweight : 1.0;
  return w / w.mean();
}

FitResult train_jtt(const Splits& data, const FitConfig& cfg, const JttConfig& jtt) {
  check_splits(data);
  jtt.validate();
  const double lambda = cfg.weights.lambda_l2;

  OptimConfig stage1 = cfg.optim;
  stage1.epochs = jtt.id_epochs;
  stage1.patience = 0;
  stage1.keep_snapshots = false;
  auto s1 = train(initial_params(cfg, data.train.dim(), cfg.optim.seed), &data.train, nullptr,
                  LossWeights{0, 0, lambda}, stage1, data.val, cfg.selector);

  JttStats stats;
  std::vector<bool> errors(static_cast<std::size_t>(data.train.size()));
  const Vec z = predict_end_batch(s1.last, data.train.features);
  for (Index i = 0; i < data.train.size(); ++i) {
    const bool wrong = predicted_label(z[i]) != data.train.labels[i];
    errors[static_cast<std::size_t>(i)] = wrong;
    if (!wrong) continue;
    ++stats.error_set_size;
    if (data.train.has_groups()) ++stats.error_set_groups[data.train.group_ids[i]];
  }
  stats.fallback = stats.error_set_size == 0;
  const Vec weights = jtt_weights(errors, stats.fallback ? 1.0 : jtt.upweight);

  OptimConfig stage2 = cfg.optim;
  stage2.seed = derive_seed(cfg.optim.seed, kJttStage2Stream);
  Objective objective = [&weights, lambda](const ModelParams& p, const Batch& b) {
    Vec bw(static_cast<Index>(b.rows->end_rows.size()));
    for (std::size_t i = 0; i < b.rows->end_rows.size(); ++i) bw[static_cast<Index>(i)] = weights[b.rows->end_rows[i]];
    return end_loss(p, b.end, lambda, &bw);
  };
  auto s2 = train(initial_params(cfg, data.train.dim(), stage2.seed), TrainData{&data.train, nullptr},
                  objective, stage2, data.val, cfg.selector);
  FitResult r = finish("jtt", cfg, data, std::move(s2));
  r.config["id_epochs"] = jtt.id_epochs;
  r.config["upweight"] = jtt.upweight;
  r.jtt = stats;
  return r;
}

std::array<double, kNumGroups> dro_update(const std::array<double, kNumGroups>& q,
                                          const std::array<double, kNumGroups>& group_loss,
                                          const std::array<bool, kNumGroups>& present,
                                          double step) {
  // Shift by the largest exponent so exp never overflows.
  double shift = -kInf;
  for (int g = 0; g < kNumGroups; ++g)
    if (present[g]) shift = std::max(shift, step * group_loss[g]);
  if (!std::isfinite(shift)) return q;
  std::array<double, kNumGroups> out{};
  double total = 0.0;
  for (int g = 0; g < kNumGroups; ++g) {
    out[g] = present[g] ? q[g] * std::exp(step * group_loss[g] - shift) : q[g] * std::exp(-shift);
    total += out[g];
  }
  for (auto& v : out) v /= total;
  return out;
}

FitResult train_group_dro(const Splits& data, const FitConfig& cfg, const GroupDroConfig& dro) {
  check_splits(data);
  dro.validate();
  if (!data.train.has_groups()) throw InvalidInput("groupDRO needs group ids on the training data");
  const auto counts = data.train.group_counts();
  for (int g = 0; g < kNumGroups; ++g)
    if (counts[g] == 0) throw InvalidInput("groupDRO: group " + std::to_string(g) + " absent from training data");

  const double lambda = cfg.weights.lambda_l2;
  DroStats stats;
  std::array<double, kNumGroups> q;
  q.fill(1.0 / kNumGroups);

  Objective objective = [&](const ModelParams& p, const Batch& b) {
    const Vec losses = end_losses_per_example(p, b.end);
    std::array<double, kNumGroups> sum{};
    std::array<Index, kNumGroups> n{};
    for (Index i = 0; i < losses.size(); ++i) {
      sum[b.end.group_ids[i]] += losses[i];
      ++n[b.end.group_ids[i]];
    }
    DroStep step;
    step.q_before = q;
    for (int g = 0; g < kNumGroups; ++g) {
      step.present[g] = n[g] > 0;
      step.group_loss[g] = n[g] > 0 ? sum[g] / static_cast<double>(n[g]) : 0.0;
    }
    q = dro_update(q, step.group_loss, step.present, dro.group_step);
    step.q_after = q;
    if (dro.record_steps) stats.steps.push_back(step);

    // Descend sum over present groups of q_g (renormalised) * mean loss_g,
    // expressed as per-example weights of the mean-normalised BCE.
    double present_mass = 0.0;
    for (int g = 0; g < kNumGroups; ++g)
      if (step.present[g]) present_mass += q[g];
    const double B = static_cast<double>(losses.size());
    Vec ew(losses.size());
    for (Index i = 0; i < losses.size(); ++i) {
      const int g = b.end.group_ids[i];
      ew[i] = B * q[g] / (present_mass * static_cast<double>(n[g]));
    }
    return end_loss(p, b.end, lambda, &ew);
  };

  // Wrap the epoch loop so the end-of-epoch q can be logged.
  OptimConfig oc = cfg.optim;
  auto tr = train(initial_params(cfg, data.train.dim(), cfg.optim.seed), TrainData{&data.train, nullptr},
                  [&, steps_per_epoch = BatchSchedule(data.train.size(), 0, oc.batch_size, 0).steps_per_epoch(),
                   counter = Index{0}](const ModelParams& p, const Batch& b) mutable {
                    LossEval e = objective(p, b);
                    if (++counter % steps_per_epoch == 0) stats.q_per_epoch.push_back(q);
                    return e;
                  },
                  oc, data.val, cfg.selector);
  stats.final_q = q;
  FitResult r = finish("group_dro", cfg, data, std::move(tr));
  r.config["group_step"] = dro.group_step;
  r.dro = std::move(stats);
  return r;
}

FitResult train_reg_mtl(const Splits& data, const FitConfig& cfg) {
  check_splits(data);
  if (data.aux.empty()) throw InvalidInput("reg_mtl needs a nonempty auxiliary dataset");
  if (data.aux.dim() != data.train.dim()) throw ShapeError("aux width does not match training data");
  auto tr = train(initial_params(cfg, data.train.dim(), cfg.optim.seed), &data.train, &data.aux,
                  cfg.weights, cfg.optim, data.val, cfg.selector);
  return finish("reg_mtl", cfg, data, std::move(tr));
}

FitResult train_aux_only(const Splits& data, const FitConfig& cfg) {
  if (data.aux.empty()) throw InvalidInput("aux_only needs a nonempty auxiliary dataset");
  if (data.val.empty()) throw InvalidInput("aux_only: empty validation set");
  auto tr = train(initial_params(cfg, data.aux.dim(), cfg.optim.seed), TrainData{nullptr, &data.aux},
                  make_standard_objective(cfg.weights), cfg.optim, data.val, cfg.selector);
  tr.best = tr.last;
  tr.best_epoch = static_cast<Index>(tr.trace.epochs.size()) - 1;
  FitResult r = finish("aux_only", cfg, data, std::move(tr));
  return r;
}

namespace {

nlohmann::json group_array(const std::array<double, kNumGroups>& v) {
  nlohmann::json j = nlohmann::json::array();
  for (double x : v) j.push_back(json_number(x));
  return j;
}

}  // namespace

nlohmann::json to_json(const FitResult& r, bool include_trace) {
  nlohmann::json j;
  j["method"] = r.method;
  j["config"] = r.config;
  j["selected_epoch"] = r.selected_epoch;
  j["stop_epoch"] = r.trace.stop_epoch;
  j["val"] = to_json(r.val);
  j["test"] = r.test ? to_json(*r.test) : nlohmann::json(nullptr);
  j["params"] = to_json(r.params);
  if (r.jtt) {
    nlohmann::json s;
    s["error_set_size"] = r.jtt->error_set_size;
    s["error_set_groups"] = r.jtt->error_set_groups;
    s["minority_fraction"] = r.jtt->minority_fraction();
    s["fallback"] = r.jtt->fallback;
    j["jtt"] = s;
  }
  if (r.dro) {
    nlohmann::json s;
    s["final_q"] = group_array(r.dro->final_q);
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& q : r.dro->q_per_epoch) traj.push_back(group_array(q));
    s["q_per_epoch"] = traj;
    j["group_dro"] = s;
  }
  if (include_trace) {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& e : r.trace.epochs)
      t.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", to_json(e.val)}});
    j["trace"] = t;
  }
  return j;
}

}  // namespace grouprobe
