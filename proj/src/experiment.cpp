#include "grouprobe/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace grouprobe {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small helpers

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Short form for arm names: 0.01 -> "0.01", 10 -> "10".
std::string short_num(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

json number_or_special(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

json tau_json(double tau) { return std::isinf(tau) ? json(nullptr) : json(tau); }

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

// Strict reader over one JSON object: every key must be consumed, and type
// errors name the full key path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* raw(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  double number(const std::string& key, double def) {
    const json* v = raw(key);
    if (!v) return def;
    if (!v->is_number()) throw ConfigError(at(key) + ": expected a number");
    return v->get<double>();
  }

  // null or "inf" mean +infinity.
  double radius(const std::string& key, double def) {
    const json* v = raw(key);
    if (!v) return def;
    if (v->is_null() || (v->is_string() && v->get<std::string>() == "inf")) return kInf;
    if (!v->is_number()) throw ConfigError(at(key) + ": expected a number, null or \"inf\"");
    return v->get<double>();
  }

  Index integer(const std::string& key, Index def) {
    const json* v = raw(key);
    if (!v) return def;
    if (!v->is_number_integer()) throw ConfigError(at(key) + ": expected an integer");
    return v->get<Index>();
  }

  bool boolean(const std::string& key, bool def) {
    const json* v = raw(key);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(at(key) + ": expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    const json* v = raw(key);
    if (!v) return def;
    if (!v->is_string()) throw ConfigError(at(key) + ": expected a string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const json* v = raw(key);
    if (!v) return {};
    if (!v->is_array() || v->empty()) throw ConfigError(at(key) + ": expected a nonempty array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& e = (*v)[i];
      if (e.is_null() || (e.is_string() && e.get<std::string>() == "inf"))
        out.push_back(kInf);
      else if (e.is_number())
        out.push_back(e.get<double>());
      else
        throw ConfigError(at(key) + "[" + std::to_string(i) + "]: expected a number");
    }
    return out;
  }

  std::vector<Index> integers(const std::string& key) {
    const json* v = raw(key);
    if (!v) return {};
    if (!v->is_array() || v->empty()) throw ConfigError(at(key) + ": expected a nonempty array");
    std::vector<Index> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number_integer())
        throw ConfigError(at(key) + "[" + std::to_string(i) + "]: expected an integer");
      out.push_back((*v)[i].get<Index>());
    }
    return out;
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(at(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void wrap_invalid(const std::string& where, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

DataConfig parse_data(const json& j, const std::string& path) {
  Reader r(j, path);
  DataConfig d;
  GroupDataSpec& s = d.spec;
  s.d_c = r.integer("d_c", s.d_c);
  s.d_s = r.integer("d_s", s.d_s);
  s.sigma2_core = r.number("sigma2_core", s.sigma2_core);
  s.sigma2_spur = r.number("sigma2_spur", s.sigma2_spur);
  s.n_maj = r.integer("n_maj", s.n_maj);
  s.n_min = r.integer("n_min", s.n_min);
  s.sigma2_noise = r.number("sigma2_noise", s.sigma2_noise);
  d.n_val = r.integer("n_val", d.n_val);
  d.val_balanced = r.boolean("val_balanced", d.val_balanced);
  d.test_per_group = r.integer("test_per_group", d.test_per_group);
  d.n_test_id = r.integer("n_test_id", d.n_test_id);
  d.aux_fresh_draw = r.boolean("aux_fresh_draw", d.aux_fresh_draw);
  r.finish();
  wrap_invalid(path, [&] { d.validate(); });
  return d;
}

json data_json(const DataConfig& d) {
  return {{"d_c", d.spec.d_c},
          {"d_s", d.spec.d_s},
          {"sigma2_core", d.spec.sigma2_core},
          {"sigma2_spur", d.spec.sigma2_spur},
          {"n_maj", d.spec.n_maj},
          {"n_min", d.spec.n_min},
          {"sigma2_noise", d.spec.sigma2_noise},
          {"n_val", d.n_val},
          {"val_balanced", d.val_balanced},
          {"test_per_group", d.test_per_group},
          {"n_test_id", d.n_test_id},
          {"aux_fresh_draw", d.aux_fresh_draw}};
}

struct Defaults {
  OptimConfig optim;
  SelectionStrategy selector = SelectionStrategy::NoGp;
};

void read_optim_keys(Reader& r, OptimConfig& o) {
  o.learning_rate = r.number("learning_rate", o.learning_rate);
  o.batch_size = r.integer("batch_size", o.batch_size);
  o.epochs = r.integer("epochs", o.epochs);
  o.patience = r.integer("patience", o.patience);
  o.momentum = r.number("momentum", o.momentum);
}

Defaults parse_defaults(Reader& top) {
  Defaults d;
  d.optim.learning_rate = 1e-2;
  d.optim.batch_size = 64;
  d.optim.epochs = 500;
  if (const json* o = top.raw("optim")) {
    Reader r(*o, top.at("optim"));
    read_optim_keys(r, d.optim);
    r.finish();
  }
  if (const json* s = top.raw("selector")) {
    if (!s->is_string()) throw ConfigError(top.at("selector") + ": expected a string");
    wrap_invalid(top.at("selector"), [&] { d.selector = selection_from_string(s->get<std::string>()); });
  }
  return d;
}

void parse_arm_fields(Reader& r, ArmConfig& arm, const Defaults& def, bool method_required) {
  const std::string method = r.string("method", method_required ? "" : to_string(arm.method));
  if (method.empty()) throw ConfigError(r.at("method") + ": required");
  wrap_invalid(r.at("method"), [&] { arm.method = method_from_string(method); });
  arm.name = r.string("name", arm.name.empty() ? method : arm.name);
  if (!valid_name(arm.name)) throw ConfigError(r.at("name") + ": use letters, digits, '_', '-', '.'");

  FitConfig& f = arm.fit;
  f.optim = def.optim;
  f.selector = def.selector;
  read_optim_keys(r, f.optim);
  f.tau = r.radius("tau", f.tau);
  f.weights.alpha_aux = r.number("alpha_aux", f.weights.alpha_aux);
  f.weights.alpha_reg = r.number("alpha_reg", f.weights.alpha_reg);
  f.weights.lambda_l2 = r.number("lambda_l2", f.weights.lambda_l2);
  f.strict_boundary = r.boolean("strict_boundary", f.strict_boundary);
  f.fro_radius = r.number("fro_radius", f.fro_radius);
  if (r.has("w_aux_init")) {
    const std::string w = r.string("w_aux_init", "");
    wrap_invalid(r.at("w_aux_init"), [&] { f.w_aux_init = waux_init_from_string(w); });
  }
  if (r.has("selector")) {
    const std::string s = r.string("selector", "");
    wrap_invalid(r.at("selector"), [&] { f.selector = selection_from_string(s); });
  }

  arm.jtt.id_epochs = std::max<Index>(1, f.optim.epochs / 10);
  if (const json* j = r.raw("jtt")) {
    Reader jr(*j, r.at("jtt"));
    arm.jtt.id_epochs = jr.integer("id_epochs", arm.jtt.id_epochs);
    arm.jtt.upweight = jr.number("upweight", arm.jtt.upweight);
    jr.finish();
  }
  if (const json* j = r.raw("group_dro")) {
    Reader dr(*j, r.at("group_dro"));
    arm.dro.group_step = dr.number("group_step", arm.dro.group_step);
    dr.finish();
  }

  wrap_invalid(r.where(), [&] {
    f.optim.validate();
    f.weights.validate();
    if (!(f.tau > 0)) throw InvalidSpec("tau must be > 0");
    if (f.strict_boundary && std::isinf(f.tau)) throw InvalidSpec("strict_boundary needs a finite tau");
    if (!(f.fro_radius > 0)) throw InvalidSpec("fro_radius must be > 0");
    arm.jtt.validate();
    arm.dro.validate();
  });
}

json arm_json(const ArmConfig& a) {
  json j = {{"name", a.name},
            {"method", to_string(a.method)},
            {"tau", tau_json(a.fit.tau)},
            {"alpha_aux", a.fit.weights.alpha_aux},
            {"alpha_reg", a.fit.weights.alpha_reg},
            {"lambda_l2", a.fit.weights.lambda_l2},
            {"strict_boundary", a.fit.strict_boundary},
            {"fro_radius", a.fit.fro_radius},
            {"w_aux_init", to_string(a.fit.w_aux_init)},
            {"selector", to_string(a.fit.selector)},
            {"learning_rate", a.fit.optim.learning_rate},
            {"batch_size", a.fit.optim.batch_size},
            {"epochs", a.fit.optim.epochs},
            {"patience", a.fit.optim.patience},
            {"momentum", a.fit.optim.momentum}};
  if (a.method == Method::Jtt) j["jtt"] = {{"id_epochs", a.jtt.id_epochs}, {"upweight", a.jtt.upweight}};
  if (a.method == Method::GroupDro) j["group_dro"] = {{"group_step", a.dro.group_step}};
  return j;
}

std::vector<std::uint64_t> parse_seeds(Reader& r) {
  const json* v = r.raw("seeds");
  if (!v) return {0, 1, 2, 3, 4};
  if (!v->is_array() || v->empty()) throw ConfigError(r.at("seeds") + ": expected a nonempty array");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    const json& e = (*v)[i];
    if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0))
      throw ConfigError(r.at("seeds") + "[" + std::to_string(i) + "]: expected a non-negative integer");
    out.push_back(e.get<std::uint64_t>());
  }
  std::set<std::uint64_t> uniq(out.begin(), out.end());
  if (uniq.size() != out.size()) throw ConfigError(r.at("seeds") + ": seeds must be distinct");
  return out;
}

void check_schema(Reader& r, const std::string& expected) {
  const std::string schema = r.string("schema", "");
  if (schema != expected)
    throw ConfigError("schema: expected \"" + expected + "\", got \"" + schema + "\"");
}

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into a line number.
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError("JSON parse error at line " + std::to_string(line) + ": " + e.what());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config types

void DataConfig::validate() const {
  spec.validate();
  if (n_val < 1) throw InvalidSpec("n_val must be >= 1");
  if (val_balanced && (n_val % 4 != 0)) throw InvalidSpec("balanced validation needs n_val divisible by 4");
  if (test_per_group < 1) throw InvalidSpec("test_per_group must be >= 1");
  if (n_test_id < 0) throw InvalidSpec("n_test_id must be >= 0");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Erm: return "erm";
    case Method::Jtt: return "jtt";
    case Method::GroupDro: return "group_dro";
    case Method::RegMtl: return "reg_mtl";
    case Method::AuxOnly: return "aux_only";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "erm") return Method::Erm;
  if (s == "jtt") return Method::Jtt;
  if (s == "group_dro") return Method::GroupDro;
  if (s == "reg_mtl") return Method::RegMtl;
  if (s == "aux_only") return Method::AuxOnly;
  throw InvalidInput("unknown method '" + s + "' (erm, jtt, group_dro, reg_mtl, aux_only)");
}

void ExperimentConfig::validate() const {
  data.validate();
  if (seeds.empty()) throw InvalidSpec("seeds must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw InvalidSpec("seeds must be distinct");
  if (arms.empty()) throw InvalidSpec("at least one arm is required");
  std::set<std::string> names;
  for (const auto& a : arms)
    if (!names.insert(a.name).second) throw InvalidSpec("duplicate arm name '" + a.name + "'");
  if (hp_grid && (hp_grid->learning_rate.empty() || hp_grid->batch_size.empty()))
    throw InvalidSpec("hp_grid axes must be nonempty");
}

ExperimentConfig parse_experiment(const json& j) {
  Reader top(j, "");
  check_schema(top, kExperimentSchema);
  ExperimentConfig cfg;
  cfg.name = top.string("name", cfg.name);
  if (!valid_name(cfg.name)) throw ConfigError("name: use letters, digits, '_', '-', '.'");
  if (const json* d = top.raw("data")) cfg.data = parse_data(*d, "data");
  cfg.seeds = parse_seeds(top);
  const Defaults def = parse_defaults(top);

  if (const json* h = top.raw("hp_grid")) {
    Reader hr(*h, "hp_grid");
    HyperGrid g;
    g.learning_rate = hr.numbers("learning_rate");
    g.batch_size = hr.integers("batch_size");
    hr.finish();
    if (g.learning_rate.empty() || g.batch_size.empty())
      throw ConfigError("hp_grid: learning_rate and batch_size are required");
    cfg.hp_grid = g;
  }

  if (const json* arms = top.raw("arms")) {
    if (!arms->is_array() || arms->empty()) throw ConfigError("arms: expected a nonempty array");
    for (std::size_t i = 0; i < arms->size(); ++i) {
      Reader ar((*arms)[i], "arms[" + std::to_string(i) + "]");
      ArmConfig arm;
      parse_arm_fields(ar, arm, def, true);
      ar.finish();
      cfg.arms.push_back(std::move(arm));
    }
  } else {
    // Single-method shorthand: arm keys at the top level.
    ArmConfig arm;
    parse_arm_fields(top, arm, def, true);
    cfg.arms.push_back(std::move(arm));
  }
  top.finish();
  wrap_invalid("config", [&] { cfg.validate(); });
  return cfg;
}

ExperimentConfig parse_experiment_text(const std::string& text) { return parse_experiment(parse_text(text)); }

ExperimentConfig load_experiment(const std::string& path) { return parse_experiment_text(read_text(path)); }

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["schema"] = kExperimentSchema;
  j["name"] = cfg.name;
  j["data"] = data_json(cfg.data);
  j["seeds"] = cfg.seeds;
  json arms = json::array();
  for (const auto& a : cfg.arms) arms.push_back(arm_json(a));
  j["arms"] = arms;
  if (cfg.hp_grid) j["hp_grid"] = {{"learning_rate", cfg.hp_grid->learning_rate}, {"batch_size", cfg.hp_grid->batch_size}};
  return j;
}

// ---------------------------------------------------------------------------
// Recipes

namespace {

ArmConfig make_arm(const std::string& name, Method method, double tau, double alpha_aux, double lr, Index batch,
                   SelectionStrategy selector) {
  ArmConfig a;
  a.name = name;
  a.method = method;
  a.fit.tau = tau;
  a.fit.weights = LossWeights{alpha_aux, 0.0, 1.0};
  a.fit.optim.learning_rate = lr;
  a.fit.optim.batch_size = batch;
  a.fit.optim.epochs = 500;
  a.fit.optim.patience = 0;
  a.fit.selector = selector;
  a.jtt.id_epochs = 50;
  a.jtt.upweight = 5.0;
  a.dro.group_step = 0.01;
  return a;
}

}  // namespace

std::vector<std::string> experiment_recipe_names() { return {"table2", "fig3", "fig5", "baselines"}; }

ExperimentConfig experiment_recipe(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  const auto no_gp = SelectionStrategy::NoGp;
  const auto val_gp = SelectionStrategy::ValGp;
  if (name == "table2") {
    cfg.arms = {
        make_arm("end_only_tau0.1", Method::Erm, 0.1, 0.0, 1e-2, 64, no_gp),
        make_arm("end_only_tau10", Method::Erm, 10.0, 0.0, 1e-2, 64, no_gp),
        make_arm("reg_mtl_tau0.1", Method::RegMtl, 0.1, 10.0, 1e-2, 64, no_gp),
        make_arm("reg_mtl_tau10", Method::RegMtl, 10.0, 10.0, 1e-2, 64, no_gp),
    };
    cfg.hp_grid = HyperGrid{{1e-2, 1e-3}, {64, 256}};
  } else if (name == "fig3") {
    for (double tau : {0.1, 10.0})
      for (double lr : {1e-2, 1e-3})
        for (Index b : {Index{64}, Index{256}}) {
          ArmConfig a = make_arm("aux_tau" + short_num(tau) + "_lr" + short_num(lr) + "_b" + std::to_string(b),
                                 Method::AuxOnly, tau, 1.0, lr, b, no_gp);
          a.fit.strict_boundary = true;
          cfg.arms.push_back(a);
        }
  } else if (name == "fig5") {
    for (double tau : {0.1, 10.0})
      for (double lr : {1e-2, 1e-3})
        for (Index b : {Index{64}, Index{256}})
          cfg.arms.push_back(make_arm("reg_mtl_tau" + short_num(tau) + "_lr" + short_num(lr) + "_b" + std::to_string(b),
                                      Method::RegMtl, tau, 10.0, lr, b, no_gp));
  } else if (name == "baselines") {
    for (auto sel : {val_gp, no_gp}) {
      const std::string suffix = "_" + to_string(sel);
      cfg.arms.push_back(make_arm("erm" + suffix, Method::Erm, kInf, 0.0, 1e-2, 64, sel));
      cfg.arms.push_back(make_arm("jtt" + suffix, Method::Jtt, kInf, 0.0, 1e-2, 64, sel));
      cfg.arms.push_back(make_arm("group_dro" + suffix, Method::GroupDro, kInf, 0.0, 1e-2, 64, sel));
      cfg.arms.push_back(make_arm("reg_mtl" + suffix, Method::RegMtl, 0.1, 10.0, 1e-2, 64, sel));
    }
  } else {
    throw ConfigError("unknown recipe '" + name + "'");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Data and single runs

LabeledDataset make_in_distribution(const GroupDataSpec& spec, Index n, std::uint64_t seed) {
  if (n < 1) throw InvalidSpec("in-distribution set needs n >= 1");
  const double maj_frac = static_cast<double>(spec.n_maj) / static_cast<double>(spec.n_maj + spec.n_min);
  const Index maj = static_cast<Index>(std::llround(maj_frac * static_cast<double>(n)));
  const Index mn = n - maj;
  const std::array<Index, kNumGroups> counts{(maj + 1) / 2, maj / 2, (mn + 1) / 2, mn / 2};
  return sample_groups(spec, counts, seed);
}

SeedData make_seed_data(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeedData d;
  d.splits.train = sample_group_dataset(cfg.spec, derive_seed(seed, 101));
  d.splits.val = cfg.val_balanced ? make_balanced_test(cfg.spec, cfg.n_val / 4, derive_seed(seed, 102))
                                  : make_in_distribution(cfg.spec, cfg.n_val, derive_seed(seed, 102));
  d.splits.test = make_balanced_test(cfg.spec, cfg.test_per_group, derive_seed(seed, 103));
  if (cfg.n_test_id > 0) d.test_id = make_in_distribution(cfg.spec, cfg.n_test_id, derive_seed(seed, 104));
  const LabeledDataset source =
      cfg.aux_fresh_draw ? sample_group_dataset(cfg.spec, derive_seed(seed, 105)) : d.splits.train;
  d.splits.aux = noise_dataset(source, cfg.spec.sigma2_noise, derive_seed(seed, 106));
  return d;
}

RunRecord run_arm(const ArmConfig& arm, const SeedData& data, std::uint64_t seed, Index d_c, Index d_s) {
  FitConfig cfg = arm.fit;
  cfg.optim.seed = seed;
  RunRecord r;
  r.arm = arm.name;
  r.seed = seed;
  switch (arm.method) {
    case Method::Erm: r.fit = train_erm(data.splits, cfg); break;
    case Method::Jtt: r.fit = train_jtt(data.splits, cfg, arm.jtt); break;
    case Method::GroupDro: r.fit = train_group_dro(data.splits, cfg, arm.dro); break;
    case Method::RegMtl: r.fit = train_reg_mtl(data.splits, cfg); break;
    case Method::AuxOnly: r.fit = train_aux_only(data.splits, cfg); break;
  }
  if (!data.test_id.empty()) r.test_id = evaluate(r.fit.params, data.test_id);
  try {
    r.log_ratio = spur_core_log_ratio(r.fit.params.a, d_c, d_s);
  } catch (const DegenerateInput&) {
    r.log_ratio = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

json to_json(const RunRecord& r) {
  json j = to_json(r.fit);
  j["arm"] = r.arm;
  j["seed"] = r.seed;
  j["test_in_distribution"] = r.test_id ? to_json(*r.test_id) : json(nullptr);
  j["spur_core_log_ratio"] = number_or_special(r.log_ratio);
  // Normal of the learned decision half-space sign((w_end .* a)^T x).
  const Vec fused = r.fit.params.fused();
  j["half_space_normal"] = std::vector<double>(fused.data(), fused.data() + fused.size());
  return j;
}

// ---------------------------------------------------------------------------
// Summaries

Stat mean_std(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() == 1) return s;
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return s;
}

SummaryRow summarize(const ArmConfig& arm, const std::vector<const RunRecord*>& runs) {
  SummaryRow row;
  row.arm = arm.name;
  row.method = to_string(arm.method);
  row.selector = to_string(arm.fit.selector);
  row.tau = arm.fit.tau;
  row.alpha_aux = arm.fit.weights.alpha_aux;
  row.alpha_reg = arm.fit.weights.alpha_reg;
  row.learning_rate = arm.fit.optim.learning_rate;
  row.batch_size = arm.fit.optim.batch_size;
  row.n_seeds = static_cast<Index>(runs.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> ta, tw, ia, iw, lr, vm;
  for (const RunRecord* r : runs) {
    ta.push_back(r->fit.test ? r->fit.test->avg_acc : nan);
    tw.push_back(r->fit.test ? r->fit.test->wg_acc : nan);
    ia.push_back(r->test_id ? r->test_id->avg_acc : nan);
    iw.push_back(r->test_id ? r->test_id->wg_acc : nan);
    lr.push_back(r->log_ratio);
    vm.push_back(selection_metric(r->fit.val, arm.fit.selector));
  }
  row.test_avg = mean_std(ta);
  row.test_wg = mean_std(tw);
  row.id_avg = mean_std(ia);
  row.id_wg = mean_std(iw);
  row.log_ratio = mean_std(lr);
  row.val_metric = mean_std(vm);
  return row;
}

std::string summary_csv_header() {
  return "arm,method,selector,tau,alpha_aux,alpha_reg,learning_rate,batch_size,n_seeds,"
         "test_avg_mean,test_avg_std,test_wg_mean,test_wg_std,id_avg_mean,id_avg_std,"
         "id_wg_mean,id_wg_std,log_ratio_mean,log_ratio_std,val_metric_mean,val_metric_std";
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << summary_csv_header() << '\n';
  for (const auto& r : rows) {
    os << r.arm << ',' << r.method << ',' << r.selector << ',' << fmt(r.tau) << ',' << fmt(r.alpha_aux) << ','
       << fmt(r.alpha_reg) << ',' << fmt(r.learning_rate) << ',' << r.batch_size << ',' << r.n_seeds;
    for (const Stat* s : {&r.test_avg, &r.test_wg, &r.id_avg, &r.id_wg, &r.log_ratio, &r.val_metric})
      os << ',' << fmt(s->mean) << ',' << fmt(s->std);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Execution

unsigned default_workers() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GROUPROBE_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
    } catch (const std::exception&) {
      // Unparseable values are ignored.
    }
  }
  return n;
}

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (workers == 0) workers = default_workers();
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  auto body = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << contents;
    out.flush();
    if (!out) throw Error("write failed for '" + tmp + "'");
  }
  fs::rename(tmp, p);
}

namespace {

std::vector<RunRecord> run_all(const std::vector<ArmConfig>& arms, const std::vector<std::uint64_t>& seeds,
                               const std::vector<SeedData>& data, const DataConfig& dcfg, unsigned workers) {
  std::vector<RunRecord> runs(arms.size() * seeds.size());
  parallel_for(runs.size(), workers, [&](std::size_t k) {
    const std::size_t a = k / seeds.size();
    const std::size_t s = k % seeds.size();
    runs[k] = run_arm(arms[a], data[s], seeds[s], dcfg.spec.d_c, dcfg.spec.d_s);
  });
  return runs;
}

std::vector<SummaryRow> summarize_all(const std::vector<ArmConfig>& arms, const std::vector<RunRecord>& runs,
                                      std::size_t n_seeds) {
  std::vector<SummaryRow> rows;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    std::vector<const RunRecord*> mine;
    for (std::size_t s = 0; s < n_seeds; ++s) mine.push_back(&runs[a * n_seeds + s]);
    rows.push_back(summarize(arms[a], mine));
  }
  return rows;
}

std::vector<SeedData> seed_data(const DataConfig& d, const std::vector<std::uint64_t>& seeds) {
  std::vector<SeedData> out;
  out.reserve(seeds.size());
  for (auto s : seeds) out.push_back(make_seed_data(d, s));
  return out;
}

void write_runs(const std::string& out_dir, const std::vector<RunRecord>& runs) {
  for (const auto& r : runs) {
    const std::string stem = r.arm + "_seed" + std::to_string(r.seed);
    write_file_atomic(out_dir + "/runs/" + stem + ".json", to_json(r).dump(2) + "\n");
    std::ostringstream trace;
    write_trace_csv(trace, r.fit.trace);
    write_file_atomic(out_dir + "/traces/" + stem + ".csv", trace.str());
  }
}

std::string csv_string(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  write_summary_csv(os, rows);
  return os.str();
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, unsigned workers) {
  cfg.validate();
  const auto data = seed_data(cfg.data, cfg.seeds);

  // Base arms first, then the hyperparameter grid per arm.
  std::vector<ArmConfig> arms = cfg.arms;
  std::vector<ArmConfig> grid_arms;
  if (cfg.hp_grid) {
    for (const auto& base : cfg.arms)
      for (double lr : cfg.hp_grid->learning_rate)
        for (Index b : cfg.hp_grid->batch_size) {
          ArmConfig a = base;
          a.name = base.name + "_lr" + short_num(lr) + "_b" + std::to_string(b);
          a.fit.optim.learning_rate = lr;
          a.fit.optim.batch_size = b;
          grid_arms.push_back(a);
        }
  }
  std::vector<ArmConfig> all = arms;
  all.insert(all.end(), grid_arms.begin(), grid_arms.end());
  std::vector<RunRecord> runs = run_all(all, cfg.seeds, data, cfg.data, workers);

  ExperimentOutput out;
  std::vector<SummaryRow> rows = summarize_all(all, runs, cfg.seeds.size());
  out.summary.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(arms.size()));
  out.grid_summary.assign(rows.begin() + static_cast<std::ptrdiff_t>(arms.size()), rows.end());
  if (cfg.hp_grid) {
    const std::size_t per_arm = cfg.hp_grid->learning_rate.size() * cfg.hp_grid->batch_size.size();
    for (std::size_t a = 0; a < arms.size(); ++a) {
      std::size_t best = a * per_arm;
      for (std::size_t k = best + 1; k < (a + 1) * per_arm; ++k)
        if (out.grid_summary[k].val_metric.mean > out.grid_summary[best].val_metric.mean + 1e-12) best = k;
      out.best_over_grid.push_back(out.grid_summary[best]);
    }
  }
  out.runs = std::move(runs);

  if (!out_dir.empty()) {
    write_file_atomic(out_dir + "/config.json", to_json(cfg).dump(2) + "\n");
    write_runs(out_dir, out.runs);
    write_file_atomic(out_dir + "/summary.csv", csv_string(out.summary));
    if (cfg.hp_grid) {
      write_file_atomic(out_dir + "/grid.csv", csv_string(out.grid_summary));
      write_file_atomic(out_dir + "/best_over_grid.csv", csv_string(out.best_over_grid));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

std::size_t SweepGrid::cells() const {
  return alpha_aux.size() * alpha_reg.size() * tau.size() * learning_rate.size() * batch_size.size();
}

void SweepConfig::validate() const {
  data.validate();
  if (seeds.empty()) throw InvalidSpec("seeds must be nonempty");
  if (grid.cells() == 0) throw InvalidSpec("every sweep axis must be nonempty");
  for (const auto& a : expand()) {
    a.fit.optim.validate();
    a.fit.weights.validate();
    if (!(a.fit.tau > 0)) throw InvalidSpec("tau must be > 0");
  }
}

std::vector<ArmConfig> SweepConfig::expand() const {
  std::vector<ArmConfig> out;
  std::size_t k = 0;
  for (double ar : grid.alpha_reg)
    for (double aa : grid.alpha_aux)
      for (double t : grid.tau)
        for (double lr : grid.learning_rate)
          for (Index b : grid.batch_size) {
            ArmConfig a = base;
            std::ostringstream name;
            name << "cell" << std::setw(3) << std::setfill('0') << k++;
            a.name = name.str();
            a.fit.weights.alpha_reg = ar;
            a.fit.weights.alpha_aux = aa;
            a.fit.tau = t;
            a.fit.optim.learning_rate = lr;
            a.fit.optim.batch_size = b;
            out.push_back(a);
          }
  return out;
}

SweepConfig parse_sweep(const json& j) {
  Reader top(j, "");
  check_schema(top, kSweepSchema);
  SweepConfig cfg;
  cfg.name = top.string("name", cfg.name);
  if (!valid_name(cfg.name)) throw ConfigError("name: use letters, digits, '_', '-', '.'");
  if (const json* d = top.raw("data")) cfg.data = parse_data(*d, "data");
  cfg.seeds = parse_seeds(top);
  const Defaults def = parse_defaults(top);
  cfg.base.method = Method::RegMtl;
  cfg.base.name = "base";
  cfg.base.fit.tau = 0.1;
  if (const json* b = top.raw("base")) {
    Reader br(*b, "base");
    parse_arm_fields(br, cfg.base, def, false);
    br.finish();
  } else {
    json empty = json::object();
    Reader br(empty, "base");
    parse_arm_fields(br, cfg.base, def, false);
  }
  const json* g = top.raw("grid");
  if (!g) throw ConfigError("grid: required");
  Reader gr(*g, "grid");
  auto axis = [&](const std::string& key, double base_value) {
    auto v = gr.numbers(key);
    if (v.empty()) v = {base_value};
    return v;
  };
  cfg.grid.alpha_aux = axis("alpha_aux", cfg.base.fit.weights.alpha_aux);
  cfg.grid.alpha_reg = axis("alpha_reg", cfg.base.fit.weights.alpha_reg);
  cfg.grid.tau = axis("tau", cfg.base.fit.tau);
  cfg.grid.learning_rate = axis("learning_rate", cfg.base.fit.optim.learning_rate);
  cfg.grid.batch_size = gr.integers("batch_size");
  if (cfg.grid.batch_size.empty()) cfg.grid.batch_size = {cfg.base.fit.optim.batch_size};
  gr.finish();
  top.finish();
  wrap_invalid("config", [&] { cfg.validate(); });
  return cfg;
}

SweepConfig load_sweep(const std::string& path) { return parse_sweep(parse_text(read_text(path))); }

json to_json(const SweepConfig& cfg) {
  json base = arm_json(cfg.base);
  std::vector<json> taus;
  for (double t : cfg.grid.tau) taus.push_back(tau_json(t));
  return {{"schema", kSweepSchema},
          {"name", cfg.name},
          {"data", data_json(cfg.data)},
          {"seeds", cfg.seeds},
          {"base", base},
          {"grid",
           {{"alpha_aux", cfg.grid.alpha_aux},
            {"alpha_reg", cfg.grid.alpha_reg},
            {"tau", taus},
            {"learning_rate", cfg.grid.learning_rate},
            {"batch_size", cfg.grid.batch_size}}}};
}

std::vector<std::string> sweep_recipe_names() { return {"pareto-default"}; }

SweepConfig sweep_recipe(const std::string& name) {
  if (name != "pareto-default") throw ConfigError("unknown sweep recipe '" + name + "'");
  SweepConfig cfg;
  cfg.name = name;
  cfg.base = make_arm("base", Method::RegMtl, 0.1, 10.0, 1e-2, 64, SelectionStrategy::NoGp);
  const double e = std::numbers::e;
  cfg.grid.alpha_reg = {1 / e, 1.0, e};
  cfg.grid.alpha_aux = {1 / e, 1.0, e};
  cfg.grid.tau = {0.1};
  cfg.grid.learning_rate = {1e-2, 1e-3};
  cfg.grid.batch_size = {64, 256};
  cfg.validate();
  return cfg;
}

SweepOutput run_sweep(const SweepConfig& cfg, const std::string& out_dir, unsigned workers) {
  cfg.validate();
  const auto data = seed_data(cfg.data, cfg.seeds);
  const auto arms = cfg.expand();
  const auto runs = run_all(arms, cfg.seeds, data, cfg.data, workers);
  SweepOutput out;
  out.rows = summarize_all(arms, runs, cfg.seeds.size());
  std::string seed_set;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) seed_set += (i ? ";" : "") + std::to_string(cfg.seeds[i]);
  for (const auto& r : out.rows) {
    ParetoPoint p;
    p.avg_acc = r.test_avg.mean;
    p.wg_acc = r.test_wg.mean;
    p.method = r.method;
    p.alpha_aux = r.alpha_aux;
    p.alpha_reg = r.alpha_reg;
    p.tau = r.tau;
    p.lr = r.learning_rate;
    p.batch = r.batch_size;
    p.seed_set = seed_set;
    out.points.push_back(p);
  }
  out.front = pareto_front(out.points);
  if (!out_dir.empty()) {
    write_file_atomic(out_dir + "/sweep_config.json", to_json(cfg).dump(2) + "\n");
    write_file_atomic(out_dir + "/sweep.csv", csv_string(out.rows));
    std::ostringstream front_csv, front_dat;
    write_pareto_csv(front_csv, out.front);
    write_pareto_dat(front_dat, out.front);
    write_file_atomic(out_dir + "/pareto.csv", front_csv.str());
    write_file_atomic(out_dir + "/pareto.dat", front_dat.str());
  }
  return out;
}

}  // namespace grouprobe
