#include "grouprobe/linmodel.hpp"

#include <random>

namespace grouprobe {

void ModelParams::check_shapes() const {
  const Index d = a.size();
  if (w_end.size() != d || W_aux.rows() != d || W_aux.cols() != d)
    throw ShapeError("ModelParams: inconsistent parameter shapes");
}

void enforce_constraints(ModelParams& params) {
  if (params.l1_active())
    params.a = params.strict_boundary ? rescale_l1(params.a, params.tau) : project_l1(params.a, params.tau);
  if (params.fro_radius > 0) params.W_aux = normalize_frobenius(params.W_aux, params.fro_radius);
}

std::string to_string(WAuxInit w) { return w == WAuxInit::Identity ? "identity" : "random"; }

WAuxInit waux_init_from_string(const std::string& s) {
  if (s == "identity") return WAuxInit::Identity;
  if (s == "random") return WAuxInit::Random;
  throw InvalidInput("unknown W_aux init '" + s + "' (identity, random)");
}

ModelParams init_params(Index d, double tau, std::uint64_t seed, double fro_radius,
                        bool strict_boundary, WAuxInit w_aux_init) {
  if (d < 1) throw InvalidSpec("init_params: d must be >= 1");
  if (!(tau > 0)) throw InvalidSpec("init_params: tau must be > 0");
  ModelParams p;
  p.tau = tau;
  p.fro_radius = fro_radius;
  p.strict_boundary = strict_boundary;
  p.a = std::isfinite(tau) ? Vec::Constant(d, tau / static_cast<double>(d)) : Vec::Ones(d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  p.w_end.resize(d);
  for (Index i = 0; i < d; ++i) p.w_end[i] = normal(rng);
  if (w_aux_init == WAuxInit::Identity) {
    p.W_aux = Mat::Identity(d, d) * (fro_radius / std::sqrt(static_cast<double>(d)));
  } else {
    std::normal_distribution<double> unit(0.0, 1.0);
    p.W_aux = Mat::NullaryExpr(d, d, [&] { return unit(rng); });
    p.W_aux = normalize_frobenius(p.W_aux, fro_radius);
  }
  return p;
}

nlohmann::json to_json(const ModelParams& params) {
  using nlohmann::json;
  json j;
  j["a"] = std::vector<double>(params.a.data(), params.a.data() + params.a.size());
  j["w_end"] = std::vector<double>(params.w_end.data(), params.w_end.data() + params.w_end.size());
  json rows = json::array();
  for (Index r = 0; r < params.W_aux.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(params.W_aux.cols()));
    for (Index c = 0; c < params.W_aux.cols(); ++c) row[c] = params.W_aux(r, c);
    rows.push_back(row);
  }
  j["W_aux"] = rows;
  j["tau"] = std::isfinite(params.tau) ? json(params.tau) : json(nullptr);
  j["fro_radius"] = params.fro_radius;
  if (params.strict_boundary) j["strict_boundary"] = true;
  return j;
}

ModelParams params_from_json(const nlohmann::json& j) {
  ModelParams p;
  try {
    const auto a = j.at("a").get<std::vector<double>>();
    const auto w = j.at("w_end").get<std::vector<double>>();
    const auto W = j.at("W_aux").get<std::vector<std::vector<double>>>();
    const auto d = static_cast<Index>(a.size());
    p.a = Eigen::Map<const Vec>(a.data(), d);
    p.w_end = Eigen::Map<const Vec>(w.data(), static_cast<Index>(w.size()));
    p.W_aux.resize(static_cast<Index>(W.size()), W.empty() ? 0 : static_cast<Index>(W[0].size()));
    for (std::size_t r = 0; r < W.size(); ++r) {
      if (static_cast<Index>(W[r].size()) != p.W_aux.cols()) throw ShapeError("W_aux rows are ragged");
      for (std::size_t c = 0; c < W[r].size(); ++c) p.W_aux(r, c) = W[r][c];
    }
    p.tau = j.at("tau").is_null() ? kInf : j.at("tau").get<double>();
    p.fro_radius = j.at("fro_radius").get<double>();
    p.strict_boundary = j.value("strict_boundary", false);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("ModelParams JSON: ") + e.what());
  }
  p.check_shapes();
  return p;
}

}  // namespace grouprobe
