#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grouprobe/common.hpp"

namespace grouprobe {

// Two-layer linear multitask model.
//   f(x)     = a .* x                  shared diagonal featurizer
//   end head = w_end^T f(x)            scalar logit
//   aux head = W_aux^T f(x~)           reconstruction of x
// a is kept in the L1 ball of radius tau (disabled when tau is +inf); with
// strict_boundary the projection instead rescales a onto ||a||_1 == tau.
// W_aux is kept on the Frobenius sphere of radius fro_radius.
struct ModelParams {
  Vec a;
  Vec w_end;
  Mat W_aux;
  double tau = kInf;
  double fro_radius = 1.0;
  bool strict_boundary = false;

  Index dim() const { return a.size(); }
  bool l1_active() const { return std::isfinite(tau); }
  bool all_finite() const {
    return a.allFinite() && w_end.allFinite() && W_aux.allFinite();
  }
  void check_shapes() const;
  // w_end .* a, the single-layer model this parameterisation represents.
  Vec fused() const { return w_end.cwiseProduct(a); }
};

template <typename DA, typename DX>
auto featurize(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DX>& x) {
  if (a.size() != x.size()) throw ShapeError("featurize: length mismatch");
  return a.cwiseProduct(x).eval();
}

template <typename DX>
double predict_end(const ModelParams& params, const Eigen::MatrixBase<DX>& x) {
  if (x.size() != params.dim() || params.w_end.size() != params.dim())
    throw ShapeError("predict_end: shape mismatch");
  return params.w_end.dot(params.a.cwiseProduct(x.derived()));
}

template <typename DX>
Vec predict_aux(const ModelParams& params, const Eigen::MatrixBase<DX>& x_tilde) {
  if (x_tilde.size() != params.dim() || params.W_aux.rows() != params.dim() ||
      params.W_aux.cols() != params.dim())
    throw ShapeError("predict_aux: shape mismatch");
  return params.W_aux.transpose() * params.a.cwiseProduct(x_tilde.derived());
}

// Logits for every row of X.
inline Vec predict_end_batch(const ModelParams& params, const Mat& X) {
  if (X.cols() != params.dim()) throw ShapeError("predict_end_batch: shape mismatch");
  return X * params.fused();
}

// sign with sign(0) = +1.
constexpr int predicted_label(double logit) { return logit >= 0.0 ? 1 : -1; }

// Euclidean projection onto {u : ||u||_1 <= tau} by sorting magnitudes and
// soft-thresholding at the largest feasible threshold.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> project_l1(
    const Eigen::MatrixBase<Derived>& v, typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  using Out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  if (!(tau > Scalar(0))) throw InvalidSpec("project_l1: tau must be > 0");
  Out out = v;
  if (out.template lpNorm<1>() <= tau) return out;

  std::vector<Scalar> mags(static_cast<std::size_t>(out.size()));
  for (Index i = 0; i < out.size(); ++i) mags[i] = std::abs(out[i]);
  std::sort(mags.begin(), mags.end(), std::greater<Scalar>());
  Scalar cumsum(0);
  Scalar theta(0);
  for (std::size_t k = 0; k < mags.size(); ++k) {
    cumsum += mags[k];
    const Scalar candidate = (cumsum - tau) / Scalar(k + 1);
    if (mags[k] > candidate) theta = candidate;
  }
  for (Index i = 0; i < out.size(); ++i) {
    const Scalar shrunk = std::max(std::abs(out[i]) - theta, Scalar(0));
    out[i] = out[i] < Scalar(0) ? -shrunk : shrunk;
  }
  // When ||v||_1 >> tau the threshold cancels badly; pull the overshoot back.
  const Scalar norm = out.template lpNorm<1>();
  if (norm > tau) out *= tau / norm;
  return out;
}

// Rescales v onto the L1 sphere of radius tau.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> rescale_l1(
    const Eigen::MatrixBase<Derived>& v, typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  if (!(tau > Scalar(0))) throw InvalidSpec("rescale_l1: tau must be > 0");
  const Scalar norm = v.template lpNorm<1>();
  if (!(norm > Scalar(0))) throw DegenerateInput("rescale_l1: zero vector has no direction");
  return v * (tau / norm);
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> normalize_frobenius(
    const Eigen::MatrixBase<Derived>& W, typename Derived::Scalar radius) {
  using Scalar = typename Derived::Scalar;
  if (!(radius > Scalar(0))) throw InvalidSpec("normalize_frobenius: radius must be > 0");
  const Scalar norm = W.norm();
  if (!(norm > Scalar(0))) throw DegenerateInput("normalize_frobenius: zero matrix has no direction");
  return W * (radius / norm);
}

// Re-imposes both constraints in place.
void enforce_constraints(ModelParams& params);

enum class WAuxInit { Identity, Random };

std::string to_string(WAuxInit w);
WAuxInit waux_init_from_string(const std::string& s);

// a = (tau/d) 1 (all-ones when tau is +inf), w_end ~ N(0, 0.01^2).
// W_aux is fro_radius * I / sqrt(d), or N(0, 1) entries rescaled to
// fro_radius (drawn after w_end from the same stream).
ModelParams init_params(Index d, double tau, std::uint64_t seed, double fro_radius = 1.0,
                        bool strict_boundary = false, WAuxInit w_aux_init = WAuxInit::Identity);

// {a, w_end, W_aux (row-major nested), tau, fro_radius}. tau = +inf is
// written as null. Doubles are emitted with round-trip precision.
nlohmann::json to_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& j);

}  // namespace grouprobe
