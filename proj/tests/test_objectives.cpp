#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "grouprobe/objectives.hpp"
#include "support.hpp"

using namespace grouprobe;
using testsupport::random_vec;

namespace {

LabeledDataset make_batch(const Mat& X, const std::vector<int>& y) {
  LabeledDataset b;
  b.features = X;
  b.labels.resize(static_cast<Index>(y.size()));
  b.spurious_attrs.resize(static_cast<Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) {
    b.labels[static_cast<Index>(i)] = y[i];
    b.spurious_attrs[static_cast<Index>(i)] = y[i];
  }
  b.d_c = 1;
  b.d_s = X.cols() - 1;
  return b;
}

struct Instance {
  ModelParams p;
  LabeledDataset end;
  AuxDataset aux;
  Vec w;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> dim(2, 5), rows(2, 9);
  std::uniform_real_distribution<double> mag(0.2, 1.2), wt(0.1, 4.0);
  std::bernoulli_distribution coin(0.5);
  const Index d = dim(rng), B = rows(rng);
  Instance in;
  in.p = init_params(d, kInf, 0);
  for (Index j = 0; j < d; ++j) in.p.a[j] = (coin(rng) ? 1 : -1) * mag(rng);
  in.p.w_end = random_vec(rng, d);
  in.p.W_aux = Mat::NullaryExpr(d, d, [&] { return std::normal_distribution<double>()(rng); });
  Mat X = Mat::NullaryExpr(B, d, [&] { return std::normal_distribution<double>(0, 1.5)(rng); });
  std::vector<int> y;
  for (Index i = 0; i < B; ++i) y.push_back(coin(rng) ? 1 : -1);
  in.end = make_batch(X, y);
  in.aux.targets = X;
  in.aux.noised = X + Mat::NullaryExpr(B, d, [&] { return std::normal_distribution<double>()(rng); });
  in.w = Vec::NullaryExpr(B, [&] { return wt(rng); });
  return in;
}

// Packs [a; w_end; vec(W)] and returns central differences of f.
Vec central_diff(const std::function<double(const ModelParams&)>& f, ModelParams p, double h) {
  const Index d = p.dim();
  Vec g(2 * d + d * d);
  Index k = 0;
  auto probe = [&](double& slot) {
    const double keep = slot;
    slot = keep + h;
    const double up = f(p);
    slot = keep - h;
    const double dn = f(p);
    slot = keep;
    g[k++] = (up - dn) / (2 * h);
  };
  for (Index j = 0; j < d; ++j) probe(p.a[j]);
  for (Index j = 0; j < d; ++j) probe(p.w_end[j]);
  for (Index c = 0; c < d; ++c)
    for (Index r = 0; r < d; ++r) probe(p.W_aux(r, c));
  return g;
}

Vec packed(const LossEval& e) {
  const Index d = e.grad_a.size();
  Vec g(2 * d + d * d);
  g << e.grad_a, e.grad_w_end, e.grad_W_aux.reshaped();
  return g;
}

double rel(const Vec& a, const Vec& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8}); }

void check_gradients(const std::function<LossEval(const ModelParams&, const Instance&)>& loss, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int t = 0; t < 20; ++t) {
    Instance in = random_instance(rng);
    const Vec analytic = packed(loss(in.p, in));
    const Vec numeric = central_diff([&](const ModelParams& q) { return loss(q, in).value; }, in.p, 1e-5);
    CHECK(rel(analytic, numeric) <= 1e-5);
  }
}

}  // namespace

TEST_CASE("end_loss at z = 0 is ln 2") {
  ModelParams p = init_params(2, kInf, 0);
  p.w_end.setZero();
  Mat X(3, 2);
  X << 1, 2, -3, 0.5, 0, 1;
  const auto e = end_loss(p, make_batch(X, {1, -1, 1}), 0.0);
  CHECK(e.value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("end_loss on a single point with z = 2") {
  ModelParams p = init_params(1, kInf, 0);
  p.a << 1;
  p.w_end << 2;
  Mat X(1, 1);
  X << 1;
  const auto e = end_loss(p, make_batch(X, {1}), 0.0);
  CHECK(e.value == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
  CHECK(e.value == doctest::Approx(0.1269).epsilon(1e-3));
  // L2 term.
  CHECK(end_loss(p, make_batch(X, {1}), 1.0).value == doctest::Approx(e.value + 2.0).epsilon(1e-14));
}

TEST_CASE("end_loss is stable for large logits") {
  ModelParams p = init_params(1, kInf, 0);
  p.a << 1;
  p.w_end << 50;
  Mat X(2, 1);
  X << 1, -1;
  const auto right = end_loss(p, make_batch(X, {1, -1}), 0.0);
  CHECK(std::isfinite(right.value));
  CHECK(right.value == doctest::Approx(std::log1p(std::exp(-50.0))).epsilon(1e-10));
  const auto wrong = end_loss(p, make_batch(X, {-1, 1}), 0.0);
  CHECK(wrong.value == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(wrong.all_finite());
}

TEST_CASE("empty batches and bad weights are rejected") {
  ModelParams p = init_params(2, kInf, 0);
  LabeledDataset empty;
  empty.features.resize(0, 2);
  CHECK_THROWS_AS(end_loss(p, empty, 1.0), InvalidInput);
  CHECK_THROWS_AS(activation_l1(p, empty), InvalidInput);
  AuxDataset aux_empty;
  aux_empty.noised.resize(0, 2);
  aux_empty.targets.resize(0, 2);
  CHECK_THROWS_AS(recon_loss(p, aux_empty), InvalidInput);

  Mat X = Mat::Ones(2, 2);
  const auto b = make_batch(X, {1, -1});
  AuxDataset aux{X, X};
  CHECK_THROWS_AS(multitask_loss(p, b, aux, LossWeights{-1, 0, 1}), InvalidInput);
  CHECK_THROWS_AS(multitask_loss(p, b, aux, LossWeights{1, -0.1, 1}), InvalidInput);
  CHECK_THROWS_AS(multitask_loss(p, b, aux_empty, LossWeights{1, 0, 1}), InvalidInput);
  Vec neg(2);
  neg << 1, -1;
  CHECK_THROWS_AS(end_loss(p, b, 1.0, &neg), InvalidInput);
  Vec short_w = Vec::Ones(1);
  CHECK_THROWS_AS(end_loss(p, b, 1.0, &short_w), ShapeError);
}

TEST_CASE("recon_loss examples") {
  ModelParams p = init_params(3, kInf, 0);
  p.a.setOnes();
  p.W_aux.setIdentity();
  Mat X = Mat::Random(5, 3);
  CHECK(recon_loss(p, AuxDataset{X, X}).value == 0.0);

  ModelParams s = init_params(1, kInf, 0);
  s.a << 0.5;
  s.W_aux << 2;
  Mat one(1, 1);
  one << 1;
  CHECK(recon_loss(s, AuxDataset{one, one}).value == 0.0);
  s.W_aux << 1;
  CHECK(recon_loss(s, AuxDataset{one, one}).value == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("recon_loss is zero exactly when every row is reconstructed") {
  ModelParams p = init_params(2, kInf, 0);
  p.a << 2, 0.5;
  p.W_aux << 0.5, 0, 0, 2;
  Mat X(3, 2);
  X << 1, 2, -1, 0.3, 4, 4;
  AuxDataset aux{X, X};
  CHECK(recon_loss(p, aux).value == 0.0);
  aux.targets(2, 1) += 1e-3;
  CHECK(recon_loss(p, aux).value > 0.0);
}

TEST_CASE("activation_l1 by hand") {
  ModelParams p = init_params(2, kInf, 0);
  p.a << 0.5, -2;
  Mat X(2, 2);
  X << 1, 1, -2, 0;
  // |h| rows: (0.5 + 2) and (1 + 0); 2 * mean / d = 2 * 1.75 / 2.
  const auto e = activation_l1(p, make_batch(X, {1, 1}));
  CHECK(e.value == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(e.grad_a[0] == doctest::Approx(0.5 * (1 + 2)).epsilon(1e-15));
  // Second entry: h = -2 on row 0 (sign -1, x = 1), exactly 0 on row 1.
  CHECK(e.grad_a[1] == doctest::Approx(0.5 * -1).epsilon(1e-15));
  CHECK(e.grad_w_end.isZero(0));
  CHECK(e.grad_W_aux.isZero(0));
}

TEST_CASE("multitask_loss composition") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    Instance in = random_instance(rng);
    const auto end = end_loss(in.p, in.end, 0.8);
    const auto zero = multitask_loss(in.p, in.end, in.aux, LossWeights{0, 0, 0.8});
    CHECK(zero.value == end.value);
    CHECK(packed(zero) == packed(end));

    const LossWeights w{2.5, 0.7, 0.8};
    const double manual = end.value + 2.5 * recon_loss(in.p, in.aux).value + 0.7 * activation_l1(in.p, in.end).value;
    CHECK(std::abs(multitask_loss(in.p, in.end, in.aux, w).value - manual) <= 1e-12);

    // Monotone in each weight.
    double prev = -kInf;
    for (double a : {0.0, 0.5, 1.0, 4.0}) {
      const double v = multitask_loss(in.p, in.end, in.aux, LossWeights{a, 0.3, 0.8}).value;
      CHECK(v >= prev);
      prev = v;
    }
    prev = -kInf;
    for (double r : {0.0, 0.1, 2.0, 9.0}) {
      const double v = multitask_loss(in.p, in.end, in.aux, LossWeights{1.0, r, 0.8}).value;
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("end_loss is invariant under the fused reparameterisation at lambda = 0") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> pos(0.1, 10);
  for (int t = 0; t < 50; ++t) {
    Instance in = random_instance(rng);
    const Index d = in.p.dim();
    const Vec c = Vec::NullaryExpr(d, [&] { return pos(rng); });
    ModelParams q = in.p;
    q.w_end = in.p.w_end.cwiseProduct(c);
    q.a = in.p.a.cwiseQuotient(c);
    CHECK(std::abs(end_loss(q, in.end, 0.0).value - end_loss(in.p, in.end, 0.0).value) <= 1e-12);
  }
}

TEST_CASE("unit example weights equal the unweighted loss") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    Instance in = random_instance(rng);
    const Vec ones = Vec::Ones(in.end.size());
    const auto a = end_loss(in.p, in.end, 0.4);
    const auto b = end_loss(in.p, in.end, 0.4, &ones);
    CHECK(std::abs(a.value - b.value) <= 1e-12);
    CHECK((packed(a) - packed(b)).norm() <= 1e-12);
  }
}

TEST_CASE("gradients match central differences: end_loss") {
  check_gradients([](const ModelParams& p, const Instance& in) { return end_loss(p, in.end, 0.9); }, 101);
}

TEST_CASE("gradients match central differences: weighted end_loss") {
  check_gradients([](const ModelParams& p, const Instance& in) { return end_loss(p, in.end, 0.2, &in.w); }, 102);
}

TEST_CASE("gradients match central differences: recon_loss") {
  check_gradients([](const ModelParams& p, const Instance& in) { return recon_loss(p, in.aux); }, 103);
}

TEST_CASE("gradients match central differences: activation_l1") {
  check_gradients([](const ModelParams& p, const Instance& in) { return activation_l1(p, in.end); }, 104);
}

TEST_CASE("gradients match central differences: multitask_loss") {
  check_gradients(
      [](const ModelParams& p, const Instance& in) {
        return multitask_loss(p, in.end, in.aux, LossWeights{10, 0.5, 1.0}, &in.w);
      },
      105);
}

TEST_CASE("LossEval arithmetic") {
  LossEval a = LossEval::zeros(2);
  a.value = 1;
  a.grad_a << 1, 2;
  LossEval b = 2.0 * a;
  CHECK(b.value == 2);
  CHECK(b.grad_a[1] == 4);
  const LossEval c = a + b;
  CHECK(c.value == 3);
  CHECK(c.grad_a[0] == 3);
  b.grad_a[0] = std::nan("");
  CHECK_FALSE(b.all_finite());
}
