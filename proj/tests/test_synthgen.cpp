#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "grouprobe/synthgen.hpp"
#include "support.hpp"

using namespace grouprobe;

TEST_CASE("group id mapping is the documented bijection") {
  CHECK(group_id(1, 1) == 0);
  CHECK(group_id(-1, -1) == 1);
  CHECK(group_id(1, -1) == 2);
  CHECK(group_id(-1, 1) == 3);
  std::set<int> seen;
  for (int y : {-1, 1})
    for (int s : {-1, 1}) {
      const int g = group_id(y, s);
      seen.insert(g);
      CHECK(group_label(g) == y);
      CHECK(group_attr(g) == s);
    }
  CHECK(seen.size() == 4);
}

TEST_CASE("table2 spec yields exact group counts") {
  GroupDataSpec spec;
  const auto d = sample_group_dataset(spec, 7);
  CHECK(d.size() == 1000);
  CHECK(d.dim() == 2);
  const auto c = d.group_counts();
  CHECK(c[0] == 450);
  CHECK(c[1] == 450);
  CHECK(c[2] == 50);
  CHECK(c[3] == 50);
  for (Index i = 0; i < d.size(); ++i) CHECK(d.group_ids[i] == group_id(d.labels[i], d.spurious_attrs[i]));
}

TEST_CASE("zero variances place every point on its group mean") {
  GroupDataSpec spec;
  spec.sigma2_core = 0;
  spec.sigma2_spur = 0;
  spec.n_maj = 4;
  spec.n_min = 0;
  spec.d_c = 2;
  spec.d_s = 3;
  const auto d = sample_group_dataset(spec, 1);
  REQUIRE(d.size() == 4);
  for (Index i = 0; i < d.size(); ++i) {
    for (Index j = 0; j < 2; ++j) CHECK(d.features(i, j) == d.labels[i]);
    for (Index j = 2; j < 5; ++j) CHECK(d.features(i, j) == d.spurious_attrs[i]);
  }
}

TEST_CASE("per-column variances match the spec over five seeds") {
  GroupDataSpec spec;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = sample_group_dataset(spec, seed);
    // Centre each row on its own group mean, then pool.
    Vec core_c(4), spur_c(4);
    for (int g = 0; g < 4; ++g) {
      core_c[g] = group_label(g);
      spur_c[g] = group_attr(g);
    }
    double core_ss = 0, spur_ss = 0;
    for (Index i = 0; i < d.size(); ++i) {
      core_ss += std::pow(d.features(i, 0) - core_c[d.group_ids[i]], 2);
      spur_ss += std::pow(d.features(i, 1) - spur_c[d.group_ids[i]], 2);
    }
    CHECK(std::abs(core_ss / d.size() - 0.6) <= 0.1);
    CHECK(std::abs(spur_ss / d.size() - 0.1) <= 0.05);
  }
}

TEST_CASE("per-group means converge within three standard errors") {
  GroupDataSpec spec;
  spec.d_c = 2;
  spec.d_s = 2;
  spec.n_maj = 20000;
  spec.n_min = 20000;
  for (std::uint64_t seed : {11u, 12u}) {
    const auto d = sample_group_dataset(spec, seed);
    for (int g = 0; g < 4; ++g) {
      Vec sum = Vec::Zero(4);
      Index n = 0;
      for (Index i = 0; i < d.size(); ++i)
        if (d.group_ids[i] == g) {
          sum += d.features.row(i).transpose();
          ++n;
        }
      const Vec mean = sum / static_cast<double>(n);
      for (Index j = 0; j < 4; ++j) {
        const bool core = j < 2;
        const double target = core ? group_label(g) : group_attr(g);
        const double se = std::sqrt((core ? spec.sigma2_core : spec.sigma2_spur) / static_cast<double>(n));
        CHECK(std::abs(mean[j] - target) <= 3 * se);
      }
    }
  }
}

TEST_CASE("spec validation errors") {
  GroupDataSpec spec;
  spec.n_maj = 901;
  CHECK_THROWS_AS(sample_group_dataset(spec, 0), InvalidSpec);
  spec.n_maj = 900;
  spec.n_min = 3;
  CHECK_THROWS_AS(sample_group_dataset(spec, 0), InvalidSpec);
  spec.n_min = 0;
  spec.n_maj = 0;
  CHECK_THROWS_AS(sample_group_dataset(spec, 0), InvalidSpec);
  GroupDataSpec bad;
  bad.sigma2_core = -1;
  CHECK_THROWS_AS(sample_group_dataset(bad, 0), InvalidSpec);
  GroupDataSpec no_core;
  no_core.d_c = 0;
  CHECK_THROWS_AS(sample_group_dataset(no_core, 0), InvalidSpec);
}

TEST_CASE("balanced test set") {
  GroupDataSpec spec;
  const auto t = make_balanced_test(spec, 250, 5);
  CHECK(t.size() == 1000);
  for (auto c : t.group_counts()) CHECK(c == 250);
  const auto one = make_balanced_test(spec, 1, 5);
  CHECK(one.size() == 4);
  for (auto c : one.group_counts()) CHECK(c == 1);
  CHECK_THROWS_AS(make_balanced_test(spec, 0, 5), InvalidSpec);
  const auto again = make_balanced_test(spec, 250, 5);
  CHECK(again.features == t.features);
  CHECK(again.labels == t.labels);
}

TEST_CASE("group sub-streams are independent of other groups' counts") {
  GroupDataSpec spec;
  const auto a = sample_groups(spec, {10, 10, 3, 3}, 9);
  const auto b = sample_groups(spec, {10, 40, 3, 3}, 9);
  // Group 0 rows come first in both.
  CHECK(a.features.topRows(10) == b.features.topRows(10));
}

TEST_CASE("same seed is bit identical, different seed differs") {
  GroupDataSpec spec;
  const auto a = sample_group_dataset(spec, 42);
  const auto b = sample_group_dataset(spec, 42);
  const auto c = sample_group_dataset(spec, 43);
  CHECK(a.features == b.features);
  CHECK(a.group_ids == b.group_ids);
  CHECK(a.features != c.features);
}

TEST_CASE("noise_dataset") {
  GroupDataSpec spec;
  const auto d = sample_group_dataset(spec, 1);
  const auto clean = noise_dataset(d, 0.0, 3);
  CHECK(clean.noised == clean.targets);
  CHECK(clean.targets == d.features);
  CHECK_THROWS_AS(noise_dataset(d, -0.5, 3), InvalidSpec);

  // Moments of the injected noise over 1e5 entries.
  spec.n_maj = 50000;
  spec.n_min = 0;
  spec.d_s = 1;
  const auto big = sample_group_dataset(spec, 2);
  const auto aux = noise_dataset(big, 1.0, 4);
  const Mat eps = aux.noised - aux.targets;
  CHECK(eps.size() == 100000);
  const double mean = eps.mean();
  const double var = (eps.array() - mean).square().sum() / static_cast<double>(eps.size() - 1);
  CHECK(std::abs(mean) <= 0.01);
  CHECK(std::abs(var - 1.0) <= 0.05);

  const auto again = noise_dataset(big, 1.0, 4);
  CHECK(again.noised == aux.noised);
}

TEST_CASE("CSV round trip") {
  GroupDataSpec spec;
  spec.d_c = 2;
  spec.d_s = 3;
  const auto d = sample_group_dataset(spec, 8);
  std::stringstream ss;
  write_csv(ss, d);
  std::string header;
  std::getline(std::stringstream(ss.str()), header);
  CHECK(header == "y,s,group,x0,x1,x2,x3,x4");
  const auto r = read_csv(ss, 2);
  CHECK(r.features == d.features);
  CHECK(r.labels == d.labels);
  CHECK(r.spurious_attrs == d.spurious_attrs);
  CHECK(r.group_ids == d.group_ids);
  CHECK(r.d_c == 2);
  CHECK(r.d_s == 3);
}

TEST_CASE("binary round trip and magic check") {
  GroupDataSpec spec;
  const auto d = sample_group_dataset(spec, 8);
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_binary(ss, d);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "GRDS");
  CHECK(bytes.size() == 4 + 4 + 8 + 4 + 4 + static_cast<std::size_t>(d.size()) * (3 + 8 * 2));
  const auto r = read_binary(ss);
  CHECK(r.features == d.features);
  CHECK(r.group_ids == d.group_ids);

  std::stringstream bad("XXXXjunk");
  CHECK_THROWS(read_binary(bad));
}

TEST_CASE("file save and load by extension") {
  const std::string dir = testsupport::temp_dir("synthgen_io");
  GroupDataSpec spec;
  const auto d = sample_group_dataset(spec, 2);
  save_dataset(dir + "/d.csv", d);
  save_dataset(dir + "/d.bin", d);
  CHECK(load_dataset(dir + "/d.csv").features == d.features);
  CHECK(load_dataset(dir + "/d.bin").features == d.features);
}

TEST_CASE("take and without_groups") {
  GroupDataSpec spec;
  const auto d = sample_group_dataset(spec, 2);
  std::vector<Index> rows{5, 0, 999};
  const auto t = d.take(rows);
  CHECK(t.size() == 3);
  CHECK(t.features.row(0) == d.features.row(5));
  CHECK(t.labels[2] == d.labels[999]);
  const auto ng = d.without_groups();
  CHECK_FALSE(ng.has_groups());
  CHECK(ng.features == d.features);
}
