#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>

#include "grouprobe/common.hpp"

namespace grouprobe {

// Parameters of the core/spurious Gaussian generative process.
//   x_core | y ~ N(y * 1, sigma2_core * I_{d_c})
//   x_spur | s ~ N(s * 1, sigma2_spur * I_{d_s})
// n_maj samples are split evenly over the groups s == y, n_min over s == -y.
struct GroupDataSpec {
  Index d_c = 1;
  Index d_s = 1;
  double sigma2_core = 0.6;
  double sigma2_spur = 0.1;
  Index n_maj = 900;
  Index n_min = 100;
  double sigma2_noise = 1.0;

  Index dim() const { return d_c + d_s; }
  // Throws InvalidSpec. Sample counts are not checked here.
  void validate_distribution() const;
  void validate() const;
};

// Group numbering, majority groups first:
//   (y, s) = (1, 1) -> 0, (-1, -1) -> 1, (1, -1) -> 2, (-1, 1) -> 3.
constexpr int group_id(int y, int s) {
  if (y == s) return y > 0 ? 0 : 1;
  return y > 0 ? 2 : 3;
}
constexpr int group_label(int group) { return (group == 0 || group == 2) ? 1 : -1; }
constexpr int group_attr(int group) { return (group == 0 || group == 3) ? 1 : -1; }
constexpr bool is_minority_group(int group) { return group >= 2; }

struct LabeledDataset {
  Mat features;  // N x d, [core | spurious]
  IVec labels;   // +-1
  IVec spurious_attrs;
  IVec group_ids;  // empty when group annotations are withheld
  Index d_c = 0;
  Index d_s = 0;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  bool empty() const { return size() == 0; }
  bool has_groups() const { return group_ids.size() == size() && size() > 0; }
  std::array<Index, kNumGroups> group_counts() const;
  LabeledDataset take(std::span<const Index> rows) const;
  // Copy with group ids stripped.
  LabeledDataset without_groups() const;
  void check_consistent() const;
};

struct AuxDataset {
  Mat noised;   // x~
  Mat targets;  // x

  Index size() const { return targets.rows(); }
  Index dim() const { return targets.cols(); }
  bool empty() const { return size() == 0; }
  AuxDataset take(std::span<const Index> rows) const;
};

// Exactly counts[g] rows for group g. Group g draws from its own PRNG
// sub-stream derive_seed(seed, g), so counts of one group never shift the
// draws of another. Rows are ordered by group.
LabeledDataset sample_groups(const GroupDataSpec& spec,
                             const std::array<Index, kNumGroups>& counts,
                             std::uint64_t seed);

LabeledDataset sample_group_dataset(const GroupDataSpec& spec, std::uint64_t seed);
LabeledDataset make_balanced_test(const GroupDataSpec& spec, Index n_per_group,
                                  std::uint64_t seed);
AuxDataset noise_dataset(const LabeledDataset& data, double sigma2_noise,
                         std::uint64_t seed);

// CSV: header `y,s,group,x0,...,x{d-1}`.
void write_csv(std::ostream& os, const LabeledDataset& data);
LabeledDataset read_csv(std::istream& is, Index d_c);

// Binary cache, little-endian:
//   char[4] "GRDS", u32 version(=1), u64 rows, u32 d_c, u32 d_s,
//   then per row: i8 y, i8 s, u8 group, f64[d] features.
void write_binary(std::ostream& os, const LabeledDataset& data);
LabeledDataset read_binary(std::istream& is);

void save_dataset(const std::string& path, const LabeledDataset& data);
LabeledDataset load_dataset(const std::string& path, Index d_c = 1);

}  // namespace grouprobe
