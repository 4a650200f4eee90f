#include "grouprobe/synthgen.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <vector>

namespace grouprobe {

void GroupDataSpec::validate_distribution() const {
  if (d_c < 1 || d_s < 1) throw InvalidSpec("d_c and d_s must be >= 1");
  if (!(sigma2_core >= 0) || !(sigma2_spur >= 0) || !(sigma2_noise >= 0))
    throw InvalidSpec("variances must be non-negative");
}

void GroupDataSpec::validate() const {
  validate_distribution();
  if (n_maj < 0 || n_min < 0) throw InvalidSpec("sample counts must be non-negative");
  if (n_maj % 2 != 0) throw InvalidSpec("n_maj must be even");
  if (n_min % 2 != 0) throw InvalidSpec("n_min must be even");
  if (n_maj + n_min < 1) throw InvalidSpec("n_maj + n_min must be >= 1");
}

std::array<Index, kNumGroups> LabeledDataset::group_counts() const {
  std::array<Index, kNumGroups> counts{};
  for (Index i = 0; i < group_ids.size(); ++i) ++counts[group_ids[i]];
  return counts;
}

LabeledDataset LabeledDataset::take(std::span<const Index> rows) const {
  LabeledDataset out;
  const auto n = static_cast<Index>(rows.size());
  out.features.resize(n, dim());
  out.labels.resize(n);
  out.spurious_attrs.resize(n);
  if (has_groups()) out.group_ids.resize(n);
  out.d_c = d_c;
  out.d_s = d_s;
  for (Index i = 0; i < n; ++i) {
    const Index r = rows[i];
    out.features.row(i) = features.row(r);
    out.labels[i] = labels[r];
    out.spurious_attrs[i] = spurious_attrs[r];
    if (has_groups()) out.group_ids[i] = group_ids[r];
  }
  return out;
}

LabeledDataset LabeledDataset::without_groups() const {
  LabeledDataset out = *this;
  out.group_ids.resize(0);
  return out;
}

void LabeledDataset::check_consistent() const {
  const Index n = size();
  if (labels.size() != n || spurious_attrs.size() != n)
    throw ShapeError("dataset field lengths disagree");
  if (group_ids.size() != 0 && group_ids.size() != n)
    throw ShapeError("group_ids length disagrees with features");
  if (d_c + d_s != dim()) throw ShapeError("d_c + d_s does not match feature width");
  for (Index i = 0; i < n; ++i) {
    if (std::abs(labels[i]) != 1 || std::abs(spurious_attrs[i]) != 1)
      throw InvalidInput("labels and attributes must be +-1");
    if (group_ids.size() == n && group_ids[i] != group_id(labels[i], spurious_attrs[i]))
      throw InvalidInput("group id does not match (y, s)");
  }
}

AuxDataset AuxDataset::take(std::span<const Index> rows) const {
  AuxDataset out;
  const auto n = static_cast<Index>(rows.size());
  out.noised.resize(n, dim());
  out.targets.resize(n, dim());
  for (Index i = 0; i < n; ++i) {
    out.noised.row(i) = noised.row(rows[i]);
    out.targets.row(i) = targets.row(rows[i]);
  }
  return out;
}

LabeledDataset sample_groups(const GroupDataSpec& spec,
                             const std::array<Index, kNumGroups>& counts,
                             std::uint64_t seed) {
  spec.validate_distribution();
  Index total = 0;
  for (Index c : counts) {
    if (c < 0) throw InvalidSpec("group counts must be non-negative");
    total += c;
  }
  const Index d = spec.dim();
  LabeledDataset out;
  out.features.resize(total, d);
  out.labels.resize(total);
  out.spurious_attrs.resize(total);
  out.group_ids.resize(total);
  out.d_c = spec.d_c;
  out.d_s = spec.d_s;

  const double sd_core = std::sqrt(spec.sigma2_core);
  const double sd_spur = std::sqrt(spec.sigma2_spur);
  Index row = 0;
  for (int g = 0; g < kNumGroups; ++g) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(g)));
    std::normal_distribution<double> normal(0.0, 1.0);
    const int y = group_label(g);
    const int s = group_attr(g);
    for (Index k = 0; k < counts[g]; ++k, ++row) {
      for (Index j = 0; j < spec.d_c; ++j) out.features(row, j) = y + sd_core * normal(rng);
      for (Index j = 0; j < spec.d_s; ++j)
        out.features(row, spec.d_c + j) = s + sd_spur * normal(rng);
      out.labels[row] = y;
      out.spurious_attrs[row] = s;
      out.group_ids[row] = g;
    }
  }
  return out;
}

LabeledDataset sample_group_dataset(const GroupDataSpec& spec, std::uint64_t seed) {
  spec.validate();
  return sample_groups(spec, {spec.n_maj / 2, spec.n_maj / 2, spec.n_min / 2, spec.n_min / 2},
                       seed);
}

LabeledDataset make_balanced_test(const GroupDataSpec& spec, Index n_per_group,
                                  std::uint64_t seed) {
  if (n_per_group < 1) throw InvalidSpec("n_per_group must be >= 1");
  return sample_groups(spec, {n_per_group, n_per_group, n_per_group, n_per_group}, seed);
}

AuxDataset noise_dataset(const LabeledDataset& data, double sigma2_noise, std::uint64_t seed) {
  if (!(sigma2_noise >= 0)) throw InvalidSpec("noise variance must be non-negative");
  AuxDataset out;
  out.targets = data.features;
  out.noised = data.features;
  if (sigma2_noise == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(sigma2_noise));
  // Row-major draw order.
  for (Index i = 0; i < out.noised.rows(); ++i)
    for (Index j = 0; j < out.noised.cols(); ++j) out.noised(i, j) += normal(rng);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_csv(std::ostream& os, const LabeledDataset& data) {
  os << "y,s,group";
  for (Index j = 0; j < data.dim(); ++j) os << ",x" << j;
  os << '\n';
  os << std::setprecision(17);
  for (Index i = 0; i < data.size(); ++i) {
    os << data.labels[i] << ',' << data.spurious_attrs[i] << ','
       << (data.has_groups() ? data.group_ids[i] : group_id(data.labels[i], data.spurious_attrs[i]));
    for (Index j = 0; j < data.dim(); ++j) os << ',' << data.features(i, j);
    os << '\n';
  }
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

LabeledDataset read_csv(std::istream& is, Index d_c) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 4 || header[0] != "y" || header[1] != "s" || header[2] != "group")
    throw InvalidInput("CSV header must start with y,s,group,x0");
  const auto d = static_cast<Index>(header.size() - 3);
  for (Index j = 0; j < d; ++j)
    if (header[3 + j] != "x" + std::to_string(j)) throw InvalidInput("bad feature column name");
  if (d_c < 1 || d_c >= d) throw InvalidInput("d_c must be in [1, d)");

  std::vector<std::vector<double>> rows;
  std::vector<int> ys, ss, gs;
  Index lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (static_cast<Index>(cells.size()) != d + 3)
      throw InvalidInput("CSV line " + std::to_string(lineno) + ": wrong column count");
    try {
      ys.push_back(std::stoi(cells[0]));
      ss.push_back(std::stoi(cells[1]));
      gs.push_back(std::stoi(cells[2]));
      std::vector<double> x(static_cast<std::size_t>(d));
      for (Index j = 0; j < d; ++j) x[j] = std::stod(cells[3 + j]);
      rows.push_back(std::move(x));
    } catch (const std::logic_error&) {
      throw InvalidInput("CSV line " + std::to_string(lineno) + ": unparseable number");
    }
  }
  LabeledDataset out;
  const auto n = static_cast<Index>(rows.size());
  out.features.resize(n, d);
  out.labels.resize(n);
  out.spurious_attrs.resize(n);
  out.group_ids.resize(n);
  out.d_c = d_c;
  out.d_s = d - d_c;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) out.features(i, j) = rows[i][j];
    out.labels[i] = ys[i];
    out.spurious_attrs[i] = ss[i];
    out.group_ids[i] = gs[i];
  }
  out.check_consistent();
  return out;
}

// ---------------------------------------------------------------------------
// Binary cache

namespace {

constexpr char kMagic[4] = {'G', 'R', 'D', 'S'};
constexpr std::uint32_t kBinaryVersion = 1;

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t k = 0; k < sizeof(T); ++k)
    buf[k] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * k)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw InvalidInput("truncated binary dataset");
  std::uint64_t v = 0;
  for (std::size_t k = 0; k < sizeof(T); ++k) v |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
  return static_cast<T>(v);
}

}  // namespace

void write_binary(std::ostream& os, const LabeledDataset& data) {
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kBinaryVersion);
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(data.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.d_c));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.d_s));
  for (Index i = 0; i < data.size(); ++i) {
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(static_cast<std::int8_t>(data.labels[i])));
    put_le<std::uint8_t>(os,
                         static_cast<std::uint8_t>(static_cast<std::int8_t>(data.spurious_attrs[i])));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(group_id(data.labels[i], data.spurious_attrs[i])));
    for (Index j = 0; j < data.dim(); ++j)
      put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(data.features(i, j)));
  }
}

LabeledDataset read_binary(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
    throw InvalidInput("not a grouprobe binary dataset");
  if (get_le<std::uint32_t>(is) != kBinaryVersion) throw InvalidInput("unsupported binary version");
  const auto n = static_cast<Index>(get_le<std::uint64_t>(is));
  LabeledDataset out;
  out.d_c = static_cast<Index>(get_le<std::uint32_t>(is));
  out.d_s = static_cast<Index>(get_le<std::uint32_t>(is));
  const Index d = out.d_c + out.d_s;
  out.features.resize(n, d);
  out.labels.resize(n);
  out.spurious_attrs.resize(n);
  out.group_ids.resize(n);
  for (Index i = 0; i < n; ++i) {
    out.labels[i] = static_cast<std::int8_t>(get_le<std::uint8_t>(is));
    out.spurious_attrs[i] = static_cast<std::int8_t>(get_le<std::uint8_t>(is));
    out.group_ids[i] = get_le<std::uint8_t>(is);
    for (Index j = 0; j < d; ++j) out.features(i, j) = std::bit_cast<double>(get_le<std::uint64_t>(is));
  }
  out.check_consistent();
  return out;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void save_dataset(const std::string& path, const LabeledDataset& data) {
  const bool binary = ends_with(path, ".bin");
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw InvalidInput("cannot open " + path + " for writing");
  if (binary)
    write_binary(os, data);
  else
    write_csv(os, data);
}

LabeledDataset load_dataset(const std::string& path, Index d_c) {
  const bool binary = ends_with(path, ".bin");
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw InvalidInput("cannot open " + path);
  return binary ? read_binary(is) : read_csv(is, d_c);
}

}  // namespace grouprobe
