#pragma once

// Datasets: synthetic generators and CSV ingestion.
//
// CSV rows are `label,x_1,...,x_d` with 0-based integer labels. An optional
// header row whose first field is `label` and lines starting with '#' are
// skipped.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mixcert/error.hpp"
#include "mixcert/linalg.hpp"
#include "mixcert/model_io.hpp"
#include "mixcert/random.hpp"

namespace mixcert {

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// Axis-aligned box that attacks may clip to.
struct InputBox {
  double lo = 0.0;
  double hi = 1.0;
};

struct Dataset {
  Matrix inputs;  // n x d
  std::vector<std::size_t> labels;
  std::size_t class_count = 2;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::optional<InputBox> box;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }
  bool empty() const { return labels.empty(); }
  VectorView input(std::size_t i) const { return inputs.row(i); }

  void validate() const {
    if (inputs.rows() != labels.size()) throw InputError("dataset inputs and labels differ in count");
    if (class_count < 2) throw InputError("dataset needs at least two classes");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_count) {
        throw InputError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                         " is not below class count " + std::to_string(class_count));
      }
    }
    if (!inputs.all_finite()) throw InputError("dataset contains non-finite inputs");
  }

  std::vector<std::size_t> label_counts() const {
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t y : labels) ++counts[y];
    return counts;
  }
};

/// Two interleaving half circles. Points lie evenly along each arc before
/// Gaussian noise; row order is shuffled with the same seed.
inline Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed,
                              Split split = Split::train) {
  if (n < 2) throw InputError("two moons needs at least 2 points");
  if (n % 2 != 0) throw InputError("two moons needs an even number of points");
  if (!(noise >= 0.0)) throw InputError("noise must be non-negative");
  const std::size_t per_class = n / 2;
  Dataset ds;
  ds.inputs = Matrix(n, 2);
  ds.labels.resize(n);
  ds.class_count = 2;
  ds.split = split;
  ds.seed = seed;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  CounterRng shuffle_rng(derive_seed(seed, 1));
  shuffle_rng.shuffle(std::span<std::size_t>(order));

  CounterRng noise_rng(derive_seed(seed, 2));
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t cls = k < per_class ? 0 : 1;
    const std::size_t j = cls == 0 ? k : k - per_class;
    const double t = per_class == 1 ? 0.0
                                    : std::numbers::pi * static_cast<double>(j) /
                                          static_cast<double>(per_class - 1);
    double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += noise * noise_rng.normal();
    y += noise * noise_rng.normal();
    const std::size_t row = order[k];
    ds.inputs(row, 0) = x;
    ds.inputs(row, 1) = y;
    ds.labels[row] = cls;
  }
  return ds;
}

/// Class k ~ N(means[k], noise^2 I). Classes get n / c points each; the
/// remainder goes to the lowest class indices.
inline Dataset make_gaussian_blobs(std::size_t c, std::size_t n, const Matrix& means, double noise,
                                   std::uint64_t seed, Split split = Split::train) {
  if (c < 2) throw InputError("blobs need at least 2 classes");
  if (means.rows() != c) {
    throw InputError("blobs need one mean per class: got " + std::to_string(means.rows()) +
                     " rows for " + std::to_string(c) + " classes");
  }
  if (means.cols() == 0) throw InputError("blob means have zero dimension");
  if (n < c) throw InputError("blobs need at least one point per class");
  if (!(noise >= 0.0)) throw InputError("noise must be non-negative");
  const std::size_t d = means.cols();
  Dataset ds;
  ds.inputs = Matrix(n, d);
  ds.labels.resize(n);
  ds.class_count = c;
  ds.split = split;
  ds.seed = seed;
  CounterRng rng(derive_seed(seed, 3));
  std::size_t row = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t count = n / c + (k < n % c ? 1 : 0);
    for (std::size_t j = 0; j < count; ++j, ++row) {
      for (std::size_t a = 0; a < d; ++a) ds.inputs(row, a) = means(k, a) + noise * rng.normal();
      ds.labels[row] = k;
    }
  }
  return ds;
}

/// Appends one coordinate that encodes the label at a small scale:
/// scale * (2 y / (c - 1) - 1) + N(0, noise^2). A perfectly predictive but
/// fragile feature.
inline Dataset append_shortcut_feature(const Dataset& in, double scale, double noise,
                                       std::uint64_t seed) {
  Dataset out = in;
  const std::size_t d = in.dim();
  out.inputs = Matrix(in.size(), d + 1);
  CounterRng rng(derive_seed(seed, 4));
  const double span = static_cast<double>(in.class_count - 1);
  for (std::size_t i = 0; i < in.size(); ++i) {
    for (std::size_t a = 0; a < d; ++a) out.inputs(i, a) = in.inputs(i, a);
    const double level = 2.0 * static_cast<double>(in.labels[i]) / span - 1.0;
    out.inputs(i, d) = scale * level + noise * rng.normal();
  }
  return out;
}

inline void save_csv_dataset(std::ostream& out, const Dataset& ds) {
  out << "label";
  for (std::size_t a = 0; a < ds.dim(); ++a) out << ",x_" << (a + 1);
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (std::size_t a = 0; a < ds.dim(); ++a) out << ',' << format_double(ds.inputs(i, a));
    out << '\n';
  }
}

inline void save_csv_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  save_csv_dataset(out, ds);
}

struct CsvSchema {
  /// When unset, the class count is max label + 1 (at least 2).
  std::optional<std::size_t> class_count;
  Split split = Split::test;
  std::optional<InputBox> box;
};

inline Dataset load_csv_dataset(std::istream& in, const CsvSchema& schema = {},
                                const std::string& name = "<stream>") {
  std::vector<std::size_t> labels;
  Vector values;
  std::size_t d = 0;
  bool have_width = false;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw FormatError(name + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    for (auto& f : fields) f = trim(f);
    if (fields.front() == "label") continue;
    if (fields.size() < 2) fail("row needs a label and at least one feature");
    if (!have_width) {
      d = fields.size() - 1;
      have_width = true;
    } else if (fields.size() - 1 != d) {
      fail("row has " + std::to_string(fields.size() - 1) + " features, expected " +
           std::to_string(d));
    }
    std::size_t label = 0;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(fields[0], &used);
      if (used != fields[0].size() || v < 0) throw std::invalid_argument(fields[0]);
      label = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      fail("label '" + fields[0] + "' is not a non-negative integer");
    }
    if (schema.class_count && label >= *schema.class_count) {
      fail("label " + std::to_string(label) + " is not below class count " +
           std::to_string(*schema.class_count));
    }
    for (std::size_t a = 1; a < fields.size(); ++a) {
      try {
        std::size_t used = 0;
        const double v = std::stod(fields[a], &used);
        if (used != fields[a].size() || !std::isfinite(v)) throw std::invalid_argument(fields[a]);
        values.push_back(v);
      } catch (const std::exception&) {
        fail("column " + std::to_string(a + 1) + " value '" + fields[a] + "' is not a finite number");
      }
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw FormatError(name + ": no data rows");
  Dataset ds;
  ds.inputs = Matrix(labels.size(), d, std::move(values));
  std::size_t max_label = 0;
  for (std::size_t y : labels) max_label = std::max(max_label, y);
  ds.class_count = schema.class_count.value_or(std::max<std::size_t>(2, max_label + 1));
  ds.labels = std::move(labels);
  ds.split = schema.split;
  ds.box = schema.box;
  ds.validate();
  return ds;
}

inline Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset '" + path + "'");
  return load_csv_dataset(in, schema, path);
}

}  // namespace mixcert
