#pragma once

// Text persistence for FeedForwardModel.
//
//   format_version: 1
//   input_dim: <d>
//   class_count: <c>
//   layer_count: <L>
//   layer: 0
//   rows: <out>
//   cols: <in>
//   activation: identity|relu|tanh
//   weights: <rows*cols numbers, row-major, space separated>
//   bias: <rows numbers>
//   layer: 1
//   ...
//
// Numbers are written in shortest round-trip form, so a save/load cycle is exact.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mixcert/error.hpp"
#include "mixcert/model.hpp"

namespace mixcert {

inline constexpr int kModelFormatVersion = 1;

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void save_model(std::ostream& out, const FeedForwardModel& model) {
  out << "format_version: " << kModelFormatVersion << '\n';
  out << "input_dim: " << model.input_dim() << '\n';
  out << "class_count: " << model.class_count() << '\n';
  out << "layer_count: " << model.layers().size() << '\n';
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    const Layer& l = model.layers()[k];
    out << "layer: " << k << '\n';
    out << "rows: " << l.out_dim() << '\n';
    out << "cols: " << l.in_dim() << '\n';
    out << "activation: " << to_string(l.activation) << '\n';
    out << "weights:";
    for (double w : l.weights.data()) out << ' ' << format_double(w);
    out << '\n';
    out << "bias:";
    for (double b : l.bias) out << ' ' << format_double(b);
    out << '\n';
  }
}

inline void save_model(const std::string& path, const FeedForwardModel& model) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  save_model(out, model);
  if (!out) throw Error("failed writing model to '" + path + "'");
}

namespace detail {

class ModelReader {
 public:
  explicit ModelReader(std::istream& in) : in_(in) {}

  std::string field(const std::string& key) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.empty() || line[0] == '#') continue;
      const auto colon = line.find(':');
      if (colon == std::string::npos || line.substr(0, colon) != key) {
        fail("expected field '" + key + "'");
      }
      std::string value = line.substr(colon + 1);
      const auto start = value.find_first_not_of(' ');
      return start == std::string::npos ? std::string() : value.substr(start);
    }
    fail("unexpected end of file, expected field '" + key + "'");
    return {};
  }

  std::size_t count(const std::string& key) {
    const std::string v = field(key);
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) fail("bad integer for '" + key + "'");
    return out;
  }

  Vector numbers(const std::string& key, std::size_t expected) {
    std::istringstream ss(field(key));
    Vector out;
    out.reserve(expected);
    std::string token;
    while (ss >> token) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        fail("bad number '" + token + "' in '" + key + "'");
      }
    }
    if (out.size() != expected) {
      fail("'" + key + "' has " + std::to_string(out.size()) + " values, expected " +
           std::to_string(expected));
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("model file line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

}  // namespace detail

inline FeedForwardModel load_model(std::istream& in) {
  detail::ModelReader reader(in);
  const std::size_t version = reader.count("format_version");
  if (version != static_cast<std::size_t>(kModelFormatVersion)) {
    reader.fail("unsupported format_version " + std::to_string(version));
  }
  const std::size_t input_dim = reader.count("input_dim");
  const std::size_t class_count = reader.count("class_count");
  const std::size_t layer_count = reader.count("layer_count");
  std::vector<Layer> layers;
  for (std::size_t k = 0; k < layer_count; ++k) {
    if (reader.count("layer") != k) reader.fail("layers out of order");
    const std::size_t rows = reader.count("rows");
    const std::size_t cols = reader.count("cols");
    Layer layer;
    try {
      layer.activation = parse_activation(reader.field("activation"));
    } catch (const InputError& e) {
      reader.fail(e.what());
    }
    layer.weights = Matrix(rows, cols, reader.numbers("weights", rows * cols));
    layer.bias = reader.numbers("bias", rows);
    layers.push_back(std::move(layer));
  }
  FeedForwardModel model;
  try {
    model = FeedForwardModel(std::move(layers));
  } catch (const InputError& e) {
    throw FormatError(std::string("invalid model: ") + e.what());
  }
  if (model.input_dim() != input_dim || model.class_count() != class_count) {
    throw FormatError("model header dims do not match layer shapes");
  }
  return model;
}

inline FeedForwardModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file '" + path + "'");
  return load_model(in);
}

}  // namespace mixcert
