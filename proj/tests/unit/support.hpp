#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pag/model.hpp"
#include "pag/rng.hpp"

namespace pag::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pag_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Random ReLU network in0-hidden-classes with weights N(0, scale^2).
inline MlpModel random_mlp(std::uint64_t seed, std::size_t in, std::size_t hidden, std::size_t classes,
                           InputBox box, double scale = 1.0) {
  SplitMix64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  auto layer = [&](std::size_t rows, std::size_t cols, Activation act) {
    AffineLayer l;
    l.rows = rows;
    l.cols = cols;
    l.activation = act;
    for (std::size_t k = 0; k < rows * cols; ++k) l.weight.push_back(n(rng));
    for (std::size_t k = 0; k < rows; ++k) l.bias.push_back(0.5 * n(rng));
    return l;
  };
  std::vector<AffineLayer> layers;
  layers.push_back(layer(hidden, in, Activation::Relu));
  layers.push_back(layer(classes, hidden, Activation::Identity));
  return MlpModel(std::move(layers), std::move(box));
}

/// Two-class single-layer model with logits (0, w.x + b).
inline MlpModel linear_model(std::vector<double> w, double b, InputBox box) {
  AffineLayer l;
  l.rows = 2;
  l.cols = w.size();
  l.activation = Activation::Identity;
  l.weight.assign(w.size(), 0.0);
  l.weight.insert(l.weight.end(), w.begin(), w.end());
  l.bias = {0.0, b};
  return MlpModel({l}, std::move(box));
}

}  // namespace pag::test
