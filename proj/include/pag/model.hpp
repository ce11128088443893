#pragma once

// Feed-forward affine+ReLU classifier: forward pass, softmax confidence, input
// gradients, interval bound propagation, and the JSON weight format.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pag {

enum class Activation { Relu, Identity };

std::string_view to_string(Activation activation);

/// y = act(W x + b) with W stored row-major (rows = out_dim, cols = in_dim).
struct AffineLayer {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weight;
  std::vector<double> bias;
  Activation activation = Activation::Relu;

  double at(std::size_t r, std::size_t c) const { return weight[r * cols + c]; }
};

/// Per-dimension clamp bounds of the input space.
struct InputBox {
  std::vector<double> lo;
  std::vector<double> hi;

  static InputBox uniform(std::size_t dim, double lo, double hi);
  std::size_t dim() const { return lo.size(); }
  bool contains(std::span<const double> x) const;
  void clamp(std::span<double> x) const;
};

struct Prediction {
  std::vector<double> logits;
  std::size_t class_index = 0;
  double confidence = 0.0;
};

enum class GradientLoss { MarginToRunnerUp, CrossEntropyTrueClass };

/// Scratch buffers for allocation-free repeated forward passes.
struct ForwardWorkspace {
  std::vector<double> a;
  std::vector<double> b;
};

/// Numerically stable softmax (max-subtracted).
std::vector<double> softmax(std::span<const double> logits);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Immutable feed-forward classifier. Construction validates that layer
/// dimensions compose, every entry is finite, hidden layers are ReLU, and the
/// output has at least two classes. Throws Error{MalformedFile} otherwise.
class MlpModel {
 public:
  explicit MlpModel(std::vector<AffineLayer> layers);
  MlpModel(std::vector<AffineLayer> layers, InputBox input_box);

  std::size_t input_dim() const { return layers_.front().cols; }
  std::size_t num_classes() const { return layers_.back().rows; }
  const std::vector<AffineLayer>& layers() const { return layers_; }
  const InputBox& input_box() const { return input_box_; }

  std::vector<double> logits(std::span<const double> x) const;
  /// Same as logits() but reuses `ws`; the span is valid until its next use.
  std::span<const double> logits(std::span<const double> x, ForwardWorkspace& ws) const;
  Prediction forward(std::span<const double> x) const;
  std::size_t predict_class(std::span<const double> x) const;
  std::size_t predict_class(std::span<const double> x, ForwardWorkspace& ws) const;

  /// d loss / d x by reverse accumulation. The reference class defaults to the
  /// class predicted at x. For the margin loss the runner-up is the highest
  /// logit among the other classes at x. ReLU'(0) is taken as 0.
  std::vector<double> input_gradient(std::span<const double> x, GradientLoss loss,
                                     std::optional<std::size_t> reference_class = {}) const;

  /// Interval bound propagation of the box [lo, hi]. Returns, for every class j,
  /// an upper bound on logit_j - logit_ref over the box (entry ref is 0).
  /// The last affine map is applied to the logit differences directly, so for
  /// a single affine layer the bound is exact.
  std::vector<double> margin_upper_bounds(std::span<const double> lo, std::span<const double> hi,
                                          std::size_t reference_class) const;

  /// Stable content hash of weights, activations and input box.
  std::string hash() const;

 private:
  void check_input(std::span<const double> x) const;

  std::vector<AffineLayer> layers_;
  InputBox input_box_;
};

std::string model_to_json(const MlpModel& model);
MlpModel model_from_json(std::string_view text);
MlpModel load_model(const std::filesystem::path& path);
void save_model(const MlpModel& model, const std::filesystem::path& path);

}  // namespace pag
