#include "pag/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "detail/text.hpp"
#include "pag/errors.hpp"

namespace pag {
namespace {

using nlohmann::json;

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::MalformedFile, what); }

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

// y = W x + b, accumulated in a fixed order shared with the interval path.
void affine(const AffineLayer& layer, std::span<const double> x, std::vector<double>& out) {
  out.assign(layer.rows, 0.0);
  for (std::size_t r = 0; r < layer.rows; ++r) {
    double acc = layer.bias[r];
    const double* row = layer.weight.data() + r * layer.cols;
    for (std::size_t c = 0; c < layer.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

void relu_inplace(std::vector<double>& v) {
  for (double& d : v) d = d > 0.0 ? d : 0.0;
}

std::size_t runner_up(std::span<const double> logits, std::size_t excluded) {
  std::size_t best = excluded == 0 ? 1 : 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j != excluded && logits[j] > logits[best]) best = j;
  }
  return best;
}

}  // namespace

std::string_view to_string(Activation activation) {
  return activation == Activation::Relu ? "relu" : "identity";
}

InputBox InputBox::uniform(std::size_t dim, double lo, double hi) {
  return InputBox{std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
}

bool InputBox::contains(std::span<const double> x) const {
  if (x.size() != lo.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
  }
  return true;
}

void InputBox::clamp(std::span<double> x) const {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double top = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

MlpModel::MlpModel(std::vector<AffineLayer> layers)
    : MlpModel(std::move(layers), InputBox{}) {}

MlpModel::MlpModel(std::vector<AffineLayer> layers, InputBox input_box)
    : layers_(std::move(layers)), input_box_(std::move(input_box)) {
  if (layers_.empty()) malformed("model has no layers");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const AffineLayer& layer = layers_[k];
    const std::string where = "layer " + std::to_string(k);
    if (layer.rows == 0 || layer.cols == 0) malformed(where + " has a zero dimension");
    if (layer.weight.size() != layer.rows * layer.cols) {
      malformed(where + " weight has " + std::to_string(layer.weight.size()) + " entries, expected " +
                std::to_string(layer.rows * layer.cols));
    }
    if (layer.bias.size() != layer.rows) malformed(where + " bias length differs from rows");
    if (!all_finite(layer.weight) || !all_finite(layer.bias)) malformed(where + " has a non-finite entry");
    if (k + 1 < layers_.size()) {
      if (layer.activation != Activation::Relu) malformed(where + " is hidden but not relu");
      if (layers_[k + 1].cols != layer.rows) {
        malformed(where + " output dim " + std::to_string(layer.rows) + " does not match next input dim " +
                  std::to_string(layers_[k + 1].cols));
      }
    }
  }
  if (num_classes() < 2) malformed("model needs at least two classes");
  if (input_box_.lo.empty() && input_box_.hi.empty()) input_box_ = InputBox::uniform(input_dim(), 0.0, 1.0);
  if (input_box_.lo.size() != input_dim() || input_box_.hi.size() != input_dim()) {
    malformed("input box dimension differs from input_dim");
  }
  for (std::size_t i = 0; i < input_dim(); ++i) {
    if (!std::isfinite(input_box_.lo[i]) || !std::isfinite(input_box_.hi[i]) ||
        input_box_.lo[i] > input_box_.hi[i]) {
      malformed("input box entry " + std::to_string(i) + " is not a finite interval");
    }
  }
}

void MlpModel::check_input(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "input has " + std::to_string(x.size()) +
                                                  " entries, model expects " + std::to_string(input_dim()));
  }
}

std::vector<double> MlpModel::logits(std::span<const double> x) const {
  ForwardWorkspace ws;
  const auto out = logits(x, ws);
  return {out.begin(), out.end()};
}

std::span<const double> MlpModel::logits(std::span<const double> x, ForwardWorkspace& ws) const {
  check_input(x);
  std::span<const double> cur = x;
  std::vector<double>* dst = &ws.a;
  for (const AffineLayer& layer : layers_) {
    affine(layer, cur, *dst);
    if (layer.activation == Activation::Relu) relu_inplace(*dst);
    cur = *dst;
    dst = dst == &ws.a ? &ws.b : &ws.a;
  }
  return cur;
}

Prediction MlpModel::forward(std::span<const double> x) const {
  Prediction p;
  p.logits = logits(x);
  p.class_index = argmax(p.logits);
  p.confidence = softmax(p.logits)[p.class_index];
  return p;
}

std::size_t MlpModel::predict_class(std::span<const double> x) const { return argmax(logits(x)); }

std::size_t MlpModel::predict_class(std::span<const double> x, ForwardWorkspace& ws) const {
  return argmax(logits(x, ws));
}

std::vector<double> MlpModel::input_gradient(std::span<const double> x, GradientLoss loss,
                                             std::optional<std::size_t> reference_class) const {
  check_input(x);
  // Forward pass keeping pre-activations.
  std::vector<std::vector<double>> pre(layers_.size());
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    affine(layers_[k], cur, pre[k]);
    cur = pre[k];
    if (layers_[k].activation == Activation::Relu) relu_inplace(cur);
  }
  const std::vector<double>& out = cur;
  const std::size_t ref = reference_class.value_or(argmax(out));
  if (ref >= num_classes()) {
    throw Error(ErrorCode::DimensionMismatch, "reference class " + std::to_string(ref) + " out of range");
  }

  std::vector<double> grad(num_classes(), 0.0);
  if (loss == GradientLoss::MarginToRunnerUp) {
    grad[runner_up(out, ref)] += 1.0;
    grad[ref] -= 1.0;
  } else {
    grad = softmax(out);
    grad[ref] -= 1.0;
  }

  for (std::size_t k = layers_.size(); k-- > 0;) {
    const AffineLayer& layer = layers_[k];
    if (layer.activation == Activation::Relu) {
      for (std::size_t r = 0; r < layer.rows; ++r) {
        if (!(pre[k][r] > 0.0)) grad[r] = 0.0;
      }
    }
    std::vector<double> back(layer.cols, 0.0);
    for (std::size_t r = 0; r < layer.rows; ++r) {
      const double g = grad[r];
      if (g == 0.0) continue;
      const double* row = layer.weight.data() + r * layer.cols;
      for (std::size_t c = 0; c < layer.cols; ++c) back[c] += g * row[c];
    }
    grad.swap(back);
  }
  return grad;
}

std::vector<double> MlpModel::margin_upper_bounds(std::span<const double> lo, std::span<const double> hi,
                                                  std::size_t reference_class) const {
  check_input(lo);
  check_input(hi);
  if (reference_class >= num_classes()) {
    throw Error(ErrorCode::DimensionMismatch, "reference class out of range");
  }
  std::vector<double> cur_lo(lo.begin(), lo.end());
  std::vector<double> cur_hi(hi.begin(), hi.end());

  auto propagate = [](const AffineLayer& layer, const std::vector<double>& in_lo,
                      const std::vector<double>& in_hi, std::vector<double>& out_lo,
                      std::vector<double>& out_hi) {
    out_lo.assign(layer.rows, 0.0);
    out_hi.assign(layer.rows, 0.0);
    for (std::size_t r = 0; r < layer.rows; ++r) {
      double acc_lo = layer.bias[r];
      double acc_hi = layer.bias[r];
      const double* row = layer.weight.data() + r * layer.cols;
      for (std::size_t c = 0; c < layer.cols; ++c) {
        const double w = row[c];
        if (w >= 0.0) {
          acc_lo += w * in_lo[c];
          acc_hi += w * in_hi[c];
        } else {
          acc_lo += w * in_hi[c];
          acc_hi += w * in_lo[c];
        }
      }
      out_lo[r] = acc_lo;
      out_hi[r] = acc_hi;
    }
  };

  std::vector<double> next_lo;
  std::vector<double> next_hi;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
    propagate(layers_[k], cur_lo, cur_hi, next_lo, next_hi);
    relu_inplace(next_lo);
    relu_inplace(next_hi);
    cur_lo.swap(next_lo);
    cur_hi.swap(next_hi);
  }

  const AffineLayer& last = layers_.back();
  std::vector<double> bounds(num_classes(), 0.0);
  if (last.activation == Activation::Identity) {
    // Bound (w_j - w_ref) . h + (b_j - b_ref) directly.
    AffineLayer diff{num_classes(), last.cols, std::vector<double>(last.weight.size()),
                     std::vector<double>(num_classes()), Activation::Identity};
    for (std::size_t j = 0; j < num_classes(); ++j) {
      for (std::size_t c = 0; c < last.cols; ++c) {
        diff.weight[j * last.cols + c] = last.at(j, c) - last.at(reference_class, c);
      }
      diff.bias[j] = last.bias[j] - last.bias[reference_class];
    }
    propagate(diff, cur_lo, cur_hi, next_lo, next_hi);
    bounds = next_hi;
  } else {
    propagate(last, cur_lo, cur_hi, next_lo, next_hi);
    relu_inplace(next_lo);
    relu_inplace(next_hi);
    for (std::size_t j = 0; j < num_classes(); ++j) bounds[j] = next_hi[j] - next_lo[reference_class];
  }
  bounds[reference_class] = 0.0;
  return bounds;
}

std::string MlpModel::hash() const { return detail::fnv1a64_hex(model_to_json(*this)); }

std::string model_to_json(const MlpModel& model) {
  json doc;
  doc["input_dim"] = model.input_dim();
  doc["num_classes"] = model.num_classes();
  doc["input_box"] = {{"lo", model.input_box().lo}, {"hi", model.input_box().hi}};
  json layers = json::array();
  for (const AffineLayer& layer : model.layers()) {
    layers.push_back({{"rows", layer.rows},
                      {"cols", layer.cols},
                      {"activation", std::string(to_string(layer.activation))},
                      {"weight", layer.weight},
                      {"bias", layer.bias}});
  }
  doc["layers"] = std::move(layers);
  return doc.dump();
}

MlpModel model_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    malformed(std::string("model JSON does not parse: ") + e.what());
  }
  try {
    const auto input_dim = doc.at("input_dim").get<std::size_t>();
    const auto num_classes = doc.at("num_classes").get<std::size_t>();
    std::vector<AffineLayer> layers;
    for (const json& entry : doc.at("layers")) {
      AffineLayer layer;
      layer.rows = entry.at("rows").get<std::size_t>();
      layer.cols = entry.at("cols").get<std::size_t>();
      const auto act = entry.at("activation").get<std::string>();
      if (act == "relu") {
        layer.activation = Activation::Relu;
      } else if (act == "identity") {
        layer.activation = Activation::Identity;
      } else {
        malformed("unknown activation '" + act + "'");
      }
      layer.weight = entry.at("weight").get<std::vector<double>>();
      layer.bias = entry.at("bias").get<std::vector<double>>();
      layers.push_back(std::move(layer));
    }
    InputBox box;
    if (doc.contains("input_box")) {
      box.lo = doc["input_box"].at("lo").get<std::vector<double>>();
      box.hi = doc["input_box"].at("hi").get<std::vector<double>>();
    }
    MlpModel model(std::move(layers), std::move(box));
    if (model.input_dim() != input_dim) malformed("input_dim does not match the first layer");
    if (model.num_classes() != num_classes) malformed("num_classes does not match the last layer");
    return model;
  } catch (const json::exception& e) {
    malformed(std::string("model JSON has a bad field: ") + e.what());
  }
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) malformed("cannot open model file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::DatasetIo, "cannot write model file " + path.string());
  out << model_to_json(model) << '\n';
}

}  // namespace pag
