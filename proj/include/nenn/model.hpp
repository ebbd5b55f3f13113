#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nenn/approx.hpp"
#include "nenn/selection.hpp"
#include "nenn/tensor.hpp"

namespace nenn {

// Tag values double as the record tags of the model file format.
enum class LayerKind : std::uint8_t { dense = 1, conv2d = 2, relu = 3, flatten = 4 };

const char* layer_kind_name(LayerKind kind);

// One layer of a feed-forward network. Activations of rank 3 are stored
// channels-last ([H, W, C]); conv kernels are C_out x C_in x kH x kW.
struct Layer {
  LayerKind kind = LayerKind::relu;
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::optional<ApproxParams> approx;
  // Standard deviation of additive Gaussian noise on the pre-activation,
  // resampled on every forward. Zero disables it.
  double noise_sigma = 0.0;

  static Layer dense(Tensor weight, Tensor bias);
  static Layer conv2d(Tensor kernel, Tensor bias, std::size_t stride = 1,
                      std::size_t padding = 0);
  static Layer relu();
  static Layer flatten();

  bool is_linear() const {
    return kind == LayerKind::dense || kind == LayerKind::conv2d;
  }
  // Rows of the weight matrix (output channels).
  std::size_t out_features() const;
  // Length of one inner product: d for dense, C_in * kH * kW for conv.
  std::size_t in_features() const;

  friend bool operator==(const Layer&, const Layer&) = default;
};

class Model {
 public:
  Model(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers);

  const Shape& input_shape() const { return shapes_.front(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t size() const { return layers_.size(); }

  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  // Mutable access for parameter updates. Callers must not change shapes.
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Layer>& layers() const { return layers_; }

  // Input shape of layer i; shape_before(size()) is the logits shape.
  const Shape& shape_before(std::size_t i) const { return shapes_.at(i); }
  const Shape& shape_after(std::size_t i) const { return shapes_.at(i + 1); }

  // Output positions of a linear layer: 1 for dense, H_out * W_out for conv.
  std::size_t positions(std::size_t i) const;

  void attach_approx(std::size_t i, ApproxParams params);

  std::size_t parameter_count() const;

  friend bool operator==(const Model&, const Model&) = default;

 private:
  std::size_t num_classes_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
};

struct ForwardOptions {
  // Null runs the plain network.
  const InjectionConfig* injection = nullptr;
  // Seeds projection resampling and additive noise; ignored when neither is
  // active.
  std::uint64_t noise_seed = 0;
  // Compute precise outputs only at essential positions. Disabling computes
  // every precise output and then mixes; results are identical.
  bool skip_nonessential = true;
};

struct LayerTrace {
  Tensor input;
  Tensor output;
  Tensor patches;         // linear layers: positions x d
  Tensor pre_activation;  // z; zero outside the mask when skipping
  Tensor approximation;   // z~, instrumented layers only
  Mask mask;              // instrumented layers only
  bool instrumented = false;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
};

Tensor forward(const Model& model, const Tensor& x,
               const ForwardOptions& options = {},
               ForwardTrace* trace = nullptr);

std::size_t predict(const Model& model, const Tensor& x,
                    const ForwardOptions& options = {});

double cross_entropy(const Tensor& logits, std::size_t label);

// Gradient of one layer's parameters; empty tensors for parameter-free layers.
struct ParamGrad {
  Tensor weight;
  Tensor bias;
};
using ModelGrad = std::vector<ParamGrad>;

ModelGrad zero_grad(const Model& model);
void accumulate(ModelGrad& into, const ModelGrad& g, double scale = 1.0);

struct LossGrad {
  double loss = 0.0;
  Tensor logits;
  Tensor input_grad;  // empty unless requested
  ModelGrad params;   // empty unless requested
};

// Softmax cross-entropy loss and its exact reverse-mode gradients. Through an
// injected layer the gradient flows only via essential positions; z~ is a
// constant.
LossGrad loss_and_grad(const Model& model, const Tensor& x, std::size_t label,
                       const ForwardOptions& options, bool want_input_grad,
                       bool want_param_grad);

Tensor input_grad(const Model& model, const Tensor& x, std::size_t label,
                  const ForwardOptions& options = {});

// Direct nested-loop convolution on a channels-last input; reference only.
Tensor conv2d_direct(const Tensor& input, const Tensor& kernel,
                     const Tensor& bias, std::size_t stride,
                     std::size_t padding);

}  // namespace nenn
