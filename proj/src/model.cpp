#include "nenn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nenn/error.hpp"
#include "nenn/rng.hpp"

namespace nenn {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
      return "dense";
    case LayerKind::conv2d:
      return "conv2d";
    case LayerKind::relu:
      return "relu";
    case LayerKind::flatten:
      return "flatten";
  }
  return "unknown";
}

Layer Layer::dense(Tensor weight, Tensor bias) {
  if (weight.rank() != 2) throw ShapeError("dense weight must be n x d");
  if (bias.rank() != 1 || bias.size() != weight.shape()[0]) {
    throw ShapeError("dense bias must have length n");
  }
  Layer l;
  l.kind = LayerKind::dense;
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  return l;
}

Layer Layer::conv2d(Tensor kernel, Tensor bias, std::size_t stride,
                    std::size_t padding) {
  if (kernel.rank() != 4) throw ShapeError("conv kernel must be C_out x C_in x kH x kW");
  if (bias.rank() != 1 || bias.size() != kernel.shape()[0]) {
    throw ShapeError("conv bias must have length C_out");
  }
  if (stride == 0) throw ShapeError("conv stride must be positive");
  Layer l;
  l.kind = LayerKind::conv2d;
  l.weight = std::move(kernel);
  l.bias = std::move(bias);
  l.stride = stride;
  l.padding = padding;
  return l;
}

Layer Layer::relu() {
  Layer l;
  l.kind = LayerKind::relu;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::flatten;
  return l;
}

std::size_t Layer::out_features() const {
  return is_linear() ? weight.shape()[0] : 0;
}

std::size_t Layer::in_features() const {
  return is_linear() ? weight.size() / weight.shape()[0] : 0;
}

namespace {

struct ConvGeometry {
  std::size_t in_h, in_w, c_in, kh, kw, stride, pad, out_h, out_w, c_out;

  std::size_t positions() const { return out_h * out_w; }
  std::size_t d() const { return c_in * kh * kw; }
};

ConvGeometry conv_geometry(const Layer& layer, const Shape& in) {
  if (in.size() != 3) {
    throw ShapeError("conv2d expects a [H, W, C] input, got " + shape_to_string(in));
  }
  const auto& k = layer.weight.shape();
  ConvGeometry g{in[0], in[1], in[2], k[2], k[3], layer.stride, layer.padding,
                 0,     0,     k[0]};
  if (k[1] != g.c_in) {
    throw ShapeError("conv2d kernel expects " + std::to_string(k[1]) +
                     " input channels, got " + std::to_string(g.c_in));
  }
  if (g.in_h + 2 * g.pad < g.kh || g.in_w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d kernel larger than padded input");
  }
  g.out_h = (g.in_h + 2 * g.pad - g.kh) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

Shape output_shape(const Layer& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::dense:
      if (in.size() != 1 || in[0] != layer.in_features()) {
        throw ShapeError("dense layer expects input [" +
                         std::to_string(layer.in_features()) + "], got " +
                         shape_to_string(in));
      }
      return {layer.out_features()};
    case LayerKind::conv2d: {
      const auto g = conv_geometry(layer, in);
      return {g.out_h, g.out_w, g.c_out};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::flatten:
      return {shape_size(in)};
  }
  throw ShapeError("unknown layer kind");
}

// Rows are receptive-field vectors ordered (c_in, ky, kx) to match the kernel.
Tensor im2col(const Tensor& input, const ConvGeometry& g) {
  Tensor cols({g.positions(), g.d()});
  const auto in = input.values();
  auto out = cols.values();
  std::size_t p = 0;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox, ++p) {
      double* row = out.data() + p * g.d();
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            double v = 0.0;
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                ix < static_cast<std::ptrdiff_t>(g.in_w)) {
              v = in[(static_cast<std::size_t>(iy) * g.in_w +
                      static_cast<std::size_t>(ix)) * g.c_in + ci];
            }
            *row++ = v;
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Tensor& cols, const ConvGeometry& g, Tensor& grad_input) {
  const auto src = cols.values();
  auto dst = grad_input.values();
  std::size_t p = 0;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox, ++p) {
      const double* row = src.data() + p * g.d();
      for (std::size_t ci = 0; ci < g.c_in; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                ix < static_cast<std::ptrdiff_t>(g.in_w)) {
              dst[(static_cast<std::size_t>(iy) * g.in_w +
                   static_cast<std::size_t>(ix)) * g.c_in + ci] += *row;
            }
          }
        }
      }
    }
  }
}

double precise_output(std::span<const double> patch, const double* w, double b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < patch.size(); ++j) acc += patch[j] * w[j];
  return acc + b;
}

bool is_instrumented(const Model& model, std::size_t i,
                     const ForwardOptions& options) {
  if (options.injection == nullptr) return false;
  return options.injection->target_layers.count(i) > 0 &&
         model.layer(i).is_linear();
}

void validate_injection(const Model& model, const InjectionConfig& cfg) {
  cfg.validate();
  for (auto id : cfg.target_layers) {
    if (id >= model.size()) {
      throw ConfigError("injection targets unknown layer id " + std::to_string(id));
    }
    const auto& layer = model.layer(id);
    if (!layer.is_linear()) {
      throw ConfigError("injection target layer " + std::to_string(id) +
                        " is a " + layer_kind_name(layer.kind) +
                        " layer; only dense and conv2d layers can be injected");
    }
    if (!layer.approx) {
      throw ConfigError("injection target layer " + std::to_string(id) +
                        " has no approximation attached");
    }
  }
}

struct LinearResult {
  Tensor output;
  Tensor patches;
  Tensor pre_activation;
  Tensor approximation;
  Mask mask;
  bool instrumented = false;
};

LinearResult linear_forward(const Model& model, std::size_t index,
                            const Tensor& input, const ForwardOptions& options,
                            bool keep_intermediates) {
  const Layer& layer = model.layer(index);
  const std::size_t n = layer.out_features();
  const std::size_t d = layer.in_features();
  const std::size_t positions = model.positions(index);

  LinearResult r;
  r.patches = layer.kind == LayerKind::conv2d
                  ? im2col(input, conv_geometry(layer, input.shape()))
                  : input.reshaped({1, d});
  r.output = Tensor(model.shape_after(index));
  auto out = r.output.values();
  const double* w = layer.weight.values().data();
  const auto bias = layer.bias.values();

  r.instrumented = is_instrumented(model, index, options);
  if (!r.instrumented) {
    for (std::size_t p = 0; p < positions; ++p) {
      const auto patch = r.patches.row(p);
      for (std::size_t c = 0; c < n; ++c) {
        out[p * n + c] = precise_output(patch, w + c * d, bias[c]);
      }
    }
    if (keep_intermediates) r.pre_activation = r.output;
  } else {
    const InjectionConfig& cfg = *options.injection;
    std::optional<ApproxParams> resampled;
    const ApproxParams* approx = &*layer.approx;
    if (cfg.resample == ProjectionResample::per_forward) {
      const auto& fixed = approx->projection();
      resampled = sketch_params(
          layer.weight.reshaped({n, d}), layer.bias,
          sample_projection(fixed.k(), fixed.d(), fixed.s(),
                            derive_seed(options.noise_seed, {index, 1})),
          index);
      approx = &*resampled;
    }

    r.approximation = Tensor(model.shape_after(index));
    auto z_tilde = r.approximation.values();
    std::vector<double> projected(approx->k());
    for (std::size_t p = 0; p < positions; ++p) {
      approx->evaluate(r.patches.row(p), projected, z_tilde.subspan(p * n, n));
    }
    r.mask = layer_mask(z_tilde, positions, n, cfg);

    Tensor z(model.shape_after(index));
    auto zv = z.values();
    for (std::size_t p = 0; p < positions; ++p) {
      const auto patch = r.patches.row(p);
      for (std::size_t c = 0; c < n; ++c) {
        if (!options.skip_nonessential || r.mask.bits[p * n + c]) {
          zv[p * n + c] = precise_output(patch, w + c * d, bias[c]);
        }
      }
    }
    mix_into(zv, z_tilde, r.mask, out);
    if (keep_intermediates) r.pre_activation = std::move(z);
  }

  if (layer.noise_sigma > 0.0) {
    std::mt19937_64 gen(derive_seed(options.noise_seed, {index, 2}));
    std::normal_distribution<double> noise(0.0, layer.noise_sigma);
    for (auto& v : out) v += noise(gen);
  }
  return r;
}

Tensor run_forward(const Model& model, const Tensor& x,
                   const ForwardOptions& options, ForwardTrace* trace) {
  if (x.shape() != model.input_shape()) {
    throw ShapeError("model expects input " + shape_to_string(model.input_shape()) +
                     ", got " + shape_to_string(x.shape()));
  }
  if (options.injection) validate_injection(model, *options.injection);
  if (trace) trace->layers.assign(model.size(), LayerTrace{});

  Tensor current = x;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const Layer& layer = model.layer(i);
    Tensor next;
    switch (layer.kind) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        auto r = linear_forward(model, i, current, options, trace != nullptr);
        next = std::move(r.output);
        if (trace) {
          auto& t = trace->layers[i];
          t.patches = std::move(r.patches);
          t.pre_activation = std::move(r.pre_activation);
          t.approximation = std::move(r.approximation);
          t.mask = std::move(r.mask);
          t.instrumented = r.instrumented;
        }
        break;
      }
      case LayerKind::relu:
        next = current;
        for (auto& v : next.values()) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::flatten:
        next = current.reshaped(model.shape_after(i));
        break;
    }
    if (trace) {
      trace->layers[i].input = std::move(current);
      trace->layers[i].output = next;
    }
    current = std::move(next);
  }
  if (!current.all_finite()) throw NumericalError("forward produced non-finite logits");
  return current;
}

}  // namespace

Model::Model(Shape input_shape, std::size_t num_classes,
             std::vector<Layer> layers)
    : num_classes_(num_classes), layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("model needs at least one layer");
  if (num_classes_ == 0) throw ShapeError("model needs at least one class");
  shapes_.push_back(std::move(input_shape));
  if (shapes_.front().empty() || shape_size(shapes_.front()) == 0) {
    throw ShapeError("model input shape must be non-empty");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      shapes_.push_back(output_shape(layers_[i], shapes_.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
    }
    if (layers_[i].approx) {
      const auto& a = *layers_[i].approx;
      if (!layers_[i].is_linear() || a.n() != layers_[i].out_features() ||
          a.d() != layers_[i].in_features()) {
        throw ShapeError("layer " + std::to_string(i) +
                         ": approximation does not match layer dimensions");
      }
    }
  }
  if (shapes_.back() != Shape{num_classes_}) {
    throw ShapeError("model output " + shape_to_string(shapes_.back()) +
                     " does not match class count " + std::to_string(num_classes_));
  }
}

std::size_t Model::positions(std::size_t i) const {
  const auto& l = layer(i);
  if (l.kind == LayerKind::conv2d) {
    const auto& out = shape_after(i);
    return out[0] * out[1];
  }
  return 1;
}

void Model::attach_approx(std::size_t i, ApproxParams params) {
  Layer& l = layer(i);
  if (!l.is_linear()) throw ShapeError("approximation requires a dense or conv2d layer");
  if (params.n() != l.out_features() || params.d() != l.in_features()) {
    throw ShapeError("approximation dimensions do not match layer " + std::to_string(i));
  }
  l.approx = std::move(params);
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.weight.size() + l.bias.size();
  return total;
}

Tensor forward(const Model& model, const Tensor& x,
               const ForwardOptions& options, ForwardTrace* trace) {
  return run_forward(model, x, options, trace);
}

std::size_t predict(const Model& model, const Tensor& x,
                    const ForwardOptions& options) {
  const Tensor logits = forward(model, x, options);
  const auto v = logits.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double cross_entropy(const Tensor& logits, std::size_t label) {
  const auto v = logits.values();
  if (label >= v.size()) throw ConfigError("label out of range");
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double z : v) sum += std::exp(z - m);
  return std::log(sum) + m - v[label];
}

ModelGrad zero_grad(const Model& model) {
  ModelGrad g(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& l = model.layer(i);
    if (l.is_linear()) {
      g[i].weight = Tensor(l.weight.shape());
      g[i].bias = Tensor(l.bias.shape());
    }
  }
  return g;
}

void accumulate(ModelGrad& into, const ModelGrad& g, double scale) {
  if (into.size() != g.size()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i].weight.empty()) continue;
    auto dst_w = into[i].weight.values();
    auto src_w = g[i].weight.values();
    for (std::size_t j = 0; j < dst_w.size(); ++j) dst_w[j] += scale * src_w[j];
    auto dst_b = into[i].bias.values();
    auto src_b = g[i].bias.values();
    for (std::size_t j = 0; j < dst_b.size(); ++j) dst_b[j] += scale * src_b[j];
  }
}

LossGrad loss_and_grad(const Model& model, const Tensor& x, std::size_t label,
                       const ForwardOptions& options, bool want_input_grad,
                       bool want_param_grad) {
  if (label >= model.num_classes()) {
    throw ConfigError("label " + std::to_string(label) + " out of range");
  }
  ForwardTrace trace;
  LossGrad result;
  result.logits = run_forward(model, x, options, &trace);
  result.loss = cross_entropy(result.logits, label);

  // d loss / d logits = softmax - onehot
  Tensor grad(result.logits.shape());
  {
    const auto v = result.logits.values();
    const double m = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) sum += grad[i] = std::exp(v[i] - m);
    for (std::size_t i = 0; i < v.size(); ++i) grad[i] /= sum;
    grad[label] -= 1.0;
  }
  if (want_param_grad) result.params = zero_grad(model);

  // Lowest layer whose input gradient is still needed.
  std::size_t stop = 0;
  if (!want_input_grad) {
    while (stop < model.size() && !model.layer(stop).is_linear()) ++stop;
  }

  for (std::size_t i = model.size(); i-- > 0;) {
    const Layer& layer = model.layer(i);
    const LayerTrace& t = trace.layers[i];
    const bool need_input = i > stop || want_input_grad;
    switch (layer.kind) {
      case LayerKind::relu: {
        const auto in = t.input.values();
        for (std::size_t j = 0; j < grad.size(); ++j) {
          if (!(in[j] > 0.0)) grad[j] = 0.0;
        }
        break;
      }
      case LayerKind::flatten:
        grad = grad.reshaped(t.input.shape());
        break;
      case LayerKind::dense:
      case LayerKind::conv2d: {
        const std::size_t n = layer.out_features();
        const std::size_t d = layer.in_features();
        const std::size_t positions = t.patches.shape()[0];
        auto g = grad.values();
        if (t.instrumented) {
          for (std::size_t j = 0; j < g.size(); ++j) {
            if (!t.mask.bits[j]) g[j] = 0.0;
          }
        }
        if (want_param_grad) {
          auto dw = result.params[i].weight.values();
          auto db = result.params[i].bias.values();
          for (std::size_t p = 0; p < positions; ++p) {
            const auto patch = t.patches.row(p);
            for (std::size_t c = 0; c < n; ++c) {
              const double gc = g[p * n + c];
              if (gc == 0.0) continue;
              db[c] += gc;
              double* row = dw.data() + c * d;
              for (std::size_t j = 0; j < d; ++j) row[j] += gc * patch[j];
            }
          }
        }
        if (need_input) {
          Tensor cols({positions, d});
          const double* w = layer.weight.values().data();
          for (std::size_t p = 0; p < positions; ++p) {
            auto dst = cols.row(p);
            for (std::size_t c = 0; c < n; ++c) {
              const double gc = g[p * n + c];
              if (gc == 0.0) continue;
              const double* row = w + c * d;
              for (std::size_t j = 0; j < d; ++j) dst[j] += gc * row[j];
            }
          }
          if (layer.kind == LayerKind::conv2d) {
            Tensor gi(t.input.shape());
            col2im_add(cols, conv_geometry(layer, t.input.shape()), gi);
            grad = std::move(gi);
          } else {
            grad = cols.reshaped(t.input.shape());
          }
        }
        break;
      }
    }
    if (!need_input) break;
  }

  if (want_input_grad) {
    if (!grad.all_finite()) throw NumericalError("input gradient is not finite");
    result.input_grad = std::move(grad);
  }
  return result;
}

Tensor input_grad(const Model& model, const Tensor& x, std::size_t label,
                  const ForwardOptions& options) {
  return loss_and_grad(model, x, label, options, true, false).input_grad;
}

Tensor conv2d_direct(const Tensor& input, const Tensor& kernel,
                     const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  const auto& in = input.shape();
  const auto& k = kernel.shape();
  const std::size_t h = in[0], w = in[1], c_in = in[2];
  const std::size_t c_out = k[0], kh = k[2], kw = k[3];
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  Tensor out({oh, ow, c_out});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t co = 0; co < c_out; ++co) {
        double acc = bias[co];
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) {
                continue;
              }
              acc += input[(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c_in + ci] *
                     kernel[((co * c_in + ci) * kh + ky) * kw + kx];
            }
          }
        }
        out[(oy * ow + ox) * c_out + co] = acc;
      }
    }
  }
  return out;
}

}  // namespace nenn
