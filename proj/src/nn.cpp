#include "fei/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fei/rng.hpp"

namespace fei {

namespace {

using RowMatrix = Tensor::RowMatrix;

Index conv_out_extent(Index in, const LayerSpec& l) {
  return (in + 2 * l.padding - l.kernel) / l.stride + 1;
}

// Unfolds a {C,H,W} input into a (C*k*k) x (Hout*Wout) row-major matrix.
RowMatrix im2col(const Tensor& in, const LayerSpec& l, Index out_h, Index out_w) {
  const Index channels = in.dim(0), height = in.dim(1), width = in.dim(2);
  const Index k = l.kernel;
  RowMatrix cols = RowMatrix::Zero(channels * k * k, out_h * out_w);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (c * k + ky) * k + kx;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * l.stride + ky - l.padding;
          if (iy < 0 || iy >= height) continue;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * l.stride + kx - l.padding;
            if (ix < 0 || ix >= width) continue;
            cols(row, oy * out_w + ox) = in(c, iy, ix);
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMatrix& cols, const LayerSpec& l, Index out_h, Index out_w, Tensor& grad_in) {
  const Index channels = grad_in.dim(0), height = grad_in.dim(1), width = grad_in.dim(2);
  const Index k = l.kernel;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const Index row = (c * k + ky) * k + kx;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * l.stride + ky - l.padding;
          if (iy < 0 || iy >= height) continue;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * l.stride + kx - l.padding;
            if (ix < 0 || ix >= width) continue;
            grad_in(c, iy, ix) += cols(row, oy * out_w + ox);
          }
        }
      }
    }
  }
}

Shape output_shape(const LayerSpec& l, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    throw Error("shape-mismatch", "layer " + std::to_string(index) + " (" +
                                      std::string(to_string(l.kind)) + "): " + why +
                                      ", input " + shape_string(in));
  };
  switch (l.kind) {
    case LayerKind::Conv2D: {
      if (in.size() != 3) fail("expects {C,H,W}");
      if (in[0] != l.in_channels) fail("expects " + std::to_string(l.in_channels) + " channels");
      if (l.weight.shape() != Shape{l.out_channels, l.in_channels, l.kernel, l.kernel})
        fail("weight shape " + shape_string(l.weight.shape()));
      if (l.bias.shape() != Shape{l.out_channels}) fail("bias shape " + shape_string(l.bias.shape()));
      if (l.stride < 1 || l.padding < 0) fail("bad stride/padding");
      const Index h = conv_out_extent(in[1], l), w = conv_out_extent(in[2], l);
      if (h < 1 || w < 1) fail("kernel larger than padded input");
      return {l.out_channels, h, w};
    }
    case LayerKind::ReLU:
      return in;
    case LayerKind::MaxPool2x2:
      if (in.size() != 3 || in[1] < 2 || in[2] < 2) fail("expects {C,H,W} with H,W >= 2");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::Flatten:
      return {shape_size(in)};
    case LayerKind::Linear:
      if (in.size() != 1 || in[0] != l.in_features)
        fail("expects {" + std::to_string(l.in_features) + "}");
      if (l.weight.shape() != Shape{l.out_features, l.in_features})
        fail("weight shape " + shape_string(l.weight.shape()));
      if (l.bias.shape() != Shape{l.out_features}) fail("bias shape " + shape_string(l.bias.shape()));
      return {l.out_features};
  }
  fail("unknown layer kind");
  return {};
}

Tensor layer_forward(const LayerSpec& l, const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  switch (l.kind) {
    case LayerKind::Conv2D: {
      const Index out_h = out_shape[1], out_w = out_shape[2];
      const RowMatrix cols = im2col(in, l, out_h, out_w);
      auto w = l.weight.matrix(l.out_channels, l.in_channels * l.kernel * l.kernel);
      auto o = out.matrix(l.out_channels, out_h * out_w);
      o.noalias() = w * cols;
      o.colwise() += l.bias.data();
      break;
    }
    case LayerKind::ReLU:
      out.data() = in.data().cwiseMax(0.0);
      break;
    case LayerKind::MaxPool2x2: {
      const Index channels = out_shape[0], oh = out_shape[1], ow = out_shape[2];
      for (Index c = 0; c < channels; ++c)
        for (Index y = 0; y < oh; ++y)
          for (Index x = 0; x < ow; ++x)
            out(c, y, x) = std::max({in(c, 2 * y, 2 * x), in(c, 2 * y, 2 * x + 1),
                                     in(c, 2 * y + 1, 2 * x), in(c, 2 * y + 1, 2 * x + 1)});
      break;
    }
    case LayerKind::Flatten:
      out.data() = in.data();
      break;
    case LayerKind::Linear:
      out.data().noalias() = l.weight.matrix(l.out_features, l.in_features) * in.data();
      out.data() += l.bias.data();
      break;
  }
  return out;
}

// Gradient wrt the layer input given the gradient wrt its output.
Tensor layer_backward(const LayerSpec& l, const Tensor& in, const Tensor& out, const Tensor& grad_out,
                      Tensor* grad_w, Tensor* grad_b) {
  Tensor grad_in(in.shape());
  switch (l.kind) {
    case LayerKind::Conv2D: {
      const Index out_h = out.dim(1), out_w = out.dim(2);
      const Index patch = l.in_channels * l.kernel * l.kernel;
      const RowMatrix cols = im2col(in, l, out_h, out_w);
      auto g = grad_out.matrix(l.out_channels, out_h * out_w);
      auto w = l.weight.matrix(l.out_channels, patch);
      const RowMatrix grad_cols = w.transpose() * g;
      col2im(grad_cols, l, out_h, out_w, grad_in);
      if (grad_w) grad_w->matrix(l.out_channels, patch).noalias() += g * cols.transpose();
      if (grad_b) grad_b->data() += g.rowwise().sum();
      break;
    }
    case LayerKind::ReLU:
      grad_in.data() = (in.data().array() > 0.0).select(grad_out.data(), 0.0);
      break;
    case LayerKind::MaxPool2x2: {
      const Index channels = out.dim(0), oh = out.dim(1), ow = out.dim(2);
      for (Index c = 0; c < channels; ++c)
        for (Index y = 0; y < oh; ++y)
          for (Index x = 0; x < ow; ++x) {
            // first maximum in scan order receives the gradient
            Index by = 2 * y, bx = 2 * x;
            for (Index dy = 0; dy < 2; ++dy)
              for (Index dx = 0; dx < 2; ++dx)
                if (in(c, 2 * y + dy, 2 * x + dx) > in(c, by, bx)) {
                  by = 2 * y + dy;
                  bx = 2 * x + dx;
                }
            grad_in(c, by, bx) += grad_out(c, y, x);
          }
      break;
    }
    case LayerKind::Flatten:
      grad_in.data() = grad_out.data();
      break;
    case LayerKind::Linear: {
      auto w = l.weight.matrix(l.out_features, l.in_features);
      grad_in.data().noalias() = w.transpose() * grad_out.data();
      if (grad_w)
        grad_w->matrix(l.out_features, l.in_features).noalias() +=
            grad_out.data() * in.data().transpose();
      if (grad_b) grad_b->data() += grad_out.data();
      break;
    }
  }
  return grad_in;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool2x2: return "MaxPool2x2";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Linear: return "Linear";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::Conv2D, LayerKind::ReLU, LayerKind::MaxPool2x2, LayerKind::Flatten,
                 LayerKind::Linear})
    if (to_string(k) == name) return k;
  throw Error("bad-header", "unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(ClipMode mode) {
  switch (mode) {
    case ClipMode::None: return "none";
    case ClipMode::VM: return "vm";
    case ClipMode::IVM: return "ivm";
    case ClipMode::AVM: return "avm";
    case ClipMode::IBM: return "ibm";
  }
  return "?";
}

ClipMode parse_clip_mode(std::string_view name) {
  for (auto m : {ClipMode::None, ClipMode::VM, ClipMode::IVM, ClipMode::AVM, ClipMode::IBM})
    if (to_string(m) == name) return m;
  throw Error("bad-clip-mode", "unknown clip mode '" + std::string(name) + "'");
}

Index LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::Conv2D: return in_channels * kernel * kernel;
    case LayerKind::Linear: return in_features;
    default: return 0;
  }
}

LayerSpec conv2d(Index in_channels, Index out_channels, Index kernel, Index stride, Index padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv2D;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.weight = Tensor({out_channels, in_channels, kernel, kernel});
  l.bias = Tensor({out_channels});
  return l;
}

LayerSpec relu(bool feature_layer) {
  LayerSpec l;
  l.kind = LayerKind::ReLU;
  l.is_feature_layer = feature_layer;
  return l;
}

LayerSpec maxpool2x2() {
  LayerSpec l;
  l.kind = LayerKind::MaxPool2x2;
  return l;
}

LayerSpec flatten() {
  LayerSpec l;
  l.kind = LayerKind::Flatten;
  return l;
}

LayerSpec linear(Index in_features, Index out_features) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.in_features = in_features;
  l.out_features = out_features;
  l.weight = Tensor({out_features, in_features});
  l.bias = Tensor({out_features});
  return l;
}

std::vector<Shape> NetworkModel::layer_shapes() const {
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    current = output_shape(layers[i], current, i);
    shapes.push_back(current);
  }
  return shapes;
}

void NetworkModel::validate() const {
  if (num_classes < 1) throw Error("shape-mismatch", "model needs at least one class");
  if (layers.empty()) throw Error("shape-mismatch", "model has no layers");
  const auto shapes = layer_shapes();
  if (shapes.back() != Shape{num_classes}) {
    throw Error("shape-mismatch", "final layer output " + shape_string(shapes.back()) +
                                      " does not match " + std::to_string(num_classes) + " classes");
  }
  bool flattened = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    flattened = flattened || layers[i].kind == LayerKind::Flatten;
    if (layers[i].is_feature_layer && (flattened || layers[i].kind != LayerKind::ReLU)) {
      throw Error("shape-mismatch", "layer " + std::to_string(i) +
                                        " is flagged as a feature layer outside the conv stage");
    }
  }
}

std::vector<std::size_t> NetworkModel::weighted_layers_from_output() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = layers.size(); i-- > 0;)
    if (layers[i].has_weights()) idx.push_back(i);
  return idx;
}

Index NetworkModel::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers)
    if (l.has_weights()) n += l.weight.size() + l.bias.size();
  return n;
}

ParameterGrads ParameterGrads::zeros_like(const NetworkModel& model) {
  ParameterGrads g;
  g.weight.resize(model.layers.size());
  g.bias.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.has_weights()) continue;
    g.weight[i] = Tensor(l.weight.shape());
    g.bias[i] = Tensor(l.bias.shape());
  }
  return g;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

ActivationTrace forward(const NetworkModel& model, const Tensor& input) {
  if (input.shape() != model.input_shape) {
    throw Error("shape-mismatch", "input " + shape_string(input.shape()) +
                                      " does not match model input " +
                                      shape_string(model.input_shape));
  }
  const auto shapes = model.layer_shapes();
  ActivationTrace trace;
  trace.input = input;
  trace.activations.reserve(model.layers.size());
  const Tensor* current = &trace.input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    trace.activations.push_back(layer_forward(model.layers[i], *current, shapes[i]));
    current = &trace.activations.back();
  }
  if (current->rank() != 1 || current->size() != model.num_classes) {
    throw Error("shape-mismatch", "final layer output " + shape_string(current->shape()) +
                                      " does not match " + std::to_string(model.num_classes) +
                                      " classes");
  }
  trace.logits = current->data();
  if (!trace.logits.allFinite()) throw Error("diverged", "non-finite logits in forward pass");
  trace.probabilities = softmax(trace.logits);
  return trace;
}

double apply_clip(double gamma, double perturbed, double reference, ClipMode mode) {
  switch (mode) {
    case ClipMode::None:
      return gamma;
    case ClipMode::VM:
      if (gamma >= 0.0 && perturbed > reference) return 0.0;
      if (gamma < 0.0 && perturbed <= reference) return 0.0;
      return gamma;
    case ClipMode::IVM:
      return (gamma >= 0.0 && perturbed > reference) ? 0.0 : gamma;
    case ClipMode::AVM:
      return (gamma < 0.0 && perturbed <= reference) ? 0.0 : gamma;
    case ClipMode::IBM:
      return (gamma >= 0.0 && reference <= 0.0) ? 0.0 : gamma;
  }
  return gamma;
}

Tensor apply_clip(const Tensor& gamma, const Tensor& perturbed_act, const Tensor& reference_act,
                  ClipMode mode) {
  if (gamma.shape() != perturbed_act.shape() || gamma.shape() != reference_act.shape()) {
    throw Error("shape-mismatch", "apply_clip operands disagree in shape");
  }
  if (mode == ClipMode::None) return gamma;
  Tensor out(gamma.shape());
  for (Index i = 0; i < gamma.size(); ++i)
    out[i] = apply_clip(gamma[i], perturbed_act[i], reference_act[i], mode);
  return out;
}

Tensor backward_from_logits(const NetworkModel& model, const ActivationTrace& trace,
                            const Eigen::VectorXd& grad_logits, const GradHook* hook,
                            ParameterGrads* grads) {
  const bool clipping = hook != nullptr && hook->mode != ClipMode::None;
  if (clipping && hook->reference == nullptr) {
    throw Error("missing-reference", "clip mode " + std::string(to_string(hook->mode)) +
                                         " requires a reference trace");
  }
  if (clipping && hook->reference->activations.size() != model.layers.size()) {
    throw Error("shape-mismatch", "reference trace does not belong to this model");
  }
  if (trace.activations.size() != model.layers.size()) {
    throw Error("shape-mismatch", "trace does not belong to this model");
  }

  Tensor grad(Shape{grad_logits.size()}, grad_logits);
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const LayerSpec& l = model.layers[i];
    if (clipping && l.is_feature_layer) {
      grad = apply_clip(grad, trace.activations[i], hook->reference->activations[i], hook->mode);
    }
    const Tensor& in = i == 0 ? trace.input : trace.activations[i - 1];
    Tensor* gw = grads && l.has_weights() ? &grads->weight[i] : nullptr;
    Tensor* gb = grads && l.has_weights() ? &grads->bias[i] : nullptr;
    grad = layer_backward(l, in, trace.activations[i], grad, gw, gb);
  }
  return grad;
}

namespace {

Eigen::VectorXd softmax_category_grad(const ActivationTrace& trace, Index target_class) {
  const Index classes = trace.probabilities.size();
  if (target_class < 0 || target_class >= classes) {
    throw Error("bad-target", "target class " + std::to_string(target_class) + " outside [0, " +
                                  std::to_string(classes) + ")");
  }
  // d p_t / d z_j = p_t (1[t == j] - p_j)
  const double pt = trace.probabilities[target_class];
  Eigen::VectorXd g = -pt * trace.probabilities;
  g[target_class] += pt;
  return g;
}

}  // namespace

Tensor backward_category(const NetworkModel& model, const ActivationTrace& trace,
                         Index target_class, const GradHook& hook) {
  return backward_from_logits(model, trace, softmax_category_grad(trace, target_class), &hook);
}

Tensor backward_category(const NetworkModel& model, const ActivationTrace& trace,
                         Index target_class) {
  return backward_from_logits(model, trace, softmax_category_grad(trace, target_class));
}

Tensor finite_diff_gradient(const NetworkModel& model, const Tensor& input, Index target_class,
                            double step) {
  if (!(step > 0.0)) throw Error("bad-step", "finite-difference step must be positive");
  if (target_class < 0 || target_class >= model.num_classes)
    throw Error("bad-target", "target class out of range");
  Tensor grad(input.shape());
  Tensor probe = input;
  for (Index i = 0; i < input.size(); ++i) {
    const double x0 = input[i];
    probe[i] = x0 + step;
    const double up = forward(model, probe).probabilities[target_class];
    probe[i] = x0 - step;
    const double down = forward(model, probe).probabilities[target_class];
    probe[i] = x0;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

Index argmax_class(const ActivationTrace& trace) {
  Index best = 0;
  trace.probabilities.maxCoeff(&best);
  return best;
}

namespace {

void draw_layer(LayerSpec& l, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
  for (Index i = 0; i < l.weight.size(); ++i)
    l.weight[i] = static_cast<float>(rng.uniform(-s, s));
  for (Index i = 0; i < l.bias.size(); ++i) l.bias[i] = static_cast<float>(rng.uniform(-s, s));
}

}  // namespace

NetworkModel randomize_layers(const NetworkModel& model, std::size_t count_from_output,
                              std::uint64_t seed) {
  const auto weighted = model.weighted_layers_from_output();
  if (count_from_output > weighted.size()) {
    throw Error("bad-layer-index", "cannot randomize " + std::to_string(count_from_output) +
                                       " of " + std::to_string(weighted.size()) +
                                       " weighted layers");
  }
  NetworkModel out = model;
  for (std::size_t pos = 0; pos < count_from_output; ++pos) {
    Rng rng(seed, pos);
    draw_layer(out.layers[weighted[pos]], rng);
  }
  return out;
}

void initialize_weights(NetworkModel& model, std::uint64_t seed) {
  const auto weighted = model.weighted_layers_from_output();
  for (std::size_t pos = 0; pos < weighted.size(); ++pos) {
    Rng rng(seed, 1000 + pos);
    draw_layer(model.layers[weighted[pos]], rng);
  }
}

void round_weights_to_float(NetworkModel& model) {
  for (auto& l : model.layers) {
    if (!l.has_weights()) continue;
    l.weight.data() = l.weight.data().cast<float>().cast<double>();
    l.bias.data() = l.bias.data().cast<float>().cast<double>();
  }
}

}  // namespace fei
