#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fei/tensor.hpp"

namespace fei {

enum class LayerKind { Conv2D, ReLU, MaxPool2x2, Flatten, Linear };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One layer of a sequential network. Only the fields relevant to `kind`
/// are meaningful; weights are {out, in, k, k} for Conv2D and {out, in}
/// for Linear.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;

  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  Index padding = 0;

  Index in_features = 0;
  Index out_features = 0;

  Tensor weight;
  Tensor bias;

  /// Gradient clipping hooks act on this layer's output. Only ReLUs in the
  /// convolutional stage carry the flag.
  bool is_feature_layer = false;

  bool has_weights() const { return kind == LayerKind::Conv2D || kind == LayerKind::Linear; }
  Index fan_in() const;
};

LayerSpec conv2d(Index in_channels, Index out_channels, Index kernel, Index stride = 1,
                 Index padding = 0);
LayerSpec relu(bool feature_layer = false);
LayerSpec maxpool2x2();
LayerSpec flatten();
LayerSpec linear(Index in_features, Index out_features);

struct NetworkModel {
  std::vector<LayerSpec> layers;
  Index num_classes = 0;
  Shape input_shape;

  /// Output shape of every layer, validating composition along the way.
  std::vector<Shape> layer_shapes() const;

  /// Throws Error("shape-mismatch") naming the first inconsistent layer.
  void validate() const;

  /// Layer indices of Conv2D/Linear layers, ordered from the OUTPUT end
  /// (element 0 is the classifier head).
  std::vector<std::size_t> weighted_layers_from_output() const;

  Index parameter_count() const;
};

/// Activations recorded by one forward pass.
struct ActivationTrace {
  Tensor input;
  std::vector<Tensor> activations;  ///< output of layer i
  Eigen::VectorXd logits;
  Eigen::VectorXd probabilities;
};

enum class ClipMode { None, VM, IVM, AVM, IBM };

std::string_view to_string(ClipMode mode);
ClipMode parse_clip_mode(std::string_view name);

/// Gradient transform applied at feature layers during backward passes.
/// `reference` is the trace of the unperturbed input; it is not owned and
/// must outlive the hook.
struct GradHook {
  ClipMode mode = ClipMode::None;
  const ActivationTrace* reference = nullptr;
};

/// Per-layer parameter gradients, aligned with NetworkModel::layers.
/// Entries for weightless layers stay empty.
struct ParameterGrads {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;

  static ParameterGrads zeros_like(const NetworkModel& model);
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

ActivationTrace forward(const NetworkModel& model, const Tensor& input);

/// Clipped gradient rule. `gamma` is the gradient of the category score
/// (never of a loss) with respect to the activation.
///
///   VM : zero if (g >= 0 and x~ > x) or (g < 0 and x~ <= x)
///   IVM: zero if  g >= 0 and x~ > x
///   AVM: zero if  g < 0 and x~ <= x
///   IBM: zero if  g >= 0 and x <= 0
double apply_clip(double gamma, double perturbed, double reference, ClipMode mode);
Tensor apply_clip(const Tensor& gamma, const Tensor& perturbed_act, const Tensor& reference_act,
                  ClipMode mode);

/// Reverse pass seeded with d(out)/d(logits). Returns the input gradient;
/// accumulates parameter gradients into `grads` when it is non-null. The
/// hook, when given and not None, transforms the gradient flowing out of
/// every feature layer before it continues toward the input.
Tensor backward_from_logits(const NetworkModel& model, const ActivationTrace& trace,
                            const Eigen::VectorXd& grad_logits, const GradHook* hook = nullptr,
                            ParameterGrads* grads = nullptr);

/// d softmax(target) / d input, with feature-layer hooks applied.
Tensor backward_category(const NetworkModel& model, const ActivationTrace& trace,
                         Index target_class, const GradHook& hook);

/// Same gradient without any hook machinery.
Tensor backward_category(const NetworkModel& model, const ActivationTrace& trace,
                         Index target_class);

/// Central-difference gradient of softmax(target) over every input element.
Tensor finite_diff_gradient(const NetworkModel& model, const Tensor& input, Index target_class,
                            double step);

Index argmax_class(const ActivationTrace& trace);

/// Cascading randomization: re-draws the `count_from_output` weighted
/// layers closest to the output (0 = no change, 1 = classifier head only),
/// uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)]. Each layer's draw depends
/// only on (seed, its position from the output), so stage s+1 extends stage s.
NetworkModel randomize_layers(const NetworkModel& model, std::size_t count_from_output,
                              std::uint64_t seed);

/// Fills every weighted layer with the same uniform fan-in draw.
void initialize_weights(NetworkModel& model, std::uint64_t seed);

/// Rounds every weight to the nearest float, the on-disk precision.
void round_weights_to_float(NetworkModel& model);

}  // namespace fei
