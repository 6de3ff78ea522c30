#include "fei/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fei/adam.hpp"
#include "fei/rng.hpp"
#include "fei/viz_io.hpp"

namespace fei {

NetworkModel fixture_architecture(Index num_classes) {
  NetworkModel m;
  m.input_shape = {1, kImageSide, kImageSide};
  m.num_classes = num_classes;
  m.layers = {conv2d(1, 8, 3, 1, 1), relu(true),        maxpool2x2(),
              conv2d(8, 16, 3, 1, 1), relu(true),       maxpool2x2(),
              flatten(),              linear(1024, 64), relu(),
              linear(64, num_classes)};
  m.validate();
  return m;
}

double accuracy(const NetworkModel& model, const std::vector<Tensor>& images,
                const std::vector<Index>& labels) {
  if (images.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    correct += argmax_class(forward(model, images[i])) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

namespace {

// Flat parameter vector view: all weights then biases, layer by layer.
Eigen::VectorXd gather(const NetworkModel& m) {
  Eigen::VectorXd v(m.parameter_count());
  Index pos = 0;
  for (const auto& l : m.layers) {
    if (!l.has_weights()) continue;
    v.segment(pos, l.weight.size()) = l.weight.data();
    pos += l.weight.size();
    v.segment(pos, l.bias.size()) = l.bias.data();
    pos += l.bias.size();
  }
  return v;
}

void scatter(const Eigen::VectorXd& v, NetworkModel& m) {
  Index pos = 0;
  for (auto& l : m.layers) {
    if (!l.has_weights()) continue;
    l.weight.data() = v.segment(pos, l.weight.size());
    pos += l.weight.size();
    l.bias.data() = v.segment(pos, l.bias.size());
    pos += l.bias.size();
  }
}

Eigen::VectorXd gather(const ParameterGrads& g, const NetworkModel& m) {
  Eigen::VectorXd v(m.parameter_count());
  Index pos = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!m.layers[i].has_weights()) continue;
    v.segment(pos, g.weight[i].size()) = g.weight[i].data();
    pos += g.weight[i].size();
    v.segment(pos, g.bias[i].size()) = g.bias[i].data();
    pos += g.bias[i].size();
  }
  return v;
}

}  // namespace

TrainResult train_fixture(std::uint64_t dataset_seed, const TrainConfig& config) {
  if (config.batch_size < 1 || config.epochs < 0)
    throw Error("bad-train-config", "batch size must be positive and epochs non-negative");
  const ShapesDataset train = gen_shapes(dataset_seed, config.train_count, Split::Train);
  const ShapesDataset test = gen_shapes(dataset_seed, config.test_count, Split::Test);

  TrainResult result;
  result.model = fixture_architecture(static_cast<Index>(kShapeClassNames.size()));
  initialize_weights(result.model, config.init_seed);
  NetworkModel& model = result.model;

  Eigen::VectorXd params = gather(model);
  Adam adam(params.size(), {config.learning_rate, 0.9, 0.999, 1e-8});
  Rng shuffle(config.shuffle_seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with the portable RNG
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(
                                  shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ParameterGrads grads = ParameterGrads::zeros_like(model);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const ActivationTrace trace = forward(model, train.images[idx]);
        const Index label = train.labels[idx];
        epoch_loss -= std::log(std::max(trace.probabilities[label], 1e-300));
        // d CE / d logits = p - onehot
        Eigen::VectorXd g = trace.probabilities;
        g[label] -= 1.0;
        backward_from_logits(model, trace, g, nullptr, &grads);
      }
      Eigen::VectorXd flat = gather(grads, model) / static_cast<double>(end - start);
      adam.step(params, flat);
      scatter(params, model);
    }
    result.final_train_loss = epoch_loss / static_cast<double>(order.size());
  }
  round_weights_to_float(model);
  result.test_accuracy = accuracy(model, test.images, test.labels);
  if (result.test_accuracy < config.min_accuracy) {
    throw Error("fixture-underfit", "held-out accuracy " + std::to_string(result.test_accuracy) +
                                        " below " + std::to_string(config.min_accuracy));
  }
  return result;
}

}  // namespace fei
