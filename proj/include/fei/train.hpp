#pragma once

#include <cstdint>
#include <vector>

#include "fei/nn.hpp"

namespace fei {

/// 1x32x32 -> Conv(8,3x3,pad 1) -> ReLU* -> Pool -> Conv(16,3x3,pad 1) ->
/// ReLU* -> Pool -> Flatten -> Linear(1024,64) -> ReLU -> Linear(64,C).
/// Starred ReLUs are feature layers. Weights are zero until initialized.
NetworkModel fixture_architecture(Index num_classes = 3);

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t train_count = 2000;
  std::size_t test_count = 300;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 2;
  /// Below this held-out accuracy training fails with "fixture-underfit".
  double min_accuracy = 0.9;
};

struct TrainResult {
  NetworkModel model;
  double test_accuracy = 0.0;
  double final_train_loss = 0.0;
};

/// Fraction of samples whose argmax matches the label.
double accuracy(const NetworkModel& model, const std::vector<Tensor>& images,
                const std::vector<Index>& labels);

/// Minibatch Adam on cross-entropy over the synthetic shapes task.
/// Deterministic in (dataset_seed, config); weights are rounded to float.
TrainResult train_fixture(std::uint64_t dataset_seed, const TrainConfig& config = {});

}  // namespace fei
