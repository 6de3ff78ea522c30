#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fei/nn.hpp"
#include "fei/optimizer.hpp"

namespace fei {

// Image reconstruction ------------------------------------------------------

struct ReconstructionConfig {
  int iterations = 300;
  double learning_rate = 0.05;
  ClipMode clip_mode = ClipMode::VM;
  /// Rescale each gradient to unit L2 norm before the Adam step.
  bool normalize_gradient = true;
  std::uint64_t seed = 0;
  PixelRange range{};
};

/// Uniform noise in the pixel range, the reconstruction starting point.
Tensor reconstruction_noise(const Shape& shape, const ReconstructionConfig& cfg);

/// Ascends phi(target) from noise with Adam, clipping gradients against the
/// ORIGINAL image's trace and clamping to the pixel range after each step.
Tensor reconstruct(const NetworkModel& model, const Tensor& original, Index target,
                   const ReconstructionConfig& cfg);

double mean_squared_error(const Tensor& a, const Tensor& b);

// Black-image defense -------------------------------------------------------

enum class SuccessRule { Argmax, ProbabilityThreshold };

struct DefenseRule {
  SuccessRule rule = SuccessRule::Argmax;
  double threshold = 0.5;  ///< ProbabilityThreshold only
};

struct DefenseTrial {
  Index target = 0;
  std::uint64_t seed = 0;
  double score = 0.0;  ///< phi(target) at the final perturbed input
  Index predicted = 0;
  bool success = false;
};

struct DefenseModeResult {
  ClipMode mode = ClipMode::None;
  std::vector<DefenseTrial> trials;
  std::size_t successes = 0;
  double rate = 0.0;
};

struct DefenseReport {
  DefenseRule rule;
  std::vector<DefenseModeResult> modes;

  const DefenseModeResult& at(ClipMode mode) const;
  std::string to_json() const;
};

/// For every mode, seed and class: optimize an attribution toward that class
/// on the all-black image and test the final perturbed input against `rule`.
DefenseReport defense_test(const NetworkModel& model, const std::vector<ClipMode>& clip_modes,
                           const AttributionConfig& attribution, const DefenseRule& rule = {},
                           const std::vector<std::uint64_t>& seeds = {0}, unsigned threads = 1);

// Cascading randomization ---------------------------------------------------

/// Ranks starting at 1, ties share their average rank.
Eigen::VectorXd average_ranks(const Eigen::VectorXd& v);
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct SanityStage {
  std::size_t stage = 0;  ///< number of weighted layers randomized
  Tensor map;
  double spearman = 1.0;
};

struct SanityReport {
  Index target = 0;
  std::vector<SanityStage> stages;

  std::string to_json() const;
};

/// Stage s (0..num_stages) re-randomizes the top s weighted layers and
/// recomputes the attribution with identical seeds.
SanityReport sanity_check(const NetworkModel& model, const Tensor& x, Index target,
                          std::size_t num_stages, const AttributionConfig& attribution,
                          std::uint64_t randomization_seed = 0);

}  // namespace fei
