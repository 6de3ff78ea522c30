#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fei/adam.hpp"
#include "fei/nn.hpp"
#include "fei/reference.hpp"

namespace fei {

/// Fractions optimized in order (descending), iterations per fraction, and
/// the per-iteration growth c of the area weight (beta = c * t).
struct FractileSchedule {
  std::vector<double> fractions{0.9, 0.7, 0.5, 0.3, 0.1};
  int iterations = 100;
  double beta_coefficient = 0.01;

  void validate() const;
};

enum class Objective { Preservation, Deletion };
enum class EnsembleMode { Ensemble, SingleMapNoArea, SingleMapL1 };

std::string_view to_string(Objective objective);
Objective parse_objective(std::string_view name);
std::string_view to_string(EnsembleMode mode);
EnsembleMode parse_ensemble_mode(std::string_view name);

struct OptimizerConfig {
  ClipMode clip_mode = ClipMode::IBM;
  Objective objective = Objective::Preservation;
  EnsembleMode mode = EnsembleMode::Ensemble;
  AdamParams adam{};
  /// Seeds the per-iteration reference draws.
  std::uint64_t rng_seed = 0;
};

/// Fractions actually optimized for a mode: the schedule for Ensemble,
/// {1.0} for SingleMapL1 and {0.5} for SingleMapNoArea.
std::vector<double> effective_fractions(const FractileSchedule& schedule, EnsembleMode mode);

/// Optimization output. deltas/alphas are {H,W}, one per fraction, with
/// alphas[i] = deltas[0] + ... + deltas[i]; `map` is sum(alphas) / k.
struct MaskEnsemble {
  std::vector<double> fractions;
  std::vector<Tensor> deltas;
  std::vector<Tensor> alphas;
  Tensor map;
  std::vector<double> final_losses;
  std::vector<double> area_residuals;  ///< |sum(alpha) - (1-f) N| / N
  /// Blended input seen at the final evaluation of the last fraction.
  Tensor final_input;
  double final_score = 0.0;

  /// Recomputes alphas and map from deltas.
  void assemble();
};

// x~_l = alpha * x + (1 - alpha) * R, alpha broadcast over channels.
Tensor blend_lower(const Tensor& x, const Tensor& alpha, const Tensor& reference);
// x~_u = (1 - alpha) * x + alpha * R
Tensor blend_upper(const Tensor& x, const Tensor& alpha, const Tensor& reference);

/// |sum(alpha) - (1 - f) N|
double area_term(const Tensor& alpha, double f);

double beta_schedule(int iteration, double coefficient = 0.01);

struct LossResult {
  double loss = 0.0;
  double score = 0.0;  ///< category probability at the blended input
  Tensor grad_alpha;
};

/// -phi(blend_lower) + beta * area. The network part of the gradient runs
/// through backward_category with `clip`; the area part bypasses hooks.
LossResult preservation_loss(const NetworkModel& model, const Tensor& x,
                             const ActivationTrace& reference_trace, const Tensor& alpha, double f,
                             double beta, const Tensor& reference, ClipMode clip, Index target);

/// +phi(blend_upper) + beta * area.
LossResult deletion_loss(const NetworkModel& model, const Tensor& x,
                         const ActivationTrace& reference_trace, const Tensor& alpha, double f,
                         double beta, const Tensor& reference, ClipMode clip, Index target);

/// Everything optimize_attribution needs besides model, image and target.
struct AttributionConfig {
  FractileSchedule schedule{};
  OptimizerConfig config{};
  ReferenceSpec reference = ReferenceSpec::random_monotone(0);
};

/// Sequential fractile optimization over deltas, largest fraction first.
/// Throws Error("diverged") on a non-finite loss.
MaskEnsemble optimize_attribution(const NetworkModel& model, const Tensor& x, Index target,
                                  const FractileSchedule& schedule, const OptimizerConfig& config,
                                  const ReferenceSpec& reference);

MaskEnsemble optimize_attribution(const NetworkModel& model, const Tensor& x, Index target,
                                  const AttributionConfig& attribution);

}  // namespace fei
