#include "fei/optimizer.hpp"

#include <cmath>

namespace fei {

namespace {

void check_blend_operands(const Tensor& x, const Tensor& alpha, const Tensor& reference) {
  if (x.shape() != reference.shape())
    throw Error("shape-mismatch", "image and reference shapes differ");
  if (spatial_shape(x) != alpha.shape())
    throw Error("shape-mismatch", "alpha " + shape_string(alpha.shape()) +
                                      " does not match image " + shape_string(x.shape()));
  if (alpha.size() > 0 && (alpha.min() < 0.0 || alpha.max() > 1.0))
    throw Error("alpha-out-of-range", "alpha must lie in [0,1]");
}

Eigen::Map<const Eigen::MatrixXd> by_channel(const Tensor& t, Index pixels) {
  // column c holds channel c
  return Eigen::Map<const Eigen::MatrixXd>(t.data().data(), pixels, t.size() / pixels);
}

double sign(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

}  // namespace

void FractileSchedule::validate() const {
  if (fractions.empty()) throw Error("bad-schedule", "schedule needs at least one fraction");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] < 1.0))
      throw Error("bad-schedule", "fractions must lie in (0,1)");
    if (i > 0 && !(fractions[i] < fractions[i - 1]))
      throw Error("bad-schedule", "fractions must be strictly descending");
  }
  if (iterations < 0) throw Error("bad-schedule", "iterations must be non-negative");
  if (!(beta_coefficient > 0.0)) throw Error("bad-schedule", "beta coefficient must be positive");
}

std::string_view to_string(Objective objective) {
  return objective == Objective::Preservation ? "preservation" : "deletion";
}

Objective parse_objective(std::string_view name) {
  if (name == "preservation") return Objective::Preservation;
  if (name == "deletion") return Objective::Deletion;
  throw Error("bad-objective", "unknown objective '" + std::string(name) + "'");
}

std::string_view to_string(EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::Ensemble: return "ensemble";
    case EnsembleMode::SingleMapNoArea: return "single";
    case EnsembleMode::SingleMapL1: return "l1";
  }
  return "?";
}

EnsembleMode parse_ensemble_mode(std::string_view name) {
  for (auto m : {EnsembleMode::Ensemble, EnsembleMode::SingleMapNoArea, EnsembleMode::SingleMapL1})
    if (to_string(m) == name) return m;
  throw Error("bad-mode", "unknown ensemble mode '" + std::string(name) + "'");
}

std::vector<double> effective_fractions(const FractileSchedule& schedule, EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::Ensemble: return schedule.fractions;
    case EnsembleMode::SingleMapNoArea: return {0.5};
    case EnsembleMode::SingleMapL1: return {1.0};
  }
  return schedule.fractions;
}

void MaskEnsemble::assemble() {
  alphas.clear();
  if (deltas.empty()) return;
  Tensor running(deltas.front().shape());
  Tensor total(deltas.front().shape());
  for (const Tensor& d : deltas) {
    running.data() = (running.data() + d.data()).cwiseMin(1.0);
    alphas.push_back(running);
    total.data() += running.data();
  }
  total.data() /= static_cast<double>(deltas.size());
  map = std::move(total);
}

Tensor blend_lower(const Tensor& x, const Tensor& alpha, const Tensor& reference) {
  check_blend_operands(x, alpha, reference);
  const Index pixels = alpha.size();
  Tensor out(x.shape());
  Eigen::Map<Eigen::MatrixXd> o(out.data().data(), pixels, x.size() / pixels);
  const auto xs = by_channel(x, pixels);
  const auto rs = by_channel(reference, pixels);
  const auto& a = alpha.data().array();
  for (Index c = 0; c < o.cols(); ++c)
    o.col(c).array() = a * xs.col(c).array() + (1.0 - a) * rs.col(c).array();
  return out;
}

Tensor blend_upper(const Tensor& x, const Tensor& alpha, const Tensor& reference) {
  check_blend_operands(x, alpha, reference);
  const Index pixels = alpha.size();
  Tensor out(x.shape());
  Eigen::Map<Eigen::MatrixXd> o(out.data().data(), pixels, x.size() / pixels);
  const auto xs = by_channel(x, pixels);
  const auto rs = by_channel(reference, pixels);
  const auto& a = alpha.data().array();
  for (Index c = 0; c < o.cols(); ++c)
    o.col(c).array() = (1.0 - a) * xs.col(c).array() + a * rs.col(c).array();
  return out;
}

double area_term(const Tensor& alpha, double f) {
  return std::abs(alpha.sum() - (1.0 - f) * static_cast<double>(alpha.size()));
}

double beta_schedule(int iteration, double coefficient) {
  if (iteration < 1) throw Error("bad-iteration", "beta schedule iterations are 1-based");
  return coefficient * iteration;
}

namespace {

LossResult blend_loss(const NetworkModel& model, const Tensor& x,
                      const ActivationTrace& reference_trace, const Tensor& alpha, double f,
                      double beta, const Tensor& reference, ClipMode clip, Index target,
                      Objective objective) {
  const bool preserve = objective == Objective::Preservation;
  const Tensor blended =
      preserve ? blend_lower(x, alpha, reference) : blend_upper(x, alpha, reference);
  const ActivationTrace trace = forward(model, blended);
  const GradHook hook{clip, &reference_trace};
  const Tensor grad_x = backward_category(model, trace, target, hook);

  const Index pixels = alpha.size();
  const auto g = by_channel(grad_x, pixels);
  const auto xs = by_channel(x, pixels);
  const auto rs = by_channel(reference, pixels);
  // d blend / d alpha is (x - R) for the lower blend and (R - x) for the upper.
  const Eigen::VectorXd network = (g.array() * (xs - rs).array()).rowwise().sum();

  const double area_residual = alpha.sum() - (1.0 - f) * static_cast<double>(pixels);
  LossResult r;
  r.score = trace.probabilities[target];
  r.loss = (preserve ? -r.score : r.score) + beta * std::abs(area_residual);
  r.grad_alpha = Tensor(alpha.shape());
  // -phi through (x - R) and +phi through (R - x) give the same sign
  r.grad_alpha.data() = -network;
  r.grad_alpha.data().array() += beta * sign(area_residual);
  return r;
}

}  // namespace

LossResult preservation_loss(const NetworkModel& model, const Tensor& x,
                             const ActivationTrace& reference_trace, const Tensor& alpha, double f,
                             double beta, const Tensor& reference, ClipMode clip, Index target) {
  return blend_loss(model, x, reference_trace, alpha, f, beta, reference, clip, target,
                    Objective::Preservation);
}

LossResult deletion_loss(const NetworkModel& model, const Tensor& x,
                         const ActivationTrace& reference_trace, const Tensor& alpha, double f,
                         double beta, const Tensor& reference, ClipMode clip, Index target) {
  return blend_loss(model, x, reference_trace, alpha, f, beta, reference, clip, target,
                    Objective::Deletion);
}

MaskEnsemble optimize_attribution(const NetworkModel& model, const Tensor& x, Index target,
                                  const FractileSchedule& schedule, const OptimizerConfig& config,
                                  const ReferenceSpec& reference) {
  schedule.validate();
  if (target < 0 || target >= model.num_classes)
    throw Error("bad-target", "target class " + std::to_string(target) + " out of range");
  const ActivationTrace reference_trace = forward(model, x);

  const Shape spatial = spatial_shape(x);
  const auto pixels = static_cast<double>(shape_size(spatial));
  const auto fractions = effective_fractions(schedule, config.mode);
  const int iterations = schedule.iterations;

  ReferenceSpec draws = reference;
  draws.seed = config.rng_seed;

  MaskEnsemble ens;
  ens.fractions = fractions;
  Tensor previous(spatial, 0.0);  // alpha of the preceding fraction
  double previous_f = 1.0;
  std::uint64_t iteration_index = 0;

  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double f = fractions[i];
    Tensor delta(spatial, previous_f - f);
    const Eigen::VectorXd headroom = (1.0 - previous.data().array()).matrix();
    Adam adam(delta.size(), config.adam);
    Tensor alpha(spatial);

    auto evaluate = [&](int t, const Tensor& ref) {
      alpha.data() = (previous.data() + delta.data()).cwiseMin(1.0);
      const double beta = config.mode == EnsembleMode::SingleMapNoArea
                              ? 0.0
                              : beta_schedule(t, schedule.beta_coefficient);
      LossResult r = config.objective == Objective::Preservation
                         ? preservation_loss(model, x, reference_trace, alpha, f, beta, ref,
                                             config.clip_mode, target)
                         : deletion_loss(model, x, reference_trace, alpha, f, beta, ref,
                                         config.clip_mode, target);
      if (!std::isfinite(r.loss) || !r.grad_alpha.all_finite()) {
        throw Error("diverged", "non-finite loss at fraction " + std::to_string(f) +
                                    ", iteration " + std::to_string(t));
      }
      return r;
    };

    Tensor ref = make_reference(draws, x, iteration_index);
    for (int t = 1; t <= iterations; ++t) {
      ref = make_reference(draws, x, iteration_index++);
      const LossResult r = evaluate(t, ref);
      adam.step(delta.data(), r.grad_alpha.data());
      delta.data() = delta.data().cwiseMax(0.0).cwiseMin(headroom);
    }
    const LossResult last = evaluate(std::max(iterations, 1), ref);
    ens.final_losses.push_back(last.loss);
    ens.final_score = last.score;
    ens.final_input = config.objective == Objective::Preservation ? blend_lower(x, alpha, ref)
                                                                  : blend_upper(x, alpha, ref);

    alpha.data() = (previous.data() + delta.data()).cwiseMin(1.0);
    ens.area_residuals.push_back(area_term(alpha, f) / pixels);
    ens.deltas.push_back(delta);
    previous = alpha;
    previous_f = f;
  }
  ens.assemble();
  return ens;
}

MaskEnsemble optimize_attribution(const NetworkModel& model, const Tensor& x, Index target,
                                  const AttributionConfig& attribution) {
  return optimize_attribution(model, x, target, attribution.schedule, attribution.config,
                              attribution.reference);
}

}  // namespace fei
