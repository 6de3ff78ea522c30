#include "fei/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "fei/adam.hpp"
#include "fei/parallel.hpp"
#include "fei/rng.hpp"

namespace fei {

Tensor reconstruction_noise(const Shape& shape, const ReconstructionConfig& cfg) {
  Rng rng(cfg.seed, 0x6e6f697365ULL);
  Tensor x(shape);
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(cfg.range.min, cfg.range.max);
  return x;
}

Tensor reconstruct(const NetworkModel& model, const Tensor& original, Index target,
                   const ReconstructionConfig& cfg) {
  if (cfg.iterations < 0) throw Error("bad-config", "iterations must be non-negative");
  if (!(cfg.range.min < cfg.range.max)) throw Error("bad-range", "pixel range needs min < max");
  if (target < 0 || target >= model.num_classes)
    throw Error("bad-target", "target class out of range");
  const ActivationTrace reference = forward(model, original);
  const GradHook hook{cfg.clip_mode, &reference};

  Tensor x = reconstruction_noise(original.shape(), cfg);
  Adam adam(x.size(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  for (int it = 0; it < cfg.iterations; ++it) {
    const ActivationTrace trace = forward(model, x);
    Tensor grad = backward_category(model, trace, target, hook);
    // Softmax saturates far from the data; only the direction is kept, so a
    // gradient of 1e-20 still moves the image.
    const double norm = grad.data().norm();
    if (cfg.normalize_gradient && norm > 0.0) grad.data() /= norm;
    // l_rec = -phi, so descend along -grad
    adam.step(x.data(), -grad.data());
    if (!x.all_finite())
      throw Error("diverged", "reconstruction left finite values at iteration " + std::to_string(it));
    x.data() = x.data().cwiseMax(cfg.range.min).cwiseMin(cfg.range.max);
  }
  return x;
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw Error("shape-mismatch", "MSE operands differ in shape");
  return (a.data() - b.data()).squaredNorm() / static_cast<double>(a.size());
}

const DefenseModeResult& DefenseReport::at(ClipMode mode) const {
  for (const auto& m : modes)
    if (m.mode == mode) return m;
  throw Error("missing-mode", "defense report has no entry for " + std::string(to_string(mode)));
}

std::string DefenseReport::to_json() const {
  nlohmann::json j;
  j["success_rule"] = rule.rule == SuccessRule::Argmax ? "argmax" : "probability-threshold";
  j["threshold"] = rule.threshold;
  j["modes"] = nlohmann::json::array();
  for (const auto& m : modes) {
    nlohmann::json jm;
    jm["clip_mode"] = std::string(to_string(m.mode));
    jm["successes"] = m.successes;
    jm["trials"] = m.trials.size();
    jm["rate"] = m.rate;
    jm["cells"] = nlohmann::json::array();
    for (const auto& t : m.trials) {
      jm["cells"].push_back({{"target", t.target},
                             {"seed", t.seed},
                             {"score", t.score},
                             {"predicted", t.predicted},
                             {"success", t.success}});
    }
    j["modes"].push_back(std::move(jm));
  }
  return j.dump(2);
}

DefenseReport defense_test(const NetworkModel& model, const std::vector<ClipMode>& clip_modes,
                           const AttributionConfig& attribution, const DefenseRule& rule,
                           const std::vector<std::uint64_t>& seeds, unsigned threads) {
  const Tensor black(model.input_shape, attribution.reference.range.min);
  const auto classes = static_cast<std::size_t>(model.num_classes);
  const std::size_t per_mode = seeds.size() * classes;

  DefenseReport report;
  report.rule = rule;
  std::vector<DefenseTrial> cells(clip_modes.size() * per_mode);
  parallel_for(cells.size(), threads, [&](std::size_t cell) {
    const std::size_t m = cell / per_mode;
    const std::uint64_t seed = seeds[(cell % per_mode) / classes];
    const auto target = static_cast<Index>(cell % classes);
    AttributionConfig a = attribution;
    a.config.clip_mode = clip_modes[m];
    a.config.rng_seed = seed;
    const MaskEnsemble ens = optimize_attribution(model, black, target, a);
    const ActivationTrace trace = forward(model, ens.final_input);
    DefenseTrial t;
    t.target = target;
    t.seed = seed;
    t.score = trace.probabilities[target];
    t.predicted = argmax_class(trace);
    t.success = rule.rule == SuccessRule::Argmax ? t.predicted == target : t.score >= rule.threshold;
    cells[cell] = t;
  });

  for (std::size_t m = 0; m < clip_modes.size(); ++m) {
    DefenseModeResult r;
    r.mode = clip_modes[m];
    r.trials.assign(cells.begin() + static_cast<std::ptrdiff_t>(m * per_mode),
                    cells.begin() + static_cast<std::ptrdiff_t>((m + 1) * per_mode));
    r.successes = static_cast<std::size_t>(
        std::count_if(r.trials.begin(), r.trials.end(), [](const auto& t) { return t.success; }));
    r.rate = r.trials.empty() ? 0.0
                              : static_cast<double>(r.successes) / static_cast<double>(r.trials.size());
    report.modes.push_back(std::move(r));
  }
  return report;
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const Index n = v.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v[a] < v[b]; });
  Eigen::VectorXd ranks(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && v[order[static_cast<std::size_t>(j + 1)]] == v[order[static_cast<std::size_t>(i)]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) ranks[order[static_cast<std::size_t>(k)]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw Error("shape-mismatch", "correlation needs two equal-length vectors of size >= 2");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double saa = (da * da).sum(), sbb = (db * db).sum();
  // a constant vector has no defined correlation; identical inputs still score 1
  if (saa == 0.0 || sbb == 0.0) return a == b ? 1.0 : 0.0;
  return std::clamp((da * db).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
}

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return pearson(average_ranks(a), average_ranks(b));
}

std::string SanityReport::to_json() const {
  nlohmann::json j;
  j["target"] = target;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : stages)
    j["stages"].push_back({{"stage", s.stage}, {"spearman", s.spearman}});
  return j.dump(2);
}

SanityReport sanity_check(const NetworkModel& model, const Tensor& x, Index target,
                          std::size_t num_stages, const AttributionConfig& attribution,
                          std::uint64_t randomization_seed) {
  if (num_stages > model.weighted_layers_from_output().size())
    throw Error("bad-layer-index", "more sanity stages than weighted layers");
  SanityReport report;
  report.target = target;
  const Tensor original = optimize_attribution(model, x, target, attribution).map;
  for (std::size_t s = 0; s <= num_stages; ++s) {
    const NetworkModel randomized = randomize_layers(model, s, randomization_seed);
    SanityStage stage;
    stage.stage = s;
    stage.map = optimize_attribution(randomized, x, target, attribution).map;
    stage.spearman = spearman(original.data(), stage.map.data());
    report.stages.push_back(std::move(stage));
  }
  return report;
}

}  // namespace fei
