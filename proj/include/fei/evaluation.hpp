#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fei/metrics.hpp"
#include "fei/optimizer.hpp"

namespace fei {

/// A named attribution recipe, e.g. "ibm" (FEI with IBM clipping),
/// "none" (no clipping), "ibm_l1", "ibm_single".
struct MethodConfig {
  std::string name;
  OptimizerConfig config;
  FractileSchedule schedule;
};

/// Parses "<clip>[_l1|_single]" into a method on top of `schedule`.
MethodConfig method_from_name(std::string_view name, const FractileSchedule& schedule = {},
                              const AdamParams& adam = {});

/// References used for optimization and for scoring curves.
struct EvalProtocol {
  ReferenceSpec optimization_reference = ReferenceSpec::random_monotone(0);
  ReferenceSpec preservation_reference = ReferenceSpec::blur(2.0);
  ReferenceSpec deletion_reference = ReferenceSpec::gray();
  double grid_step = 0.05;
};

struct EvalSample {
  Tensor image;
  Index target = 0;
};

struct ReportRow {
  std::string method;
  ClipMode clip_mode = ClipMode::None;
  Objective objective = Objective::Preservation;
  CurveKind metric = CurveKind::Preservation;
  double auc = 0.0;  ///< mean over images for this seed
  std::size_t image_count = 0;
  std::uint64_t seed = 0;
};

struct MethodSummary {
  std::string method;
  double preservation_mean = 0.0;
  double preservation_std = 0.0;
  double deletion_mean = 0.0;
  double deletion_std = 0.0;
};

struct ComparisonReport {
  std::vector<ReportRow> rows;
  std::vector<MethodSummary> summary;

  /// method,clip_mode,objective,metric,auc,image_count,seed
  std::string to_csv() const;
  std::string summary_csv() const;
};

/// Mean stdev (sample, n-1) helper; stdev is 0 for fewer than two values.
std::pair<double, double> mean_stdev(const std::vector<double>& values);

/// AUC of both curves for every (method, seed, image), averaged per seed.
ComparisonReport compare_methods(const NetworkModel& model, const std::vector<EvalSample>& samples,
                                 const std::vector<MethodConfig>& methods,
                                 const std::vector<std::uint64_t>& seeds,
                                 const EvalProtocol& protocol = {}, unsigned threads = 1);

}  // namespace fei
