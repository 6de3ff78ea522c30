#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "fei/nn.hpp"
#include "fei/reference.hpp"

namespace fei {

struct Pixel {
  Index row = 0;
  Index col = 0;
  auto operator<=>(const Pixel&) const = default;
};

/// Row-major sorted, duplicate-free pixel coordinates.
using PixelSet = std::vector<Pixel>;

/// floor(f * n), tolerant to the representation error of f.
Index fractile_count(double f, Index n);

/// The floor(f N) lowest-valued pixels; ties go to the smaller row-major
/// index first.
PixelSet lower_fractile(const Tensor& map, double f);
/// The floor(f N) highest-valued pixels; ties go to the smaller index first.
PixelSet upper_fractile(const Tensor& map, double f);

/// x with every pixel of `set` taken from `reference` on all channels.
Tensor perturb(const Tensor& x, const PixelSet& set, const Tensor& reference);

/// phi(x (x) S) - phi(x)
double influence(const NetworkModel& model, const Tensor& x, const PixelSet& set,
                 const Tensor& reference, Index target);

/// Per-pixel sum of I(S) over every subset containing that pixel.
/// Exponential; rejects images with more than `max_pixels` pixels.
Tensor pixel_influence_oracle(const NetworkModel& model, const Tensor& x, const Tensor& reference,
                              Index target, Index max_pixels = 12);

enum class CurveKind { Preservation, Deletion };

std::string_view to_string(CurveKind kind);

struct FaithfulnessCurve {
  CurveKind kind = CurveKind::Preservation;
  std::vector<double> fractions;
  std::vector<double> scores;
  double auc = 0.0;
};

/// "fraction,score" rows with a header line.
std::string curve_csv(const FaithfulnessCurve& curve);

double trapezoid_auc(const std::vector<double>& fractions, const std::vector<double>& scores);

/// Uniform grid 0, step, ..., 1. Throws unless step divides 1.
std::vector<double> uniform_grid(double step);

/// Scores phi(target) with the lower (Preservation) or upper (Deletion)
/// f-fractile of `map` replaced by `reference`, for f on a uniform grid.
FaithfulnessCurve faithfulness_curve(const NetworkModel& model, const Tensor& x, const Tensor& map,
                                     CurveKind kind, const Tensor& reference, Index target,
                                     double grid_step = 0.05);

FaithfulnessCurve faithfulness_curve(const NetworkModel& model, const Tensor& x, const Tensor& map,
                                     CurveKind kind, const ReferenceSpec& reference, Index target,
                                     double grid_step = 0.05);

}  // namespace fei
