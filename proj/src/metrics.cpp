#include "fei/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace fei {

namespace {

std::vector<Index> ranked_indices(const Tensor& map, bool ascending) {
  std::vector<Index> order(static_cast<std::size_t>(map.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto& v = map.data();
  if (ascending) {
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v[a] < v[b]; });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v[a] > v[b]; });
  }
  return order;
}

PixelSet take_fractile(const Tensor& map, double f, bool ascending) {
  if (map.rank() != 2) throw Error("shape-mismatch", "attribution maps are {H,W}");
  if (!(f >= 0.0 && f <= 1.0)) throw Error("bad-fraction", "fraction must lie in [0,1]");
  const Index count = fractile_count(f, map.size());
  auto order = ranked_indices(map, ascending);
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  PixelSet set;
  set.reserve(order.size());
  const Index width = map.dim(1);
  for (Index i : order) set.push_back({i / width, i % width});
  return set;
}

}  // namespace

Index fractile_count(double f, Index n) {
  return static_cast<Index>(std::floor(f * static_cast<double>(n) + 1e-9));
}

PixelSet lower_fractile(const Tensor& map, double f) { return take_fractile(map, f, true); }

PixelSet upper_fractile(const Tensor& map, double f) { return take_fractile(map, f, false); }

Tensor perturb(const Tensor& x, const PixelSet& set, const Tensor& reference) {
  if (x.rank() != 3 || x.shape() != reference.shape())
    throw Error("shape-mismatch", "perturb expects matching {C,H,W} image and reference");
  Tensor out = x;
  const Index channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  for (const Pixel& p : set) {
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width)
      throw Error("out-of-bounds", "pixel (" + std::to_string(p.row) + "," +
                                       std::to_string(p.col) + ") outside image");
    for (Index c = 0; c < channels; ++c) out(c, p.row, p.col) = reference(c, p.row, p.col);
  }
  return out;
}

double influence(const NetworkModel& model, const Tensor& x, const PixelSet& set,
                 const Tensor& reference, Index target) {
  if (target < 0 || target >= model.num_classes)
    throw Error("bad-target", "target class out of range");
  const double base = forward(model, x).probabilities[target];
  return forward(model, perturb(x, set, reference)).probabilities[target] - base;
}

Tensor pixel_influence_oracle(const NetworkModel& model, const Tensor& x, const Tensor& reference,
                              Index target, Index max_pixels) {
  const Shape spatial = spatial_shape(x);
  const Index n = shape_size(spatial);
  if (n > max_pixels || n > 20)
    throw Error("too-many-pixels", "influence oracle enumerates 2^N subsets; N = " +
                                       std::to_string(n));
  Tensor out(spatial);
  const double base = forward(model, x).probabilities[target];
  const Index width = spatial[1];
  for (std::uint32_t subset = 1; subset < (1u << n); ++subset) {
    PixelSet set;
    for (Index p = 0; p < n; ++p)
      if (subset & (1u << p)) set.push_back({p / width, p % width});
    const double inf = forward(model, perturb(x, set, reference)).probabilities[target] - base;
    for (const Pixel& p : set) out(p.row, p.col) += inf;
  }
  return out;
}

std::string_view to_string(CurveKind kind) {
  return kind == CurveKind::Preservation ? "preservation" : "deletion";
}

std::string curve_csv(const FaithfulnessCurve& curve) {
  std::string out = "fraction,score\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.fractions.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.9f\n", curve.fractions[i], curve.scores[i]);
    out += buf;
  }
  return out;
}

double trapezoid_auc(const std::vector<double>& fractions, const std::vector<double>& scores) {
  if (fractions.size() != scores.size())
    throw Error("shape-mismatch", "curve fractions and scores differ in length");
  double auc = 0.0;
  for (std::size_t i = 1; i < fractions.size(); ++i)
    auc += 0.5 * (scores[i] + scores[i - 1]) * (fractions[i] - fractions[i - 1]);
  return auc;
}

std::vector<double> uniform_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw Error("bad-grid", "grid step must lie in (0,1]");
  const double intervals = std::round(1.0 / step);
  if (std::abs(intervals * step - 1.0) > 1e-9)
    throw Error("bad-grid", "grid step must divide 1 evenly");
  const auto n = static_cast<int>(intervals);
  std::vector<double> grid;
  for (int i = 0; i <= n; ++i) grid.push_back(static_cast<double>(i) / n);
  return grid;
}

FaithfulnessCurve faithfulness_curve(const NetworkModel& model, const Tensor& x, const Tensor& map,
                                     CurveKind kind, const Tensor& reference, Index target,
                                     double grid_step) {
  if (spatial_shape(x) != map.shape())
    throw Error("shape-mismatch", "attribution map does not match image");
  if (target < 0 || target >= model.num_classes)
    throw Error("bad-target", "target class out of range");
  FaithfulnessCurve curve;
  curve.kind = kind;
  curve.fractions = uniform_grid(grid_step);
  for (double f : curve.fractions) {
    const PixelSet set =
        kind == CurveKind::Preservation ? lower_fractile(map, f) : upper_fractile(map, f);
    curve.scores.push_back(forward(model, perturb(x, set, reference)).probabilities[target]);
  }
  curve.auc = trapezoid_auc(curve.fractions, curve.scores);
  return curve;
}

FaithfulnessCurve faithfulness_curve(const NetworkModel& model, const Tensor& x, const Tensor& map,
                                     CurveKind kind, const ReferenceSpec& reference, Index target,
                                     double grid_step) {
  return faithfulness_curve(model, x, map, kind, make_reference(reference, x), target, grid_step);
}

}  // namespace fei
