#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "fei/tensor.hpp"

namespace fei {

struct PixelRange {
  double min = 0.0;
  double max = 1.0;
};

enum class ReferenceKind { RandomMonotone, Gray, Black, GaussianBlur, Noise };

std::string_view to_string(ReferenceKind kind);
ReferenceKind parse_reference_kind(std::string_view name);

/// Recipe for the fully masked image R.
struct ReferenceSpec {
  ReferenceKind kind = ReferenceKind::RandomMonotone;
  double sigma = 2.0;  ///< GaussianBlur only, in pixels
  std::uint64_t seed = 0;
  PixelRange range{};

  static ReferenceSpec random_monotone(std::uint64_t seed) { return {ReferenceKind::RandomMonotone, 0.0, seed, {}}; }
  static ReferenceSpec gray() { return {ReferenceKind::Gray, 0.0, 0, {}}; }
  static ReferenceSpec black() { return {ReferenceKind::Black, 0.0, 0, {}}; }
  static ReferenceSpec blur(double sigma) { return {ReferenceKind::GaussianBlur, sigma, 0, {}}; }
  static ReferenceSpec noise(std::uint64_t seed) { return {ReferenceKind::Noise, 0.0, seed, {}}; }
};

/// Reference image shaped like `x`. Stochastic kinds are deterministic in
/// (spec.seed, iteration).
Tensor make_reference(const ReferenceSpec& spec, const Tensor& x, std::uint64_t iteration = 0);

/// Separable Gaussian blur per channel, radius ceil(3 sigma), mirrored edges.
Tensor gaussian_blur(const Tensor& x, double sigma);

}  // namespace fei
