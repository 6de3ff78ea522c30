#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fei/evaluation.hpp"
#include "fei/nn.hpp"
#include "fei/rng.hpp"
#include "fei/viz_io.hpp"

namespace fei::testing {

inline constexpr std::uint64_t kFixtureDatasetSeed = 1;

/// The default-config fixture, trained once and cached in the build tree.
const NetworkModel& fixture_model();
/// The cached weight file behind fixture_model().
std::filesystem::path fixture_model_path();

/// Held-out fixture images with the model's predicted class as target.
std::vector<EvalSample> fixture_samples(std::size_t count);
const ShapesDataset& fixture_test_set();

/// Conv -> ReLU* -> MaxPool -> Flatten -> Linear -> ReLU -> Linear, with
/// random extents, stride and padding. Weights uniform in +-scale/sqrt(fan_in).
NetworkModel random_conv_model(Rng& rng, double scale = 1.5);

/// Flatten -> Linear over a {1,h,w} input.
NetworkModel random_linear_model(Rng& rng, Index height, Index width, Index classes);

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = 0.0, double hi = 1.0);

/// max |a-b| / max(|a|,|b|,floor) over all elements.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace fei::testing
