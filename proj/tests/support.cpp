#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "fei/serialize.hpp"
#include "fei/train.hpp"

namespace fei::testing {

namespace fs = std::filesystem;

namespace {

fs::path cache_path() {
  const TrainConfig cfg;
  return fs::path(FEI_FIXTURE_CACHE) /
         ("fixture-seed" + std::to_string(kFixtureDatasetSeed) + "-n" +
          std::to_string(cfg.train_count) + "-e" + std::to_string(cfg.epochs) + ".feiw");
}

}  // namespace

const NetworkModel& fixture_model() {
  static const NetworkModel model = [] {
    const TrainConfig cfg;
    const fs::path path = cache_path();
    if (fs::exists(path)) return load_weights(path);
    fs::create_directories(path.parent_path());
    const TrainResult trained = train_fixture(kFixtureDatasetSeed, cfg);
    // parallel test processes may race here; rename is atomic
    const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid());
    save_weights(trained.model, tmp);
    fs::rename(tmp, path);
    return trained.model;
  }();
  return model;
}

std::filesystem::path fixture_model_path() {
  fixture_model();
  return cache_path();
}

const ShapesDataset& fixture_test_set() {
  static const ShapesDataset data = gen_shapes(kFixtureDatasetSeed, 20, Split::Test);
  return data;
}

std::vector<EvalSample> fixture_samples(std::size_t count) {
  const ShapesDataset& data = fixture_test_set();
  std::vector<EvalSample> out;
  for (std::size_t i = 0; i < std::min(count, data.size()); ++i)
    out.push_back({data.images[i], argmax_class(forward(fixture_model(), data.images[i]))});
  return out;
}

namespace {

void fill_uniform(Rng& rng, Tensor& t, double s) {
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
}

void randomize(NetworkModel& m, Rng& rng, double scale) {
  for (auto& l : m.layers) {
    if (!l.has_weights()) continue;
    const double s = scale / std::sqrt(static_cast<double>(l.fan_in()));
    fill_uniform(rng, l.weight, s);
    fill_uniform(rng, l.bias, s);
  }
}

}  // namespace

NetworkModel random_conv_model(Rng& rng, double scale) {
  const Index channels = rng.uniform_int(1, 2);
  const Index side = 2 * rng.uniform_int(2, 3);
  const Index filters = rng.uniform_int(2, 3);
  const Index kernel = rng.uniform_int(1, 3);
  const Index padding = kernel / 2;
  const Index hidden = rng.uniform_int(3, 5);
  const Index classes = rng.uniform_int(2, 4);

  NetworkModel m;
  m.input_shape = {channels, side, side};
  m.num_classes = classes;
  m.layers = {conv2d(channels, filters, kernel, 1, padding), relu(true), maxpool2x2(), flatten()};
  const Index conv_side = side + 2 * padding - kernel + 1;
  const Index features = filters * (conv_side / 2) * (conv_side / 2);
  m.layers.push_back(linear(features, hidden));
  m.layers.push_back(relu());
  m.layers.push_back(linear(hidden, classes));
  m.validate();
  randomize(m, rng, scale);
  return m;
}

NetworkModel random_linear_model(Rng& rng, Index height, Index width, Index classes) {
  NetworkModel m;
  m.input_shape = {1, height, width};
  m.num_classes = classes;
  m.layers = {flatten(), linear(height * width, classes)};
  m.validate();
  randomize(m, rng, 1.0);
  return m;
}

Tensor random_tensor(Rng& rng, const Shape& shape, double lo, double hi) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace fei::testing
