#include "fei/reference.hpp"

#include <cmath>
#include <vector>

#include "fei/rng.hpp"

namespace fei {

std::string_view to_string(ReferenceKind kind) {
  switch (kind) {
    case ReferenceKind::RandomMonotone: return "random-monotone";
    case ReferenceKind::Gray: return "gray";
    case ReferenceKind::Black: return "black";
    case ReferenceKind::GaussianBlur: return "blur";
    case ReferenceKind::Noise: return "noise";
  }
  return "?";
}

ReferenceKind parse_reference_kind(std::string_view name) {
  for (auto k : {ReferenceKind::RandomMonotone, ReferenceKind::Gray, ReferenceKind::Black,
                 ReferenceKind::GaussianBlur, ReferenceKind::Noise})
    if (to_string(k) == name) return k;
  throw Error("bad-reference", "unknown reference kind '" + std::string(name) + "'");
}

namespace {

// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (!(sigma > 0.0)) throw Error("bad-sigma", "blur sigma must be positive");
  if (x.rank() != 3) throw Error("shape-mismatch", "blur expects a {C,H,W} image");
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (Index k = -radius; k <= radius; ++k) {
    const double w = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  const Index channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  Tensor rows(x.shape());
  for (Index c = 0; c < channels; ++c)
    for (Index y = 0; y < height; ++y)
      for (Index xx = 0; xx < width; ++xx) {
        double acc = 0.0;
        for (Index k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * x(c, y, reflect(xx + k, width));
        rows(c, y, xx) = acc;
      }
  Tensor out(x.shape());
  for (Index c = 0; c < channels; ++c)
    for (Index y = 0; y < height; ++y)
      for (Index xx = 0; xx < width; ++xx) {
        double acc = 0.0;
        for (Index k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * rows(c, reflect(y + k, height), xx);
        out(c, y, xx) = acc;
      }
  return out;
}

Tensor make_reference(const ReferenceSpec& spec, const Tensor& x, std::uint64_t iteration) {
  const PixelRange& r = spec.range;
  if (!(r.min < r.max)) throw Error("bad-range", "pixel range needs min < max");
  switch (spec.kind) {
    case ReferenceKind::RandomMonotone: {
      Rng rng(spec.seed, iteration);
      return Tensor(x.shape(), rng.uniform(r.min, r.max));
    }
    case ReferenceKind::Gray:
      return Tensor(x.shape(), 0.5 * (r.min + r.max));
    case ReferenceKind::Black:
      return Tensor(x.shape(), r.min);
    case ReferenceKind::GaussianBlur:
      return gaussian_blur(x, spec.sigma);
    case ReferenceKind::Noise: {
      Rng rng(spec.seed, iteration);
      Tensor out(x.shape());
      for (Index i = 0; i < out.size(); ++i) out[i] = rng.uniform(r.min, r.max);
      return out;
    }
  }
  throw Error("bad-reference", "unknown reference kind");
}

}  // namespace fei
