#include "fei/viz_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fei/metrics.hpp"
#include "fei/rng.hpp"

namespace fei {

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  throw Error("bad-split", "unknown split '" + std::string(name) + "'");
}

namespace {

void fill_square(Tensor& mask, Rng& rng) {
  const Index side = rng.uniform_int(6, 12);
  const Index top = rng.uniform_int(1, kImageSide - 1 - side);
  const Index left = rng.uniform_int(1, kImageSide - 1 - side);
  for (Index y = top; y < top + side; ++y)
    for (Index x = left; x < left + side; ++x) mask(y, x) = 1.0;
}

void fill_disk(Tensor& mask, Rng& rng) {
  const double radius = rng.uniform(4.0, 8.0);
  const auto reach = static_cast<Index>(std::ceil(radius));
  const double cy = static_cast<double>(rng.uniform_int(1 + reach, kImageSide - 2 - reach));
  const double cx = static_cast<double>(rng.uniform_int(1 + reach, kImageSide - 2 - reach));
  for (Index y = 0; y < kImageSide; ++y)
    for (Index x = 0; x < kImageSide; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= radius * radius) mask(y, x) = 1.0;
    }
}

void fill_cross(Tensor& mask, Rng& rng) {
  const Index arm = rng.uniform_int(4, 8);        // half-length
  const Index thickness = rng.uniform_int(2, 4);  // bar width
  const Index cy = rng.uniform_int(1 + arm, kImageSide - 2 - arm);
  const Index cx = rng.uniform_int(1 + arm, kImageSide - 2 - arm);
  const Index lo = -(thickness / 2), hi = lo + thickness;
  for (Index t = -arm; t <= arm; ++t)
    for (Index w = lo; w < hi; ++w) {
      mask(cy + w, cx + t) = 1.0;
      mask(cy + t, cx + w) = 1.0;
    }
}

}  // namespace

ShapesDataset gen_shapes(std::uint64_t seed, std::size_t count, Split split) {
  if (count < 1) throw Error("bad-count", "dataset needs at least one sample");
  ShapesDataset ds;
  ds.split = split;
  ds.seed = seed;
  Rng rng(seed, split == Split::Train ? 0x7261696eULL : 0x74657374ULL);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<Index>(i % kShapeClassNames.size());
    Tensor mask({kImageSide, kImageSide});
    switch (label) {
      case 0: fill_square(mask, rng); break;
      case 1: fill_disk(mask, rng); break;
      default: fill_cross(mask, rng); break;
    }
    const double background = rng.uniform(0.1, 0.3);
    const double foreground = rng.uniform(0.6, 1.0);
    Tensor image({1, kImageSide, kImageSide});
    for (Index p = 0; p < mask.size(); ++p) {
      const double base = mask[p] > 0.0 ? foreground : background;
      image[p] = std::clamp(base + rng.normal(0.0, 0.1), 0.0, 1.0);
    }
    ds.images.push_back(std::move(image));
    ds.labels.push_back(label);
    ds.masks.push_back(std::move(mask));
  }
  return ds;
}

std::uint8_t quantize_byte(double v) {
  if (!(v >= 0.0 && v <= 1.0))
    throw Error("value-out-of-range", "pixel value " + std::to_string(v) + " outside [0,1]");
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io-error", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io-error", "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io-error", "short write to " + path.string());
}

std::string netpbm_header(const char* magic, Index width, Index height) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) +
         "\n255\n";
}

// Parses "P5"/"P6" headers with optional comments; returns the payload offset.
std::size_t parse_netpbm(const std::string& bytes, const char* magic, Index& width, Index& height) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0)
    throw Error("bad-magic", std::string("expected ") + magic + " netpbm file");
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      const auto ch = static_cast<unsigned char>(bytes[pos]);
      if (std::isspace(ch)) {
        ++pos;
      } else if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos || pos - start > 9) throw Error("malformed-header", "bad netpbm header field");
    return std::stol(bytes.substr(start, pos - start));
  };
  width = next_int();
  height = next_int();
  const long maxval = next_int();
  if (width < 1 || height < 1) throw Error("malformed-header", "netpbm extents must be positive");
  if (maxval != 255) throw Error("malformed-header", "only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw Error("malformed-header", "missing separator before netpbm payload");
  return pos + 1;
}

Tensor as_map(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2)});
  throw Error("shape-mismatch", "PGM expects {H,W} or {1,H,W}, got " + shape_string(t.shape()));
}

}  // namespace

std::string encode_pgm(const Tensor& map) {
  const Tensor m = as_map(map);
  std::string out = netpbm_header("P5", m.dim(1), m.dim(0));
  for (Index i = 0; i < m.size(); ++i) out.push_back(static_cast<char>(quantize_byte(m[i])));
  return out;
}

Tensor decode_pgm(const std::string& bytes) {
  Index width = 0, height = 0;
  const std::size_t offset = parse_netpbm(bytes, "P5", width, height);
  if (bytes.size() - offset != static_cast<std::size_t>(width * height))
    throw Error("size-mismatch", "PGM payload does not match its header");
  Tensor m({height, width});
  for (Index i = 0; i < m.size(); ++i)
    m[i] = static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]) / 255.0;
  return m;
}

std::string encode_ppm(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw Error("shape-mismatch", "PPM expects {3,H,W}, got " + shape_string(rgb.shape()));
  const Index height = rgb.dim(1), width = rgb.dim(2);
  std::string out = netpbm_header("P6", width, height);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      for (Index c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize_byte(rgb(c, y, x))));
  return out;
}

void write_pgm(const Tensor& map, const std::filesystem::path& path) {
  write_file(path, encode_pgm(map));
}

Tensor read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

void write_ppm(const Tensor& rgb, const std::filesystem::path& path) {
  write_file(path, encode_ppm(rgb));
}

Tensor read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Index width = 0, height = 0;
  const std::size_t offset = parse_netpbm(bytes, "P6", width, height);
  if (bytes.size() - offset != static_cast<std::size_t>(3 * width * height))
    throw Error("size-mismatch", "PPM payload does not match its header");
  Tensor rgb({3, height, width});
  std::size_t p = offset;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      for (Index c = 0; c < 3; ++c) rgb(c, y, x) = static_cast<unsigned char>(bytes[p++]) / 255.0;
  return rgb;
}

std::array<double, 3> diverging_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  if (t < 0.5) return {2.0 * t, 2.0 * t, 1.0};
  return {1.0, 2.0 * (1.0 - t), 2.0 * (1.0 - t)};
}

Tensor render_heatmap(const Tensor& map, const Tensor& base_image, double overlay_alpha) {
  if (!(overlay_alpha >= 0.0 && overlay_alpha <= 1.0))
    throw Error("bad-alpha", "overlay alpha must lie in [0,1]");
  const Tensor m = as_map(map);
  const Tensor base = as_map(base_image);
  if (m.shape() != base.shape()) throw Error("shape-mismatch", "heatmap and base image differ");
  const double lo = m.min(), hi = m.max();
  const Index height = m.dim(0), width = m.dim(1);
  Tensor rgb({3, height, width});
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const double t = hi > lo ? (m(y, x) - lo) / (hi - lo) : 0.5;
      const auto color = diverging_color(t);
      for (Index c = 0; c < 3; ++c)
        rgb(c, y, x) = (1.0 - overlay_alpha) * base(y, x) +
                       overlay_alpha * color[static_cast<std::size_t>(c)];
    }
  return rgb;
}

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t pos) {
  if (pos + 4 > bytes.size()) throw Error("truncated", "IDX header truncated");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i]);
  return v;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

}  // namespace

std::vector<Tensor> read_idx_images(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (read_be32(bytes, 0) != 0x00000803u) throw Error("bad-magic", "not an IDX image file");
  const std::uint32_t count = read_be32(bytes, 4);
  const auto rows = static_cast<Index>(read_be32(bytes, 8));
  const auto cols = static_cast<Index>(read_be32(bytes, 12));
  if (rows < 1 || cols < 1) throw Error("malformed-header", "IDX image extents must be positive");
  const std::size_t pixels = static_cast<std::size_t>(rows * cols);
  if (bytes.size() != 16 + pixels * count) throw Error("truncated", "IDX image payload size mismatch");
  std::vector<Tensor> images;
  images.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    Tensor img({1, rows, cols});
    for (std::size_t i = 0; i < pixels; ++i)
      img[static_cast<Index>(i)] = static_cast<unsigned char>(bytes[16 + n * pixels + i]) / 255.0;
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<Index> read_idx_labels(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (read_be32(bytes, 0) != 0x00000801u) throw Error("bad-magic", "not an IDX label file");
  const std::uint32_t count = read_be32(bytes, 4);
  if (bytes.size() != 8 + static_cast<std::size_t>(count))
    throw Error("truncated", "IDX label payload size mismatch");
  std::vector<Index> labels;
  for (std::uint32_t n = 0; n < count; ++n) labels.push_back(static_cast<unsigned char>(bytes[8 + n]));
  return labels;
}

IdxDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path) {
  IdxDataset ds;
  ds.images = read_idx_images(images_path);
  ds.labels = read_idx_labels(labels_path);
  if (ds.images.size() != ds.labels.size()) {
    throw Error("count-mismatch", std::to_string(ds.images.size()) + " images but " +
                                      std::to_string(ds.labels.size()) + " labels");
  }
  return ds;
}

void write_idx_images(const std::vector<Tensor>& images, const std::filesystem::path& path) {
  if (images.empty()) throw Error("bad-count", "IDX image file needs at least one image");
  const Tensor first = as_map(images.front());
  std::string out;
  put_be32(out, 0x00000803u);
  put_be32(out, static_cast<std::uint32_t>(images.size()));
  put_be32(out, static_cast<std::uint32_t>(first.dim(0)));
  put_be32(out, static_cast<std::uint32_t>(first.dim(1)));
  for (const Tensor& img : images) {
    const Tensor m = as_map(img);
    if (m.shape() != first.shape()) throw Error("shape-mismatch", "IDX images must share a shape");
    for (Index i = 0; i < m.size(); ++i) out.push_back(static_cast<char>(quantize_byte(m[i])));
  }
  write_file(path, out);
}

void write_idx_labels(const std::vector<Index>& labels, const std::filesystem::path& path) {
  std::string out;
  put_be32(out, 0x00000801u);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (Index l : labels) {
    if (l < 0 || l > 255) throw Error("value-out-of-range", "IDX labels are single bytes");
    out.push_back(static_cast<char>(l));
  }
  write_file(path, out);
}

double localization_score(const Tensor& map, const Tensor& shape_mask, double q) {
  if (!(q > 0.0 && q < 1.0)) throw Error("bad-fraction", "q must lie in (0,1)");
  const Tensor m = as_map(map);
  const Tensor mask = as_map(shape_mask);
  if (m.shape() != mask.shape()) throw Error("shape-mismatch", "map and mask differ in shape");
  const PixelSet top = upper_fractile(m, q);
  if (top.empty()) return 0.0;
  std::size_t inside = 0;
  for (const Pixel& p : top) inside += mask(p.row, p.col) > 0.0 ? 1 : 0;
  return static_cast<double>(inside) / static_cast<double>(top.size());
}

}  // namespace fei
