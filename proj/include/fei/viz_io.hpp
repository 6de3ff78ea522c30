#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fei/tensor.hpp"

namespace fei {

enum class Split { Train, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

inline constexpr std::array<std::string_view, 3> kShapeClassNames = {"square", "disk", "cross"};
inline constexpr Index kImageSide = 32;

/// Synthetic one-shape-per-image classification set. Images are {1,32,32}
/// in [0,1]; masks are {32,32} with 1 on shape pixels.
struct ShapesDataset {
  std::vector<Tensor> images;
  std::vector<Index> labels;
  std::vector<Tensor> masks;
  Split split = Split::Train;
  std::uint64_t seed = 0;

  std::size_t size() const { return images.size(); }
};

/// Labels cycle square, disk, cross; bit-deterministic in (seed, split).
ShapesDataset gen_shapes(std::uint64_t seed, std::size_t count, Split split);

// Binary PGM (P5) / PPM (P6), maxval 255, half-up rounding. Error codes:
// "bad-magic", "malformed-header", "size-mismatch", "value-out-of-range",
// "io-error".
void write_pgm(const Tensor& map, const std::filesystem::path& path);
Tensor read_pgm(const std::filesystem::path& path);
void write_ppm(const Tensor& rgb, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);

std::string encode_pgm(const Tensor& map);
Tensor decode_pgm(const std::string& bytes);
std::string encode_ppm(const Tensor& rgb);

/// Diverging blue -> white -> red colormap value for t in [0,1].
std::array<double, 3> diverging_color(double t);

/// Overlays the min-max normalized map on a grayscale base. A constant map
/// renders as the colormap midpoint. Returns {3,H,W}.
Tensor render_heatmap(const Tensor& map, const Tensor& base_image, double overlay_alpha);

struct IdxDataset {
  std::vector<Tensor> images;  ///< {1,rows,cols} in [0,1]
  std::vector<Index> labels;
};

/// IDX images (magic 0x00000803) and labels (0x00000801). Error codes:
/// "bad-magic", "count-mismatch", "truncated", "io-error".
IdxDataset load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path);
std::vector<Tensor> read_idx_images(const std::filesystem::path& path);
std::vector<Index> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::vector<Tensor>& images, const std::filesystem::path& path);
void write_idx_labels(const std::vector<Index>& labels, const std::filesystem::path& path);

/// Fraction of the upper q-fractile of `map` that falls inside `shape_mask`.
double localization_score(const Tensor& map, const Tensor& shape_mask, double q);

std::uint8_t quantize_byte(double v);

}  // namespace fei
