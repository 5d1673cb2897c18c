#pragma once

// Synthetic image classes, Gaussian corruption, on-disk image loading and
// disjoint splits. Clean images are single-channel with values in [0, 1].

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gahb/tensor.hpp"

namespace gahb {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { calpha, disks, sine_cone, single_image_ray, shuffled, image_dir };

const char* to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::calpha;
  std::size_t count = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;

  // calpha: contour and background regularity.
  double alpha1 = 2.0;
  double alpha2 = 2.0;
  // single_image_ray: scale range; the base image is built from `inner`.
  double scale_min = 0.2;
  double scale_max = 1.0;
  // shuffled / single_image_ray source, and image_dir location.
  std::shared_ptr<DatasetSpec> inner;
  std::string path;
  std::uint64_t perm_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

struct ImageSample {
  Tensor4d pixels;  // (1, 1, h, w)
  nlohmann::json metadata;
};

// --- C^alpha images --------------------------------------------------------

/// Intermediate fields of the C^alpha construction, exposed for inspection.
struct CalphaLayers {
  std::vector<double> contour;  // row position of the boundary per column
  Tensor4d background1;         // filtered fields before masking
  Tensor4d background2;
  Tensor4d mask;  // 1 where row > contour(column)
  Tensor4d image;  // combined and rescaled to [0, 1]
};

CalphaLayers synth_calpha_layers(std::size_t height, std::size_t width, double alpha1,
                                 double alpha2, std::uint64_t seed);
ImageSample synth_calpha(std::size_t height, std::size_t width, double alpha1, double alpha2,
                         std::uint64_t seed);

/// Fractional integration of a white field: multiplies the spectrum by
/// |omega|^(-alpha) with integer frequencies and zero DC gain.
Tensor4d power_law_field(std::size_t height, std::size_t width, double alpha,
                         std::span<const double> white);

// --- Disks -----------------------------------------------------------------

struct DiskParams {
  double cx = 0;  // column of the center, pixel units
  double cy = 0;  // row of the center
  double radius = 0;
  double fg = 1;
  double bg = 0;

  std::array<double, 5> as_array() const { return {cx, cy, radius, fg, bg}; }
  static DiskParams from_array(const std::array<double, 5>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }
  nlohmann::json to_json() const;
  static DiskParams from_json(const nlohmann::json& j);
};

/// Anti-aliased disk: bg + (fg - bg) * clamp(0.5 + radius - dist, 0, 1).
ImageSample synth_disk(std::size_t height, std::size_t width, const DiskParams& p);
/// Uniform draw: radius in [0.1, 0.35]·min(h, w), disk inside the frame,
/// intensities in [0, 1] with |fg - bg| >= 0.2.
DiskParams draw_disk_params(std::size_t height, std::size_t width, std::uint64_t seed,
                            std::uint64_t index);
std::vector<ImageSample> synth_disk_dataset(const DatasetSpec& spec);

/// Orthonormal basis of the tangent space at a disk sample: central
/// differences along (cx, cy, radius, fg, bg), orthonormalized by QR.
std::vector<Tensor4d> disk_tangent_basis(const ImageSample& sample, double step = 1e-3);

// --- Sine cone and ray -----------------------------------------------------

ImageSample synth_sine_cone(std::size_t height, std::size_t width, double phase, double amplitude);
std::vector<ImageSample> synth_sine_dataset(const DatasetSpec& spec);

std::vector<ImageSample> single_image_ray(const ImageSample& base, double scale_min,
                                          double scale_max, std::size_t count, std::uint64_t seed);
ImageSample scale_sample(const ImageSample& base, double s);

// --- Permutations, noise ---------------------------------------------------

/// Fisher–Yates permutation of n indices fixed by `seed`.
std::vector<std::size_t> make_permutation(std::size_t n, std::uint64_t seed);
std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm);

/// out[perm[i]] = in[i] for every pixel plane.
Tensor4d permute_pixels(const Tensor4d& x, std::span<const std::size_t> perm);
Tensor4d unpermute_pixels(const Tensor4d& x, std::span<const std::size_t> perm);

std::vector<ImageSample> apply_permutation(std::span<const ImageSample> samples,
                                           std::uint64_t perm_seed);
std::vector<ImageSample> invert_applied_permutation(std::span<const ImageSample> samples,
                                                    std::uint64_t perm_seed);

/// y = x + sigma * z with z standard normal, keyed by (seed, stream). Not clipped.
template <class T>
Tensor4<T> add_noise(const Tensor4<T>& x, double sigma, std::uint64_t seed,
                     std::uint64_t stream = 0);

// --- Files and splits ------------------------------------------------------

std::vector<ImageSample> load_image_dir(const std::filesystem::path& dir, std::size_t height,
                                        std::size_t width);
/// Bilinear resampling with pixel-center alignment.
Tensor4d resize_bilinear(const Tensor4d& img, std::size_t height, std::size_t width);

/// Shuffles indices [0, n) by `seed` and cuts consecutive chunks of `sizes`.
std::vector<std::vector<std::size_t>> split_disjoint(std::size_t n,
                                                     std::span<const std::size_t> sizes,
                                                     std::uint64_t seed);

/// Materializes any DatasetSpec.
std::vector<ImageSample> generate(const DatasetSpec& spec);

/// Stacks samples into an (N, 1, h, w) tensor.
Tensor4d to_batch(std::span<const ImageSample> samples);
std::vector<Tensor4d> to_images(const Tensor4d& batch);

// Packed dataset file: "GAHB", u32 version, u32 count, u32 h, u32 w,
// count·h·w little-endian f32, then a JSON trailer.
inline constexpr std::uint32_t kDatasetFileVersion = 1;

struct PackedDataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ImageSample> samples;
  nlohmann::json spec;  // echo of the generating spec, if any
};

void save_dataset(const std::filesystem::path& path, const PackedDataset& ds);
PackedDataset load_dataset(const std::filesystem::path& path);

}  // namespace gahb
