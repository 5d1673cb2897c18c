#include "gahb/datasets.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "gahb/image_io.hpp"
#include "gahb/parallel.hpp"
#include "gahb/rng.hpp"

namespace gahb {

namespace {

// Planner calls are not thread-safe in FFTW; execution is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

using cplx = std::complex<double>;

// In-place c2c transform of a rows×cols array (rows == 1 for 1-D).
void fft_inplace(std::vector<cplx>& data, std::size_t rows, std::size_t cols, int sign) {
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = rows == 1 ? fftw_plan_dft_1d(int(cols), buf, buf, sign, FFTW_ESTIMATE)
                     : fftw_plan_dft_2d(int(rows), int(cols), buf, buf, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
}

double signed_freq(std::size_t k, std::size_t n) {
  return k <= n / 2 ? double(k) : double(k) - double(n);
}

void rescale_unit(std::span<double> v) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double lo = *mn, span = *mx - *mn;
  for (double& x : v) x = span > 0.0 ? (x - lo) / span : 0.0;
}

void require_size(std::size_t h, std::size_t w) {
  if (h < 8 || w < 8) throw DatasetError("image size must be at least 8x8");
}

// Raw disk renderer without the frame check; used for finite differences.
void render_disk(std::size_t h, std::size_t w, const DiskParams& p, std::span<double> out) {
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double dx = double(j) - p.cx, dy = double(i) - p.cy;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double coverage = std::clamp(0.5 + p.radius - dist, 0.0, 1.0);
      out[i * w + j] = p.bg + (p.fg - p.bg) * coverage;
    }
  }
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  return CounterRng(seed, 0x5a17).bits(index);
}

}  // namespace

const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::calpha: return "calpha";
    case DatasetKind::disks: return "disks";
    case DatasetKind::sine_cone: return "sine_cone";
    case DatasetKind::single_image_ray: return "single_image_ray";
    case DatasetKind::shuffled: return "shuffled";
    case DatasetKind::image_dir: return "image_dir";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  for (auto k : {DatasetKind::calpha, DatasetKind::disks, DatasetKind::sine_cone,
                 DatasetKind::single_image_ray, DatasetKind::shuffled, DatasetKind::image_dir}) {
    if (s == to_string(k)) return k;
  }
  if (s == "sine") return DatasetKind::sine_cone;
  if (s == "ray") return DatasetKind::single_image_ray;
  throw DatasetError("unknown dataset kind '" + s + "'");
}

void DatasetSpec::validate() const {
  if (count < 1) throw DatasetError("dataset count must be >= 1");
  require_size(height, width);
  switch (kind) {
    case DatasetKind::calpha:
      if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw DatasetError("alpha must be > 0");
      break;
    case DatasetKind::single_image_ray:
      if (!(scale_min >= 0.2) || !(scale_max <= 1.0) || scale_min > scale_max) {
        throw DatasetError("ray scales must satisfy 0.2 <= min <= max <= 1");
      }
      if (!inner) throw DatasetError("single_image_ray needs an inner dataset");
      inner->validate();
      break;
    case DatasetKind::shuffled:
      if (!inner) throw DatasetError("shuffled needs an inner dataset");
      inner->validate();
      if (inner->height != height || inner->width != width) {
        throw DatasetError("shuffled: inner image size differs");
      }
      break;
    case DatasetKind::image_dir:
      if (path.empty()) throw DatasetError("image_dir needs a path");
      break;
    default:
      break;
  }
}

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)},
                      {"count", count},
                      {"height", height},
                      {"width", width},
                      {"seed", seed}};
  if (kind == DatasetKind::calpha) {
    j["alpha1"] = alpha1;
    j["alpha2"] = alpha2;
  }
  if (kind == DatasetKind::single_image_ray) {
    j["scale_min"] = scale_min;
    j["scale_max"] = scale_max;
  }
  if (kind == DatasetKind::shuffled) j["perm_seed"] = perm_seed;
  if (!path.empty()) j["path"] = path;
  if (inner) j["inner"] = inner->to_json();
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  s.count = j.value("count", s.count);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.seed = j.value("seed", s.seed);
  s.alpha1 = j.value("alpha1", s.alpha1);
  s.alpha2 = j.value("alpha2", s.alpha2);
  s.scale_min = j.value("scale_min", s.scale_min);
  s.scale_max = j.value("scale_max", s.scale_max);
  s.perm_seed = j.value("perm_seed", s.perm_seed);
  s.path = j.value("path", std::string());
  if (j.contains("inner")) s.inner = std::make_shared<DatasetSpec>(from_json(j.at("inner")));
  return s;
}

// ---------------------------------------------------------------------------
// C^alpha

Tensor4d power_law_field(std::size_t height, std::size_t width, double alpha,
                         std::span<const double> white) {
  if (white.size() != height * width) throw DatasetError("power_law_field: size mismatch");
  std::vector<cplx> spec(white.begin(), white.end());
  fft_inplace(spec, height, width, FFTW_FORWARD);
  for (std::size_t i = 0; i < height; ++i) {
    const double f1 = height == 1 ? 0.0 : signed_freq(i, height);
    for (std::size_t j = 0; j < width; ++j) {
      const double f2 = signed_freq(j, width);
      const double r2 = f1 * f1 + f2 * f2;
      spec[i * width + j] *= r2 == 0.0 ? 0.0 : std::pow(r2, -alpha / 2.0);
    }
  }
  fft_inplace(spec, height, width, FFTW_BACKWARD);
  Tensor4d out(image_dims(height, width));
  const double n = double(height * width);
  for (std::size_t i = 0; i < spec.size(); ++i) out[i] = spec[i].real() / n;
  return out;
}

CalphaLayers synth_calpha_layers(std::size_t height, std::size_t width, double alpha1,
                                 double alpha2, std::uint64_t seed) {
  require_size(height, width);
  if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw DatasetError("synth_calpha: alpha must be > 0");
  const CounterRng rng(seed);
  CalphaLayers out;

  // Contour: 1-D uniform noise integrated with |omega|^-alpha1.
  std::vector<double> c(width);
  const CounterRng crng = rng.substream(1);
  for (std::size_t t = 0; t < width; ++t) c[t] = crng.uniform(t) - 0.5;
  const Tensor4d contour = power_law_field(1, width, alpha1, c);
  out.contour.assign(contour.data().begin(), contour.data().end());
  // Keep the boundary inside the central half of the frame.
  {
    const auto [mn, mx] = std::minmax_element(out.contour.begin(), out.contour.end());
    const double lo = *mn, span = *mx - *mn;
    for (double& v : out.contour) {
      const double u = span > 0.0 ? (v - lo) / span : 0.5;
      v = double(height) / 4.0 + u * double(height) / 2.0;
    }
  }

  // Backgrounds: two 2-D uniform fields integrated with (w1^2 + w2^2)^(-alpha2/2).
  const std::size_t n = height * width;
  std::vector<double> b1(n), b2(n);
  const CounterRng r1 = rng.substream(2), r2 = rng.substream(3);
  for (std::size_t i = 0; i < n; ++i) {
    b1[i] = r1.uniform(i) - 0.5;
    b2[i] = r2.uniform(i) - 0.5;
  }
  out.background1 = power_law_field(height, width, alpha2, b1);
  out.background2 = power_law_field(height, width, alpha2, b2);

  // Mask and combine.
  out.mask = Tensor4d(image_dims(height, width));
  out.image = Tensor4d(image_dims(height, width));
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const double m = double(i) > out.contour[j] ? 1.0 : 0.0;
      const std::size_t k = i * width + j;
      out.mask[k] = m;
      out.image[k] = m * out.background1[k] + (1.0 - m) * out.background2[k];
    }
  }
  rescale_unit(out.image.data());
  return out;
}

ImageSample synth_calpha(std::size_t height, std::size_t width, double alpha1, double alpha2,
                         std::uint64_t seed) {
  auto layers = synth_calpha_layers(height, width, alpha1, alpha2, seed);
  return {std::move(layers.image),
          {{"kind", "calpha"}, {"alpha1", alpha1}, {"alpha2", alpha2}, {"seed", seed}}};
}

// ---------------------------------------------------------------------------
// Disks

nlohmann::json DiskParams::to_json() const {
  return {{"kind", "disk"}, {"cx", cx}, {"cy", cy}, {"radius", radius}, {"fg", fg}, {"bg", bg}};
}

DiskParams DiskParams::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("radius")) throw DatasetError("sample carries no disk metadata");
  return {j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("radius").get<double>(),
          j.at("fg").get<double>(), j.at("bg").get<double>()};
}

ImageSample synth_disk(std::size_t height, std::size_t width, const DiskParams& p) {
  require_size(height, width);
  if (!(p.radius >= 0.0)) throw DatasetError("synth_disk: radius must be >= 0");
  if (p.fg < 0.0 || p.fg > 1.0 || p.bg < 0.0 || p.bg > 1.0) {
    throw DatasetError("synth_disk: intensities must lie in [0, 1]");
  }
  const double reach = p.radius + 0.5;
  if (p.cx - reach < 0.0 || p.cx + reach > double(width) - 1.0 || p.cy - reach < 0.0 ||
      p.cy + reach > double(height) - 1.0) {
    throw DatasetError("synth_disk: disk out of frame");
  }
  ImageSample s{Tensor4d(image_dims(height, width)), p.to_json()};
  render_disk(height, width, p, s.pixels.data());
  return s;
}

DiskParams draw_disk_params(std::size_t height, std::size_t width, std::uint64_t seed,
                            std::uint64_t index) {
  RngStream rng(seed, index);
  const double m = double(std::min(height, width));
  DiskParams p;
  p.radius = rng.uniform(0.1 * m, 0.35 * m);
  const double reach = p.radius + 0.5;
  p.cx = rng.uniform(reach, double(width) - 1.0 - reach);
  p.cy = rng.uniform(reach, double(height) - 1.0 - reach);
  do {
    p.fg = rng.uniform();
    p.bg = rng.uniform();
  } while (std::abs(p.fg - p.bg) < 0.2);
  return p;
}

std::vector<ImageSample> synth_disk_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<ImageSample> out(spec.count);
  parallel_for(spec.count, [&](std::size_t i) {
    out[i] = synth_disk(spec.height, spec.width,
                        draw_disk_params(spec.height, spec.width, spec.seed, i));
  });
  return out;
}

std::vector<Tensor4d> disk_tangent_basis(const ImageSample& sample, double step) {
  const DiskParams p = DiskParams::from_json(sample.metadata);
  const std::size_t h = sample.pixels.dims().height, w = sample.pixels.dims().width;
  const std::size_t d = h * w;
  Eigen::MatrixXd D(Eigen::Index(d), 5);
  std::vector<double> plus(d), minus(d);
  for (int k = 0; k < 5; ++k) {
    auto a = p.as_array(), b = p.as_array();
    a[std::size_t(k)] += step;
    b[std::size_t(k)] -= step;
    render_disk(h, w, DiskParams::from_array(a), plus);
    render_disk(h, w, DiskParams::from_array(b), minus);
    for (std::size_t i = 0; i < d; ++i) D(Eigen::Index(i), k) = (plus[i] - minus[i]) / (2.0 * step);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(D);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(5).triangularView<Eigen::Upper>();
  const double scale = R.diagonal().cwiseAbs().maxCoeff();
  for (int k = 0; k < 5; ++k) {
    if (!(std::abs(R(k, k)) > 1e-8 * scale)) {
      throw DatasetError("disk_tangent_basis: degenerate difference set (rank < 5)");
    }
  }
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(Eigen::Index(d), 5);
  std::vector<Tensor4d> basis;
  for (int k = 0; k < 5; ++k) {
    Tensor4d v(image_dims(h, w));
    for (std::size_t i = 0; i < d; ++i) v[i] = Q(Eigen::Index(i), k);
    basis.push_back(std::move(v));
  }
  return basis;
}

// ---------------------------------------------------------------------------
// Sine cone, ray

ImageSample synth_sine_cone(std::size_t height, std::size_t width, double phase, double amplitude) {
  require_size(height, width);
  if (!(amplitude > 0.0 && amplitude <= 0.5)) throw DatasetError("sine amplitude must be in (0, 0.5]");
  ImageSample s{Tensor4d(image_dims(height, width)),
                {{"kind", "sine_cone"}, {"phase", phase}, {"amplitude", amplitude}}};
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t u = 0; u < width; ++u) {
      const double v =
          0.5 + amplitude * std::sin(2.0 * std::numbers::pi * double(u) / double(width) + phase);
      s.pixels[i * width + u] = std::clamp(v, 0.0, 1.0);
    }
  }
  return s;
}

std::vector<ImageSample> synth_sine_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<ImageSample> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    RngStream rng(spec.seed, i);
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    const double amplitude = 0.5 * (1.0 - rng.uniform());
    out.push_back(synth_sine_cone(spec.height, spec.width, phase, amplitude));
  }
  return out;
}

ImageSample scale_sample(const ImageSample& base, double s) {
  ImageSample out{base.pixels * s, {{"kind", "ray"}, {"scale", s}, {"base", base.metadata}}};
  return out;
}

std::vector<ImageSample> single_image_ray(const ImageSample& base, double scale_min,
                                          double scale_max, std::size_t count, std::uint64_t seed) {
  if (!(scale_min >= 0.2) || !(scale_max <= 1.0) || scale_min > scale_max) {
    throw DatasetError("single_image_ray: scales must satisfy 0.2 <= min <= max <= 1");
  }
  std::vector<ImageSample> out;
  out.reserve(count);
  const CounterRng rng(seed, 0x7a7);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(scale_sample(base, scale_min + (scale_max - scale_min) * rng.uniform(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Permutations, noise

std::vector<std::size_t> make_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  RngStream rng(seed, 0xf15);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::size_t(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

Tensor4d permute_pixels(const Tensor4d& x, std::span<const std::size_t> perm) {
  const Dims& d = x.dims();
  if (perm.size() != d.plane()) throw DimensionError("plane", "permute_pixels: permutation size");
  Tensor4d out(d);
  for (std::size_t p = 0; p < d.batch * d.channels; ++p) {
    const std::size_t off = p * d.plane();
    for (std::size_t i = 0; i < perm.size(); ++i) out[off + perm[i]] = x[off + i];
  }
  return out;
}

Tensor4d unpermute_pixels(const Tensor4d& x, std::span<const std::size_t> perm) {
  return permute_pixels(x, invert_permutation(perm));
}

std::vector<ImageSample> apply_permutation(std::span<const ImageSample> samples,
                                           std::uint64_t perm_seed) {
  std::vector<ImageSample> out;
  if (samples.empty()) return out;
  const auto perm = make_permutation(samples.front().pixels.dims().plane(), perm_seed);
  for (const auto& s : samples) {
    out.push_back({permute_pixels(s.pixels, perm),
                   {{"kind", "shuffled"}, {"perm_seed", perm_seed}, {"inner", s.metadata}}});
  }
  return out;
}

std::vector<ImageSample> invert_applied_permutation(std::span<const ImageSample> samples,
                                                    std::uint64_t perm_seed) {
  std::vector<ImageSample> out;
  if (samples.empty()) return out;
  const auto perm = make_permutation(samples.front().pixels.dims().plane(), perm_seed);
  for (const auto& s : samples) {
    nlohmann::json meta = s.metadata.is_object() && s.metadata.contains("inner")
                              ? s.metadata.at("inner")
                              : s.metadata;
    out.push_back({unpermute_pixels(s.pixels, perm), std::move(meta)});
  }
  return out;
}

template <class T>
Tensor4<T> add_noise(const Tensor4<T>& x, double sigma, std::uint64_t seed, std::uint64_t stream) {
  Tensor4<T> y = x;
  if (sigma == 0.0) return y;
  const CounterRng rng(seed, stream);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(double(y[i]) + sigma * rng.normal(i));
  return y;
}

template Tensor4<float> add_noise(const Tensor4<float>&, double, std::uint64_t, std::uint64_t);
template Tensor4<double> add_noise(const Tensor4<double>&, double, std::uint64_t, std::uint64_t);

// ---------------------------------------------------------------------------
// Files, splits

Tensor4d resize_bilinear(const Tensor4d& img, std::size_t height, std::size_t width) {
  const std::size_t sh = img.dims().height, sw = img.dims().width;
  Tensor4d out(image_dims(height, width));
  const double fy = double(sh) / double(height), fx = double(sw) / double(width);
  for (std::size_t i = 0; i < height; ++i) {
    const double y = std::clamp((double(i) + 0.5) * fy - 0.5, 0.0, double(sh - 1));
    const std::size_t y0 = std::size_t(y), y1 = std::min(y0 + 1, sh - 1);
    const double ty = y - double(y0);
    for (std::size_t j = 0; j < width; ++j) {
      const double x = std::clamp((double(j) + 0.5) * fx - 0.5, 0.0, double(sw - 1));
      const std::size_t x0 = std::size_t(x), x1 = std::min(x0 + 1, sw - 1);
      const double tx = x - double(x0);
      const double top = img[y0 * sw + x0] * (1 - tx) + img[y0 * sw + x1] * tx;
      const double bot = img[y1 * sw + x0] * (1 - tx) + img[y1 * sw + x1] * tx;
      out[i * width + j] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

std::vector<ImageSample> load_image_dir(const std::filesystem::path& dir, std::size_t height,
                                        std::size_t width) {
  require_size(height, width);
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw DatasetError("image directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ImageSample> out;
  for (const auto& f : files) {
    Tensor4d img;
    try {
      img = read_netpbm(f);
    } catch (const ImageIoError& e) {
      throw DatasetError(std::string("unreadable image: ") + e.what());
    }
    if (img.dims().height != height || img.dims().width != width) {
      img = resize_bilinear(img, height, width);
    }
    out.push_back({std::move(img), {{"kind", "image_dir"}, {"file", f.filename().string()}}});
  }
  return out;
}

std::vector<std::vector<std::size_t>> split_disjoint(std::size_t n,
                                                     std::span<const std::size_t> sizes,
                                                     std::uint64_t seed) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total > n) {
    throw DatasetError("split_disjoint: requested " + std::to_string(total) +
                       " samples but only " + std::to_string(n) + " available");
  }
  const auto order = make_permutation(n, seed);
  std::vector<std::vector<std::size_t>> out;
  std::size_t pos = 0;
  for (std::size_t s : sizes) {
    out.emplace_back(order.begin() + long(pos), order.begin() + long(pos + s));
    pos += s;
  }
  return out;
}

std::vector<ImageSample> generate(const DatasetSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DatasetKind::calpha: {
      std::vector<ImageSample> out(spec.count);
      parallel_for(spec.count, [&](std::size_t i) {
        out[i] = synth_calpha(spec.height, spec.width, spec.alpha1, spec.alpha2,
                              sample_seed(spec.seed, i));
      });
      return out;
    }
    case DatasetKind::disks:
      return synth_disk_dataset(spec);
    case DatasetKind::sine_cone:
      return synth_sine_dataset(spec);
    case DatasetKind::single_image_ray: {
      DatasetSpec base = *spec.inner;
      base.count = 1;
      const auto b = generate(base);
      return single_image_ray(b.front(), spec.scale_min, spec.scale_max, spec.count, spec.seed);
    }
    case DatasetKind::shuffled: {
      DatasetSpec inner = *spec.inner;
      inner.count = spec.count;
      const auto base = generate(inner);
      return apply_permutation(base, spec.perm_seed);
    }
    case DatasetKind::image_dir: {
      auto all = load_image_dir(spec.path, spec.height, spec.width);
      if (all.size() < spec.count) {
        throw DatasetError("image_dir: requested " + std::to_string(spec.count) +
                           " images but found " + std::to_string(all.size()));
      }
      all.resize(spec.count);
      return all;
    }
  }
  throw DatasetError("unhandled dataset kind");
}

Tensor4d to_batch(std::span<const ImageSample> samples) {
  std::vector<Tensor4d> items;
  items.reserve(samples.size());
  for (const auto& s : samples) items.push_back(s.pixels);
  return stack<double>(items);
}

std::vector<Tensor4d> to_images(const Tensor4d& batch) {
  std::vector<Tensor4d> out;
  for (std::size_t b = 0; b < batch.dims().batch; ++b) out.push_back(batch.slice(b));
  return out;
}

// ---------------------------------------------------------------------------
// Packed file

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DatasetError("dataset file: truncated header");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const PackedDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out.write("GAHB", 4);
  put_u32(out, kDatasetFileVersion);
  put_u32(out, std::uint32_t(ds.samples.size()));
  put_u32(out, std::uint32_t(ds.height));
  put_u32(out, std::uint32_t(ds.width));
  nlohmann::json meta = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    if (s.pixels.dims().height != ds.height || s.pixels.dims().width != ds.width) {
      throw DatasetError("save_dataset: sample size differs from header");
    }
    for (double v : s.pixels.data()) {
      const float f = float(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put_u32(out, u);
    }
    meta.push_back(s.metadata);
  }
  const nlohmann::json trailer = {{"spec", ds.spec}, {"samples", meta}};
  out << trailer.dump();
  if (!out) throw DatasetError("short write to " + path.string());
}

PackedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GAHB", 4) != 0) {
    throw DatasetError("not a packed dataset file: " + path.string());
  }
  const std::uint32_t version = get_u32(in);
  if (version != kDatasetFileVersion) {
    throw DatasetError("dataset file version " + std::to_string(version) + " unsupported");
  }
  PackedDataset ds;
  const std::uint32_t count = get_u32(in);
  ds.height = get_u32(in);
  ds.width = get_u32(in);
  const std::size_t plane = ds.height * ds.width;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor4d img(image_dims(ds.height, ds.width));
    for (std::size_t k = 0; k < plane; ++k) {
      const std::uint32_t u = get_u32(in);
      float f;
      std::memcpy(&f, &u, 4);
      img[k] = double(f);
    }
    ds.samples.push_back({std::move(img), nlohmann::json::object()});
  }
  const std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!rest.empty()) {
    nlohmann::json trailer;
    try {
      trailer = nlohmann::json::parse(rest);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(std::string("dataset file: bad metadata trailer: ") + e.what());
    }
    ds.spec = trailer.value("spec", nlohmann::json());
    const auto& meta = trailer.at("samples");
    for (std::size_t i = 0; i < ds.samples.size() && i < meta.size(); ++i) {
      ds.samples[i].metadata = meta[i];
    }
  }
  return ds;
}

}  // namespace gahb
