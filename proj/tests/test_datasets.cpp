#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <set>

#include "gahb/datasets.hpp"
#include "gahb/image_io.hpp"
#include "test_util.hpp"

using namespace gahb;

namespace {

// Radially averaged periodogram by a direct separable DFT, then the OLS slope
// of log power against log |omega| over integer radii in [lo, hi].
double periodogram_slope(const Tensor4d& f, double lo, double hi) {
  const std::size_t h = f.dims().height, w = f.dims().width;
  using C = std::complex<double>;
  std::vector<C> rows(h * w), full(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t k = 0; k < w; ++k) {
      C s = 0.0;
      for (std::size_t j = 0; j < w; ++j)
        s += f[i * w + j] * std::polar(1.0, -2.0 * std::numbers::pi * double(j * k) / double(w));
      rows[i * w + k] = s;
    }
  for (std::size_t k = 0; k < w; ++k)
    for (std::size_t m = 0; m < h; ++m) {
      C s = 0.0;
      for (std::size_t i = 0; i < h; ++i)
        s += rows[i * w + k] * std::polar(1.0, -2.0 * std::numbers::pi * double(i * m) / double(h));
      full[m * w + k] = s;
    }
  const std::size_t nbins = std::size_t(hi) + 2;
  std::vector<double> sum(nbins, 0.0), cnt(nbins, 0.0);
  for (std::size_t m = 0; m < h; ++m)
    for (std::size_t k = 0; k < w; ++k) {
      const double a = m <= h / 2 ? double(m) : double(m) - double(h);
      const double b = k <= w / 2 ? double(k) : double(k) - double(w);
      const std::size_t r = std::size_t(std::lround(std::hypot(a, b)));
      if (r < nbins) {
        sum[r] += std::norm(full[m * w + k]);
        cnt[r] += 1.0;
      }
    }
  std::vector<double> xs, ys;
  for (std::size_t r = std::size_t(lo); r <= std::size_t(hi); ++r) {
    xs.push_back(std::log(double(r)));
    ys.push_back(std::log(sum[r] / cnt[r]));
  }
  const double n = double(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxy / sxx;
}

double disk_distance(std::size_t i, std::size_t j, const DiskParams& p) {
  return std::hypot(double(j) - p.cx, double(i) - p.cy);
}

}  // namespace

TEST(Calpha, SameSeedIsBitIdentical) {
  const auto a = synth_calpha(32, 32, 2.0, 2.0, 11);
  const auto b = synth_calpha(32, 32, 2.0, 2.0, 11);
  EXPECT_EQ(a.pixels.vector(), b.pixels.vector());
  EXPECT_NE(a.pixels.vector(), synth_calpha(32, 32, 2.0, 2.0, 12).pixels.vector());
}

TEST(Calpha, RangeAndStructure) {
  const auto L = synth_calpha_layers(48, 40, 1.5, 2.5, 3);
  const auto [mn, mx] = std::minmax_element(L.image.data().begin(), L.image.data().end());
  EXPECT_DOUBLE_EQ(*mn, 0.0);
  EXPECT_DOUBLE_EQ(*mx, 1.0);
  ASSERT_EQ(L.contour.size(), 40u);
  for (double c : L.contour) {
    EXPECT_GE(c, 12.0 - 1e-12);
    EXPECT_LE(c, 36.0 + 1e-12);
  }
  for (std::size_t i = 0; i < 48; ++i)
    for (std::size_t j = 0; j < 40; ++j)
      EXPECT_EQ(L.mask[i * 40 + j], double(i) > L.contour[j] ? 1.0 : 0.0);
  // Zero DC gain: filtered fields have zero mean.
  double s = 0.0;
  for (double v : L.background1.data()) s += v;
  EXPECT_NEAR(s, 0.0, 1e-12);
}

TEST(Calpha, RejectsNonPositiveAlpha) {
  EXPECT_THROW(synth_calpha(32, 32, -1.0, 2.0, 0), DatasetError);
  EXPECT_THROW(synth_calpha(32, 32, 2.0, 0.0, 0), DatasetError);
}

TEST(Calpha, BackgroundSpectralSlope) {
  for (double alpha : {1.0, 2.0, 4.0}) {
    const auto L = synth_calpha_layers(96, 96, alpha, alpha, 7);
    const double slope = periodogram_slope(L.background1, 4.0, 40.0);
    EXPECT_NEAR(slope, -2.0 * alpha, 0.4) << "alpha " << alpha;
  }
}

TEST(Calpha, SlopeDecreasesWithAlpha) {
  double prev = 0.0;
  for (double alpha : {1.0, 2.0, 4.0}) {
    const double s = periodogram_slope(synth_calpha_layers(64, 64, 2.0, alpha, 8).background2, 3.0, 25.0);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(Calpha, LargeAlphaBackgroundIsLowestHarmonic) {
  // Zero DC gain leaves the |omega| = 1 harmonics; everything else is negligible.
  const auto L = synth_calpha_layers(32, 32, 2.0, 16.0, 9);
  const double slope = periodogram_slope(L.background1, 1.0, 4.0);
  EXPECT_LT(slope, -30.0);
}

TEST(Disk, ConstantCases) {
  const auto s = synth_disk(16, 16, {7.5, 7.5, 4.0, 0.6, 0.6});
  for (double v : s.pixels.data()) EXPECT_EQ(v, 0.6);
  const DiskParams p{8.0, 7.0, 0.0, 0.9, 0.2};
  const auto z = synth_disk(16, 16, p);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      const double cov = std::clamp(0.5 - disk_distance(i, j, p), 0.0, 1.0);
      EXPECT_DOUBLE_EQ(z.pixels[i * 16 + j], 0.2 + 0.7 * cov);
      if (i != 7 || j != 8) EXPECT_EQ(z.pixels[i * 16 + j], 0.2);
    }
}

TEST(Disk, InteriorAndExterior) {
  const DiskParams p{10.3, 9.6, 5.2, 0.8, 0.1};
  const auto s = synth_disk(24, 24, p);
  std::size_t in = 0, out = 0;
  for (std::size_t i = 0; i < 24; ++i)
    for (std::size_t j = 0; j < 24; ++j) {
      const double d = disk_distance(i, j, p);
      if (d <= p.radius - 0.5) {
        EXPECT_EQ(s.pixels[i * 24 + j], 0.8);
        ++in;
      }
      if (d >= p.radius + 0.5) {
        EXPECT_EQ(s.pixels[i * 24 + j], 0.1);
        ++out;
      }
    }
  EXPECT_GT(in, 50u);
  EXPECT_GT(out, 300u);
}

TEST(Disk, ErrorsAndMetadata) {
  EXPECT_THROW(synth_disk(16, 16, {2.0, 8.0, 4.0, 1.0, 0.0}), DatasetError);
  EXPECT_THROW(synth_disk(16, 16, {8.0, 8.0, 3.0, 1.5, 0.0}), DatasetError);
  DatasetSpec spec;
  spec.kind = DatasetKind::disks;
  spec.count = 20;
  spec.height = spec.width = 20;
  spec.seed = 4;
  const auto ds = synth_disk_dataset(spec);
  for (const auto& s : ds) {
    const auto p = DiskParams::from_json(s.metadata);
    EXPECT_GE(p.radius, 2.0);
    EXPECT_LE(p.radius, 7.0);
    EXPECT_GE(std::abs(p.fg - p.bg), 0.2);
    EXPECT_EQ(synth_disk(20, 20, p).pixels.vector(), s.pixels.vector());
  }
}

TEST(DiskTangent, IntensityDirectionsAreCoverageMaps) {
  const DiskParams p{9.2, 10.7, 4.4, 0.7, 0.2};
  const auto s = synth_disk(20, 20, p);
  const auto B = disk_tangent_basis(s);
  ASSERT_EQ(B.size(), 5u);
  Eigen::MatrixXd Q(400, 5);
  for (int k = 0; k < 5; ++k)
    for (int i = 0; i < 400; ++i) Q(i, k) = B[std::size_t(k)][std::size_t(i)];
  EXPECT_LT((Q.transpose() * Q - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
  // The coverage map and its complement lie in the span.
  Eigen::VectorXd cov(400), comp(400);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 20; ++j) {
      cov(Eigen::Index(i * 20 + j)) = std::clamp(0.5 + p.radius - disk_distance(i, j, p), 0.0, 1.0);
      comp(Eigen::Index(i * 20 + j)) = 1.0 - cov(Eigen::Index(i * 20 + j));
    }
  EXPECT_LT((cov - Q * (Q.transpose() * cov)).norm() / cov.norm(), 1e-8);
  EXPECT_LT((comp - Q * (Q.transpose() * comp)).norm() / comp.norm(), 1e-8);
}

TEST(DiskTangent, PerturbedDiskProjects) {
  const DiskParams p{11.3, 12.1, 5.3, 0.75, 0.15};
  const auto s = synth_disk(24, 24, p);
  const auto B = disk_tangent_basis(s);
  const DiskParams q{p.cx + 1e-2, p.cy - 1e-2, p.radius + 1e-2, p.fg - 1e-2, p.bg + 1e-2};
  const auto t = synth_disk(24, 24, q);
  const auto diff = t.pixels - s.pixels;
  double proj = 0.0;
  for (const auto& b : B) {
    const double c = dot<double>(diff.data(), b.data());
    proj += c * c;
  }
  EXPECT_GE(proj / squared_norm<double>(diff.data()), 0.99);
}

TEST(DiskTangent, MissingMetadata) {
  EXPECT_THROW(disk_tangent_basis(synth_sine_cone(16, 16, 0.0, 0.3)), DatasetError);
}

TEST(Disk, LocalPatchHasRankFive) {
  const DiskParams p{11.0, 12.0, 5.0, 0.7, 0.2};
  const auto base = synth_disk(24, 24, p);
  Eigen::MatrixXd X(576, 64);
  RngStream r(5, 0);
  for (int n = 0; n < 64; ++n) {
    auto a = p.as_array();
    for (double& v : a) v += 1e-4 * r.uniform(-1.0, 1.0);
    const auto s = synth_disk(24, 24, DiskParams::from_array(a));
    for (int i = 0; i < 576; ++i) X(i, n) = s.pixels[std::size_t(i)] - base.pixels[std::size_t(i)];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
  const auto sv = svd.singularValues();
  EXPECT_LT(sv(5) / sv(0), 1e-6);
  EXPECT_GT(sv(4) / sv(0), 1e-3);
}

TEST(Sine, OppositePhasesSumToOne) {
  const auto a = synth_sine_cone(16, 16, 0.0, 0.4);
  const auto b = synth_sine_cone(16, 16, std::numbers::pi, 0.4);
  for (std::size_t i = 0; i < a.pixels.size(); ++i) EXPECT_NEAR(a.pixels[i] + b.pixels[i], 1.0, 1e-15);
  EXPECT_THROW(synth_sine_cone(16, 16, 0.0, 0.6), DatasetError);
  EXPECT_THROW(synth_sine_cone(16, 16, 0.0, 0.0), DatasetError);
}

TEST(Sine, TangentIsQuadraturePair) {
  const double ph = 0.7, a = 0.3, h = 1e-6;
  const auto dp = (synth_sine_cone(16, 16, ph + h, a).pixels - synth_sine_cone(16, 16, ph - h, a).pixels) * (0.5 / h);
  const auto da = (synth_sine_cone(16, 16, ph, a + h).pixels - synth_sine_cone(16, 16, ph, a - h).pixels) * (0.5 / h);
  for (std::size_t u = 0; u < 16; ++u) {
    const double t = 2.0 * std::numbers::pi * double(u) / 16.0 + ph;
    EXPECT_NEAR(dp[u], a * std::cos(t), 1e-8);
    EXPECT_NEAR(da[u], std::sin(t), 1e-8);
  }
}

TEST(Sine, DatasetSpansThreeDimensions) {
  DatasetSpec spec;
  spec.kind = DatasetKind::sine_cone;
  spec.count = 512;
  spec.height = spec.width = 16;
  spec.seed = 1;
  const auto ds = synth_sine_dataset(spec);
  Eigen::MatrixXd X(512, 256);
  for (int n = 0; n < 512; ++n)
    for (int i = 0; i < 256; ++i) X(n, i) = ds[std::size_t(n)].pixels[std::size_t(i)];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
  const auto sv = svd.singularValues();
  double tail = 0.0, total = 0.0;
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    total += sv(k) * sv(k);
    if (k >= 3) tail += sv(k) * sv(k);
  }
  EXPECT_LT(tail / total, 1e-10);
}

TEST(Ray, ScalesAndCollinearity) {
  const auto base = synth_calpha(16, 16, 2.0, 2.0, 3);
  EXPECT_EQ(scale_sample(base, 1.0).pixels.vector(), base.pixels.vector());
  const auto half = scale_sample(base, 0.5);
  for (std::size_t i = 0; i < base.pixels.size(); ++i) EXPECT_EQ(half.pixels[i], base.pixels[i] * 0.5);
  const auto ray = single_image_ray(base, 0.2, 1.0, 10, 4);
  ASSERT_EQ(ray.size(), 10u);
  for (const auto& a : ray) {
    const double s = a.metadata.at("scale").get<double>();
    EXPECT_GE(s, 0.2);
    EXPECT_LE(s, 1.0);
    for (const auto& b : ray) EXPECT_NEAR(cosine_similarity<double>(a.pixels.data(), b.pixels.data()), 1.0, 1e-12);
  }
  EXPECT_THROW(single_image_ray(base, 0.1, 1.0, 3, 0), DatasetError);
}

TEST(Permutation, RoundTripAndHistogram) {
  const auto ds = synth_disk_dataset([] {
    DatasetSpec s;
    s.kind = DatasetKind::disks;
    s.count = 3;
    s.height = s.width = 16;
    return s;
  }());
  const auto fw = apply_permutation(ds, 42);
  const auto back = invert_applied_permutation(fw, 42);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    EXPECT_EQ(back[n].pixels.vector(), ds[n].pixels.vector());
    auto a = ds[n].pixels.vector(), b = fw[n].pixels.vector();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
  const auto p1 = make_permutation(256, 9), p2 = make_permutation(256, 9);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(std::set<std::size_t>(p1.begin(), p1.end()).size(), 256u);
  const auto inv = invert_permutation(p1);
  for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(inv[p1[i]], i);
}

TEST(Noise, ZeroSigmaAndDeterminism) {
  const auto x = gahb::testing::random_tensor(Dims{1, 1, 8, 8}, 1);
  EXPECT_EQ(add_noise(x, 0.0, 5).vector(), x.vector());
  EXPECT_EQ(add_noise(x, 0.3, 5).vector(), add_noise(x, 0.3, 5).vector());
  EXPECT_NE(add_noise(x, 0.3, 5).vector(), add_noise(x, 0.3, 6).vector());
}

TEST(Noise, EmpiricalStd) {
  const Tensor4d x(Dims{1, 1, 1000, 1000}, 0.5);
  const double sigma = 0.3;
  const auto y = add_noise(x, sigma, 17);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - x[i];
    s += e;
    s2 += e * e;
  }
  const double n = double(y.size());
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  EXPECT_NEAR(sd / sigma, 1.0, 0.01);
  // Unclipped: values leave [0, 1].
  const auto [mn, mx] = std::minmax_element(y.data().begin(), y.data().end());
  EXPECT_LT(*mn, 0.0);
  EXPECT_GT(*mx, 1.0);
}

TEST(Split, DisjointAndDeterministic) {
  const std::vector<std::size_t> sizes{4, 4};
  const auto a = split_disjoint(10, sizes, 3);
  ASSERT_EQ(a.size(), 2u);
  std::set<std::size_t> all(a[0].begin(), a[0].end());
  all.insert(a[1].begin(), a[1].end());
  EXPECT_EQ(all.size(), 8u);
  EXPECT_EQ(a, split_disjoint(10, sizes, 3));
  const std::vector<std::size_t> big{6, 6};
  EXPECT_THROW(split_disjoint(10, big, 3), DatasetError);
}

TEST(ImageDir, PgmRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gahb_test_imgdir";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto a = synth_calpha(16, 16, 2.0, 2.0, 1), b = synth_disk(16, 16, {7.5, 7.5, 4.0, 0.9, 0.1});
  write_pgm(dir / "a.pgm", a.pixels);
  write_pgm(dir / "b.pgm", b.pixels);
  const auto loaded = load_image_dir(dir, 16, 16);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_LE(gahb::testing::max_abs_diff(loaded[0].pixels, a.pixels), 1.0 / 255.0);
  EXPECT_LE(gahb::testing::max_abs_diff(loaded[1].pixels, b.pixels), 1.0 / 255.0);
  const auto small = load_image_dir(dir, 8, 8);
  EXPECT_EQ(small[0].pixels.dims(), image_dims(8, 8));
  EXPECT_THROW(load_image_dir(dir / "missing", 8, 8), DatasetError);
  std::filesystem::remove_all(dir);
}

TEST(Resize, ConstantAndIdentity) {
  const Tensor4d c(image_dims(10, 12), 0.4);
  const auto r = resize_bilinear(c, 5, 7);
  for (double v : r.data()) EXPECT_NEAR(v, 0.4, 1e-15);
  const auto x = gahb::testing::random_tensor(image_dims(9, 9), 2);
  EXPECT_LT(gahb::testing::max_abs_diff(resize_bilinear(x, 9, 9), x), 1e-15);
}

TEST(PackedFile, RoundTrip) {
  DatasetSpec spec;
  spec.kind = DatasetKind::calpha;
  spec.count = 5;
  spec.height = spec.width = 16;
  spec.seed = 7;
  const auto samples = generate(spec);
  const auto path = std::filesystem::temp_directory_path() / "gahb_test.gahb";
  save_dataset(path, {16, 16, samples, spec.to_json()});
  const auto back = load_dataset(path);
  ASSERT_EQ(back.samples.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 256; ++k) EXPECT_EQ(back.samples[i].pixels[k], double(float(samples[i].pixels[k])));
    EXPECT_EQ(back.samples[i].metadata, samples[i].metadata);
  }
  EXPECT_EQ(DatasetSpec::from_json(back.spec).to_json(), spec.to_json());
  std::filesystem::remove(path);
}

TEST(Generate, EveryKindIsReproducible) {
  DatasetSpec inner;
  inner.kind = DatasetKind::disks;
  inner.count = 4;
  inner.height = inner.width = 16;
  for (DatasetKind k : {DatasetKind::calpha, DatasetKind::disks, DatasetKind::sine_cone,
                        DatasetKind::single_image_ray, DatasetKind::shuffled}) {
    DatasetSpec s;
    s.kind = k;
    s.count = 4;
    s.height = s.width = 16;
    s.seed = 3;
    s.inner = std::make_shared<DatasetSpec>(inner);
    const auto a = generate(s), b = generate(s);
    ASSERT_EQ(a.size(), 4u) << to_string(k);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(a[i].pixels.vector(), b[i].pixels.vector());
      for (double v : a[i].pixels.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
  DatasetSpec bad;
  bad.count = 0;
  EXPECT_THROW(generate(bad), DatasetError);
  bad.count = 1;
  bad.height = 4;
  EXPECT_THROW(generate(bad), DatasetError);
}
