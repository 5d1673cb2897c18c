#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gahb/analysis.hpp"
#include "gahb/analytic_oracle.hpp"
#include "gahb/datasets.hpp"
#include "gahb/denoiser.hpp"
#include "gahb/image_io.hpp"
#include "gahb/rng.hpp"
#include "test_util.hpp"

using namespace gahb;
using gahb::testing::random_tensor;

namespace {

DenoiserFn linear_map(const Eigen::MatrixXd& A, std::size_t h, std::size_t w) {
  return {[A, h, w](const Tensor4d& y) {
            Tensor4d out(y.dims());
            for (std::size_t b = 0; b < y.dims().batch; ++b) {
              const Eigen::Map<const Eigen::VectorXd> v(y.item(b).data(), Eigen::Index(h * w));
              Eigen::Map<Eigen::VectorXd>(out.item(b).data(), Eigen::Index(h * w)) = A * v;
            }
            return out;
          },
          [A, h, w](const Tensor4d&, const Tensor4d& c) {
            Tensor4d out(c.dims());
            for (std::size_t b = 0; b < c.dims().batch; ++b) {
              const Eigen::Map<const Eigen::VectorXd> v(c.item(b).data(), Eigen::Index(h * w));
              Eigen::Map<Eigen::VectorXd>(out.item(b).data(), Eigen::Index(h * w)) = A.transpose() * v;
            }
            return out;
          }};
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  const CounterRng rng(seed, 3);
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = rng.normal(std::uint64_t(i));
  return M;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Jacobian, LinearMapIsRecovered) {
  const auto A = random_matrix(36, 36, 1);
  const auto J = jacobian(linear_map(A, 6, 6), random_tensor(image_dims(6, 6), 2), 7);
  EXPECT_LT((J - A).cwiseAbs().maxCoeff(), 1e-10);
  const auto F = finite_difference_jacobian(linear_map(A, 6, 6), random_tensor(image_dims(6, 6), 2), 1e-3);
  EXPECT_LT((F - A).norm() / A.norm(), 1e-10);
}

TEST(Jacobian, NetworkMatchesDifferences) {
  const auto f = as_denoiser_fn(build_model(BFCNNConfig{5, 8, 8, 8, true}, 3).cast<double>());
  const auto y = random_tensor(image_dims(8, 8), 4);
  const auto J = jacobian(f, y);
  const double step = 1e-3 * std::sqrt(squared_norm<double>(y.data())) / 8.0;
  const auto F = finite_difference_jacobian(f, y, step);
  // A column whose one-sided differences disagree straddles a ReLU kink.
  const Eigen::VectorXd f0 = to_vector(f(y));
  std::vector<Eigen::Index> smooth;
  for (Eigen::Index j = 0; j < 64; ++j) {
    auto yp = y, ym = y;
    yp[std::size_t(j)] += step;
    ym[std::size_t(j)] -= step;
    const Eigen::VectorXd fwd = to_vector(f(yp)) - f0, bwd = f0 - to_vector(f(ym));
    if ((fwd - bwd).norm() <= 1e-8 * fwd.norm()) smooth.push_back(j);
  }
  EXPECT_GE(smooth.size(), 32u);
  double num = 0.0, den = 0.0;
  for (Eigen::Index j : smooth) {
    num += (J.col(j) - F.col(j)).squaredNorm();
    den += J.col(j).squaredNorm();
  }
  EXPECT_LT(std::sqrt(num / den), 1e-3);
}

TEST(Jacobian, GaussianOptimalDenoiser) {
  const auto prior = GaussianPrior::random(16, 5);
  const double sigma = 0.4;
  const auto J = jacobian(optimal_denoiser_fn(prior, sigma), random_tensor(image_dims(4, 4), 6));
  EXPECT_LT((J - prior.shrinkage(sigma)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Jacobian, Refusals) {
  const DenoiserFn big{[](const Tensor4d& y) { return y; }, [](const Tensor4d&, const Tensor4d& c) { return c; }};
  try {
    jacobian(big, Tensor4d(image_dims(65, 65)));
    FAIL();
  } catch (const AnalysisError& e) {
    EXPECT_NE(std::string(e.what()).find("top"), std::string::npos);
  }
  const DenoiserFn novjp{[](const Tensor4d& y) { return y; }, {}};
  EXPECT_THROW(jacobian(novjp, Tensor4d(image_dims(4, 4))), AnalysisError);
}

TEST(Spectrum, DiagonalExample) {
  Eigen::MatrixXd J = Eigen::Vector3d(3, 1, 2).asDiagonal();
  const Tensor4d x(Dims{1, 1, 1, 3}, {1.0, 2.0, 3.0});
  const auto s = spectrum(J, x, x);
  EXPECT_NEAR(s.eigenvalues(0), 3.0, 1e-14);
  EXPECT_NEAR(s.eigenvalues(1), 2.0, 1e-14);
  EXPECT_NEAR(s.eigenvalues(2), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(s.eigenvectors(0, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(s.eigenvectors(2, 1)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(s.eigenvectors(1, 2)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(s.coeff_x(1)), 3.0, 1e-14);
  EXPECT_EQ(s.asymmetry, 0.0);
  EXPECT_LT(s.reconstruction_error, 1e-14);
  EXPECT_THROW(spectrum(Eigen::MatrixXd(2, 3), x, x), DimensionError);
}

TEST(Spectrum, OrthonormalAndReconstructsSymmetricPart) {
  const auto A = random_matrix(25, 25, 7);
  const auto y = random_tensor(image_dims(5, 5), 8);
  const auto s = spectrum(A, y, y);
  const Eigen::MatrixXd& V = s.eigenvectors;
  EXPECT_LT((V.transpose() * V - Eigen::MatrixXd::Identity(25, 25)).norm(), 1e-8);
  const Eigen::MatrixXd Js = 0.5 * (A + A.transpose());
  EXPECT_LT((V * s.eigenvalues.asDiagonal() * V.transpose() - Js).norm(), 1e-8);
  for (Eigen::Index k = 1; k < 25; ++k) EXPECT_GE(s.eigenvalues(k - 1), s.eigenvalues(k));
  EXPECT_NEAR(s.asymmetry, (A - A.transpose()).norm() / A.norm(), 1e-12);
  EXPECT_EQ(s.eigenvector(3).dims(), image_dims(5, 5));
}

TEST(Spectrum, GaussianShrinkageFactors) {
  const std::size_t d = 16;
  const auto prior = GaussianPrior::random(d, 9);
  const double sigma = 0.6;
  const auto y = random_tensor(image_dims(4, 4), 10);
  const auto s = spectrum(jacobian(optimal_denoiser_fn(prior, sigma), y), y, y);
  std::vector<double> expect;
  for (Eigen::Index i = 0; i < Eigen::Index(d); ++i) {
    const double di = prior.eigenvalues()(i);
    expect.push_back(di / (di + sigma * sigma));
  }
  std::sort(expect.rbegin(), expect.rend());
  for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(s.eigenvalues(Eigen::Index(k)), expect[k], 1e-8);
  const double tr_cov = posterior_cov(prior, to_vector(y), sigma).trace();
  EXPECT_NEAR(sigma * sigma * trace(s), tr_cov, 1e-8);
}

TEST(Spectrum, EffectiveRank) {
  JacobianSpectrum s;
  s.eigenvalues = Eigen::VectorXd::Ones(16);
  EXPECT_EQ(effective_rank(s), 16u);
  EXPECT_DOUBLE_EQ(trace(s), 16.0);
  const Eigen::VectorXd u = Eigen::VectorXd::Ones(16) / 4.0;
  const auto t = spectrum(u * u.transpose(), Tensor4d(image_dims(4, 4)), Tensor4d(image_dims(4, 4)));
  EXPECT_EQ(effective_rank(t), 1u);
  EXPECT_EQ(effective_rank(t, 1.5), 0u);
}

TEST(Spectrum, TopKMatchesDense) {
  const auto A = random_matrix(64, 64, 11);
  // Symmetric with a clear gap at the top.
  Eigen::MatrixXd S = 0.05 * (A + A.transpose());
  for (int k = 0; k < 4; ++k) S(k, k) += 5.0 - k;
  const auto f = linear_map(S, 8, 8);
  const auto y = random_tensor(image_dims(8, 8), 12);
  const auto dense = spectrum(jacobian(f, y), y, y);
  const auto top = top_k_spectrum(f, y, y, 4, 500, 1);
  ASSERT_EQ(top.size(), 4u);
  for (Eigen::Index k = 0; k < 4; ++k) {
    EXPECT_NEAR(top.eigenvalues(k), dense.eigenvalues(k), 1e-6);
    EXPECT_NEAR(std::abs(top.eigenvectors.col(k).dot(dense.eigenvectors.col(k))), 1.0, 1e-6);
  }
}

TEST(Spectrum, PrincipalAngles) {
  const auto A = random_matrix(20, 3, 13);
  const auto a0 = principal_angles(A, A * random_matrix(3, 3, 14));
  for (double a : a0) EXPECT_NEAR(a, 0.0, 1e-5);
  Eigen::MatrixXd E = Eigen::MatrixXd::Identity(20, 4);
  const auto a1 = principal_angles(E.leftCols(2), E.rightCols(2));
  EXPECT_NEAR(a1.front(), 90.0, 1e-10);
  Eigen::MatrixXd B(20, 1);
  B.setZero();
  B(0, 0) = 1.0;
  B(1, 0) = 1.0;
  EXPECT_NEAR(principal_angles(E.leftCols(1), B).front(), 45.0, 1e-10);
}

TEST(Spectrum, CsvAndMosaic) {
  const auto A = random_matrix(16, 16, 15);
  const auto y = random_tensor(image_dims(4, 4), 16);
  const auto s = spectrum(A, y, y);
  const auto dir = std::filesystem::temp_directory_path();
  write_spectrum_csv(dir / "gahb_spec.csv", s);
  const auto csv = slurp(dir / "gahb_spec.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "k,lambda,abs_coeff_x,abs_coeff_y");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 17);
  write_eigenvector_mosaic(dir / "gahb_mosaic.pgm", s, 8, 4);
  const auto img = read_netpbm(dir / "gahb_mosaic.pgm");
  EXPECT_GE(img.dims().height, 8u);
  EXPECT_GE(img.dims().width, 16u);
}

TEST(Psnr, IdentityIsDiagonal) {
  std::vector<Tensor4d> set;
  for (std::uint64_t i = 0; i < 4; ++i) set.push_back(synth_calpha(16, 16, 2.0, 2.0, i).pixels);
  const std::vector<double> sigmas{0.3, 0.1, 0.05, 0.02, 0.01};
  const auto c = psnr_curve(identity_denoiser(), set, sigmas, 1);
  ASSERT_EQ(c.points.size(), 5u);
  for (std::size_t i = 1; i < c.points.size(); ++i) EXPECT_GT(c.points[i].input_psnr, c.points[i - 1].input_psnr);
  for (const auto& p : c.points) {
    EXPECT_NEAR(p.input_psnr, 10.0 * std::log10(1.0 / (p.sigma * p.sigma)), 1e-12);
  }
  EXPECT_NEAR(c.fit.slope, 1.0, 1e-12);
  const std::vector<double> none;
  EXPECT_THROW(psnr_curve(identity_denoiser(), set, none, 1), AnalysisError);
  EXPECT_THROW(psnr_curve(identity_denoiser(), std::span<const Tensor4d>(), sigmas, 1), AnalysisError);
}

TEST(Psnr, TangentProjectionOnDisks) {
  const auto disk = synth_disk(24, 24, {11.3, 12.1, 5.3, 0.75, 0.15});
  const auto basis = disk_tangent_basis(disk);
  const auto f = manifold_projection_denoiser(basis, disk.pixels);
  const std::vector<Tensor4d> set(600, disk.pixels);
  const std::vector<double> sigmas{0.05, 0.02, 0.01};
  const auto c = psnr_curve(f, set, sigmas, 3);
  const double d = 576.0;
  for (const auto& p : c.points) {
    EXPECT_NEAR(p.output_psnr - p.input_psnr, 10.0 * std::log10(d / 5.0), 0.15);
  }
}

TEST(Psnr, OracleShrinkageSlope) {
  for (double alpha : {1.0, 2.0}) {
    const auto cx = power_law_coefficients(4096, alpha);
    const Tensor4d x = to_image(cx, 64, 64);
    std::vector<double> sigmas;
    for (int i = 0; i <= 10; ++i) sigmas.push_back(std::pow(10.0, -1.0 - i / 10.0));
    // Oracle factors change with σ, so each level is its own denoiser.
    const std::vector<Tensor4d> set(16, x);
    const Tensor4d xs = stack<double>(set);
    std::vector<PSNRPoint> pts;
    for (double s : sigmas) {
      const auto lam = oracle_factors(cx, s);
      const auto y = add_noise(xs, s, 4);
      double err = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = lam(Eigen::Index(i % 4096)) * y[i] - xs[i];
        err += e * e;
      }
      pts.push_back({s, psnr_from_mse(s * s), psnr_from_mse(err / double(y.size())), 0.0});
    }
    const auto fit = fit_slope(pts, 20.0, 40.0);
    EXPECT_NEAR(fit.slope, alpha / (alpha + 1.0), 0.1) << "alpha " << alpha;
  }
}

TEST(FitSlope, ExactNoisyAndErrors) {
  std::vector<PSNRPoint> pts;
  for (int i = 0; i <= 10; ++i) {
    const double in = 15.0 + 3.0 * i;
    pts.push_back({0.0, in, 0.8 * in + 4.0, 0.0});
  }
  const auto fit = fit_slope(pts);
  EXPECT_NEAR(fit.slope, 0.8, 1e-12);
  EXPECT_NEAR(fit.intercept, 4.0, 1e-10);
  EXPECT_EQ(fit.points, 7u);
  EXPECT_THROW(fit_slope(pts, 20.0, 22.0), AnalysisError);

  RngStream r(3, 0);
  std::vector<PSNRPoint> noisy;
  for (int i = 0; i < 200; ++i) {
    const double in = 20.0 + 0.1 * i;
    noisy.push_back({0.0, in, 0.6 * in + 0.1 * r.normal(), 0.0});
  }
  EXPECT_NEAR(fit_slope(noisy).slope, 0.6, 0.02);
}

TEST(Shrinkage, OracleFactorExamples) {
  Eigen::VectorXd c(3);
  c << 0.3, -0.3, 0.0;
  const auto lam = oracle_factors(c, 0.3);
  EXPECT_DOUBLE_EQ(lam(0), 0.5);
  EXPECT_DOUBLE_EQ(lam(1), 0.5);
  EXPECT_DOUBLE_EQ(lam(2), 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cx = random_matrix(50, 1, seed).col(0);
    for (double s : {0.1, 0.5, 2.0}) {
      const double r = oracle_risk(cx, s), m = oracle_min_sum(cx, s);
      EXPECT_GE(r, 0.5 * m - 1e-15);
      EXPECT_LE(r, m + 1e-15);
      EXPECT_NEAR(r, linear_shrinkage_risk(cx, oracle_factors(cx, s), s), 1e-12);
    }
  }
}

TEST(Shrinkage, GridSearchFindsOracleFactors) {
  Eigen::VectorXd c(3);
  c << 1.3, 0.4, 0.05;
  const double sigma = 0.5;
  // Coarse-to-fine grid over [0, 1]^3, refining around the best cell.
  Eigen::Vector3d lo(0, 0, 0), hi(1, 1, 1), best;
  for (int level = 0; level < 8; ++level) {
    double bestr = 1e300;
    const int n = 20;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j)
        for (int k = 0; k <= n; ++k) {
          Eigen::Vector3d a(lo(0) + (hi(0) - lo(0)) * i / n, lo(1) + (hi(1) - lo(1)) * j / n,
                            lo(2) + (hi(2) - lo(2)) * k / n);
          const double r = linear_shrinkage_risk(c, a, sigma);
          if (r < bestr) bestr = r, best = a;
        }
    const Eigen::Vector3d w = (hi - lo) / n;
    lo = (best - w).cwiseMax(0.0);
    hi = (best + w).cwiseMin(1.0);
  }
  EXPECT_LT((best - oracle_factors(c, sigma)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Shrinkage, SoftThresholdLimits) {
  const auto basis = Eigen::MatrixXd::Identity(8, 8);
  const auto y = random_matrix(8, 1, 21).col(0).eval();
  EXPECT_LT((soft_threshold_denoise(y, basis, 0.0) - y).norm(), 1e-15);
  EXPECT_EQ(soft_threshold_denoise(y, basis, 1e9).norm(), 0.0);
  const Eigen::VectorXd st = soft_threshold(Eigen::Vector3d(2.0, -0.5, -3.0), 1.0);
  EXPECT_EQ(st, Eigen::Vector3d(1.0, 0.0, -2.0));
  EXPECT_NEAR(universal_threshold_constant(4096), std::sqrt(2.0 * std::log(4096.0)), 1e-15);
}

TEST(Shrinkage, SoftRiskMatchesMonteCarlo) {
  Eigen::VectorXd c(4);
  c << 0.0, 0.2, 1.0, -3.0;
  const double sigma = 0.5, t = 0.8;
  const std::size_t n = 200000;
  RngStream r(7, 0);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd y = c;
    for (Eigen::Index k = 0; k < 4; ++k) y(k) += sigma * r.normal();
    acc += (soft_threshold(y, t) - c).squaredNorm();
  }
  EXPECT_NEAR(acc / double(n), soft_threshold_risk(c, sigma, t), 0.01);
}

TEST(Shrinkage, RiskOrdering) {
  for (double alpha : {1.0, 2.0, 4.0}) {
    const auto cx = power_law_coefficients(1024, alpha);
    for (double s : {0.01, 0.03, 0.1, 0.3}) {
      const double oracle = oracle_risk(cx, s);
      const double soft = soft_threshold_risk(cx, s, universal_threshold_constant(1024) * s);
      EXPECT_LE(oracle, soft);
      EXPECT_LE(soft, s * s * 1024.0);
    }
  }
}

TEST(Shrinkage, SoftThresholdWithinLogFactor) {
  const std::size_t d = 4096;
  const auto cx = power_law_coefficients(d, 1.0);
  for (double s : {0.01, 0.03, 0.1, 0.3}) {
    const double ratio = soft_threshold_risk(cx, s, universal_threshold_constant(d) * s) / oracle_risk(cx, s);
    EXPECT_LE(ratio, 4.0 * std::log(1.0 / s)) << "sigma " << s;
  }
}

TEST(MTerm, Limits) {
  const auto basis = Eigen::MatrixXd::Identity(5, 5);
  Eigen::VectorXd x(5);
  x << 0.1, -0.2, 0.05, 0.3, 0.0;
  const auto big = m_term_error(x, basis, 1.0);
  EXPECT_EQ(big.M, 0u);
  EXPECT_DOUBLE_EQ(big.combined, x.squaredNorm());
  const Eigen::VectorXd full = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0);
  const auto zero = m_term_error(full, basis, 0.0);
  EXPECT_EQ(zero.M, 5u);
  EXPECT_EQ(zero.combined, 0.0);
}

TEST(MTerm, CombinedErrorDecaySlope) {
  const auto cx = power_law_coefficients(4096, 1.0);
  std::vector<double> ls, le;
  for (int i = 0; i <= 40; ++i) {
    const double s = std::pow(10.0, -3.0 + i / 20.0);
    ls.push_back(std::log(s));
    le.push_back(std::log(m_term_error(cx, s).combined));
  }
  EXPECT_NEAR(fit_line(ls, le).slope, 1.0, 0.1);
}

TEST(Similarity, PairedAndNearest) {
  std::vector<Tensor4d> a, b;
  for (std::uint64_t i = 0; i < 5; ++i) a.push_back(random_tensor(image_dims(4, 4), 30 + i));
  for (double c : paired_cosines(a, a)) EXPECT_NEAR(c, 1.0, 1e-15);
  Tensor4d e1(image_dims(2, 2)), e2(image_dims(2, 2));
  e1[0] = 1.0;
  e2[3] = 2.0;
  const std::vector<Tensor4d> u{e1}, v{e2};
  EXPECT_EQ(paired_cosines(u, v).front(), 0.0);
  b = {a[2], a[0] * -1.0};
  const auto nn = nearest_cosines(a, b);
  EXPECT_NEAR(nn[2], 1.0, 1e-15);
  EXPECT_THROW(paired_cosines(a, b), DimensionError);

  const std::vector<double> p{1.0, 0.0, -1.0, 0.011}, n{0.99};
  const auto h = similarity_histogram(p, n);
  EXPECT_EQ(h.bins(), 100u);
  EXPECT_EQ(h.pairs.back(), 1u);
  EXPECT_EQ(h.pairs.front(), 1u);
  EXPECT_EQ(h.pairs[50], 2u);
  EXPECT_EQ(h.nearest[99], 1u);
  const auto path = std::filesystem::temp_directory_path() / "gahb_sim.csv";
  write_similarity_csv(path, h);
  const auto csv = slurp(path);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bin_lo,bin_hi,count_pairs,count_nn");
}

TEST(Plot, SvgIsWritten) {
  const std::vector<PlotSeries> s{{"a", {1, 2, 3}, {1, 4, 9}, false}, {"b<&>", {1, 3}, {2, 2}, true}};
  const auto path = std::filesystem::temp_directory_path() / "gahb_plot.svg";
  write_svg_plot(path, s, "title", "x", "y", true);
  const auto svg = slurp(path);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("b&lt;&amp;&gt;"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
