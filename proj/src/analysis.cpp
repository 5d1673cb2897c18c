#include "gahb/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "gahb/datasets.hpp"
#include "gahb/image_io.hpp"
#include "gahb/parallel.hpp"
#include "gahb/rng.hpp"

namespace gahb {

Eigen::VectorXd to_vector(const Tensor4d& x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data().data(), Eigen::Index(x.size()));
}

Tensor4d to_image(const Eigen::VectorXd& v, std::size_t height, std::size_t width) {
  if (std::size_t(v.size()) != height * width) {
    throw DimensionError("data", "to_image: vector length does not match image size");
  }
  return Tensor4d(image_dims(height, width), std::vector<double>(v.data(), v.data() + v.size()));
}

namespace {

void require_single(const Tensor4d& y, const char* what) {
  if (y.dims().batch != 1) {
    throw DimensionError("batch", std::string(what) + ": expected a single image");
  }
}

Tensor4d repeat(const Tensor4d& y, std::size_t n) {
  Dims d = y.dims();
  d.batch = n;
  Tensor4d out(d);
  for (std::size_t b = 0; b < n; ++b) std::copy(y.data().begin(), y.data().end(), out.item(b).begin());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Jacobians

Eigen::MatrixXd jacobian(const DenoiserFn& f, const Tensor4d& y, std::size_t batch) {
  require_single(y, "jacobian");
  const std::size_t d = y.size();
  if (d > kDenseJacobianLimit) {
    throw AnalysisError("jacobian: d = " + std::to_string(d) + " exceeds the dense limit of " +
                        std::to_string(kDenseJacobianLimit) + "; use the top-k mode instead");
  }
  if (!f.has_vjp()) throw AnalysisError("jacobian: denoiser provides no vjp");
  batch = std::max<std::size_t>(1, std::min(batch, d));
  const std::size_t chunks = (d + batch - 1) / batch;
  Eigen::MatrixXd J(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * batch, n = std::min(batch, d - lo);
    const Tensor4d Y = repeat(y, n);
    Tensor4d C(Y.dims());
    for (std::size_t k = 0; k < n; ++k) C.item(k)[lo + k] = 1.0;
    const Tensor4d R = f.vjp(Y, C);
    require_same_dims(Y.dims(), R.dims(), "jacobian: vjp result");
    for (std::size_t k = 0; k < n; ++k) {
      const auto row = R.item(k);
      for (std::size_t j = 0; j < d; ++j) J(Eigen::Index(lo + k), Eigen::Index(j)) = row[j];
    }
  });
  return J;
}

Eigen::MatrixXd finite_difference_jacobian(const DenoiserFn& f, const Tensor4d& y, double step) {
  require_single(y, "finite_difference_jacobian");
  const std::size_t d = y.size();
  Eigen::MatrixXd J(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  const std::size_t batch = 32;
  for (std::size_t lo = 0; lo < d; lo += batch) {
    const std::size_t n = std::min(batch, d - lo);
    Tensor4d Y = repeat(y, 2 * n);
    for (std::size_t k = 0; k < n; ++k) {
      Y.item(2 * k)[lo + k] += step;
      Y.item(2 * k + 1)[lo + k] -= step;
    }
    const Tensor4d F = f(Y);
    for (std::size_t k = 0; k < n; ++k) {
      const auto p = F.item(2 * k), m = F.item(2 * k + 1);
      for (std::size_t i = 0; i < d; ++i) {
        J(Eigen::Index(i), Eigen::Index(lo + k)) = (p[i] - m[i]) / (2.0 * step);
      }
    }
  }
  return J;
}

Tensor4d JacobianSpectrum::eigenvector(std::size_t k) const {
  return to_image(eigenvectors.col(Eigen::Index(k)), height, width);
}

JacobianSpectrum spectrum(const Eigen::MatrixXd& J, const Tensor4d& x, const Tensor4d& y,
                          const Tensor4d* fy) {
  if (J.rows() != J.cols()) throw DimensionError("rows", "spectrum: Jacobian must be square");
  if (std::size_t(J.rows()) != y.size() || x.size() != y.size()) {
    throw DimensionError("data", "spectrum: Jacobian size does not match the images");
  }
  JacobianSpectrum s;
  s.height = y.dims().height;
  s.width = y.dims().width;
  const double norm = J.norm();
  s.asymmetry = norm > 0.0 ? (J - J.transpose()).norm() / norm : 0.0;
  const Eigen::MatrixXd Js = 0.5 * (J + J.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Js);
  if (solver.info() != Eigen::Success) throw AnalysisError("spectrum: eigensolver did not converge");
  s.eigenvalues = solver.eigenvalues().reverse();
  s.eigenvectors = solver.eigenvectors().rowwise().reverse();
  const Eigen::VectorXd xv = to_vector(x), yv = to_vector(y);
  s.coeff_x = s.eigenvectors.transpose() * xv;
  s.coeff_y = s.eigenvectors.transpose() * yv;
  const Eigen::VectorXd target = fy ? to_vector(*fy) : Eigen::VectorXd(J * yv);
  const Eigen::VectorXd recon = s.eigenvectors * s.eigenvalues.cwiseProduct(s.coeff_y);
  const double tn = target.norm();
  s.reconstruction_error = tn > 0.0 ? (target - recon).norm() / tn : recon.norm();
  return s;
}

JacobianSpectrum top_k_spectrum(const DenoiserFn& f, const Tensor4d& x, const Tensor4d& y,
                                std::size_t k, std::size_t max_iters, std::uint64_t seed) {
  require_single(y, "top_k_spectrum");
  if (!f.has_vjp()) throw AnalysisError("top_k_spectrum: denoiser provides no vjp");
  const std::size_t d = y.size();
  const std::size_t h = y.dims().height, w = y.dims().width;
  k = std::min(k, d);
  const Eigen::VectorXd yv = to_vector(y);
  const double eps = 1e-4 * std::max(1.0, yv.norm());

  auto apply_sym = [&](const Eigen::VectorXd& v) {
    Dims d2 = y.dims();
    d2.batch = 2;
    Tensor4d Y(d2);
    for (std::size_t i = 0; i < d; ++i) {
      Y[i] = yv[Eigen::Index(i)] + eps * v[Eigen::Index(i)];
      Y[d + i] = yv[Eigen::Index(i)] - eps * v[Eigen::Index(i)];
    }
    const Tensor4d F = f(Y);
    Eigen::VectorXd jv(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) jv[Eigen::Index(i)] = (F[i] - F[d + i]) / (2.0 * eps);
    const Tensor4d jtv = f.vjp(y, to_image(v, h, w));
    return Eigen::VectorXd(0.5 * (jv + to_vector(jtv)));
  };

  Eigen::MatrixXd V(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  Eigen::VectorXd lambda(static_cast<Eigen::Index>(k));
  const CounterRng rng(seed, 0x70c);
  for (std::size_t j = 0; j < k; ++j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) v[Eigen::Index(i)] = rng.normal(j * d + i);
    auto deflate = [&](Eigen::VectorXd& u) {
      for (std::size_t p = 0; p < j; ++p) u -= V.col(Eigen::Index(p)).dot(u) * V.col(Eigen::Index(p));
    };
    deflate(v);
    v.normalize();
    double lam = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
      Eigen::VectorXd u = apply_sym(v);
      deflate(u);
      const double next = v.dot(u);
      const double un = u.norm();
      if (un == 0.0) {
        lam = 0.0;
        break;
      }
      const Eigen::VectorXd vn = u / un;
      const double change = std::min((vn - v).norm(), (vn + v).norm());
      v = vn;
      lam = next;
      if (change < 1e-6) break;
    }
    V.col(Eigen::Index(j)) = v;
    lambda[Eigen::Index(j)] = lam;
  }
  // Power iteration finds eigenvalues by magnitude; present them descending.
  std::vector<Eigen::Index> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return lambda[a] > lambda[b]; });
  JacobianSpectrum s;
  s.height = h;
  s.width = w;
  s.eigenvalues.resize(Eigen::Index(k));
  s.eigenvectors.resize(Eigen::Index(d), Eigen::Index(k));
  for (std::size_t i = 0; i < k; ++i) {
    s.eigenvalues[Eigen::Index(i)] = lambda[order[i]];
    s.eigenvectors.col(Eigen::Index(i)) = V.col(order[i]);
  }
  s.coeff_x = s.eigenvectors.transpose() * to_vector(x);
  s.coeff_y = s.eigenvectors.transpose() * yv;
  s.asymmetry = std::nan("");
  s.reconstruction_error = std::nan("");
  return s;
}

std::size_t effective_rank(const JacobianSpectrum& s, double tau) {
  return std::size_t((s.eigenvalues.array() >= tau).count());
}

double trace(const JacobianSpectrum& s) { return s.eigenvalues.sum(); }

std::vector<double> principal_angles(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.rows() != B.rows()) throw DimensionError("rows", "principal_angles: ambient dims differ");
  const Eigen::MatrixXd Qa =
      Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ() * Eigen::MatrixXd::Identity(A.rows(), A.cols());
  const Eigen::MatrixXd Qb =
      Eigen::HouseholderQR<Eigen::MatrixXd>(B).householderQ() * Eigen::MatrixXd::Identity(B.rows(), B.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Qa.transpose() * Qb);
  const Eigen::VectorXd sv = svd.singularValues();
  std::vector<double> out;
  for (Eigen::Index i = sv.size(); i-- > 0;) {
    out.push_back(std::acos(std::clamp(sv[i], -1.0, 1.0)) * 180.0 / M_PI);
  }
  return out;
}

void write_spectrum_csv(const std::filesystem::path& path, const JacobianSpectrum& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "k,lambda,abs_coeff_x,abs_coeff_y\n";
  out.precision(10);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto i = Eigen::Index(k);
    out << k << ',' << s.eigenvalues[i] << ',' << std::abs(s.coeff_x[i]) << ','
        << std::abs(s.coeff_y[i]) << '\n';
  }
}

void write_eigenvector_mosaic(const std::filesystem::path& path, const JacobianSpectrum& s,
                              std::size_t count, std::size_t columns) {
  std::vector<Tensor4d> tiles;
  for (std::size_t k = 0; k < std::min(count, s.size()); ++k) tiles.push_back(s.eigenvector(k));
  write_pgm(path, mosaic(tiles, columns));
}

// ---------------------------------------------------------------------------
// PSNR

double psnr_from_mse(double mse) { return 10.0 * std::log10(1.0 / mse); }

PSNRCurve psnr_curve(const DenoiserFn& f, std::span<const Tensor4d> test_set,
                     std::span<const double> sigmas, std::uint64_t seed, double window_lo,
                     double window_hi) {
  if (test_set.empty()) throw AnalysisError("psnr_curve: empty test set");
  if (sigmas.empty()) throw AnalysisError("psnr_curve: empty noise grid");
  for (double s : sigmas) {
    if (!(s > 0.0)) throw AnalysisError("psnr_curve: noise levels must be positive");
  }
  const Tensor4d x = stack(test_set);
  PSNRCurve curve;
  curve.window_lo = window_lo;
  curve.window_hi = window_hi;
  for (double sigma : sigmas) {
    // One noise draw shared by every level, so the curve varies only with sigma.
    const Tensor4d y = add_noise(x, sigma, seed);
    const Tensor4d xh = f(y);
    require_same_dims(x.dims(), xh.dims(), "psnr_curve: denoiser output");
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err += (x[i] - xh[i]) * (x[i] - xh[i]);
    PSNRPoint p;
    p.sigma = sigma;
    p.mse = err / double(x.size());
    p.input_psnr = psnr_from_mse(sigma * sigma);
    p.output_psnr = psnr_from_mse(p.mse);
    curve.points.push_back(p);
  }
  std::sort(curve.points.begin(), curve.points.end(),
            [](const PSNRPoint& a, const PSNRPoint& b) { return a.input_psnr < b.input_psnr; });
  curve.fit = fit_slope(curve.points, window_lo, window_hi);
  return curve;
}

LineFit fit_line(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("fit_line: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) throw AnalysisError("fit_line: need at least 2 points, got " + std::to_string(n));
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0) throw AnalysisError("fit_line: all x values coincide");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / double(n));
  fit.points = n;
  return fit;
}

LineFit fit_slope(std::span<const PSNRPoint> points, double lo, double hi) {
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    if (p.input_psnr >= lo && p.input_psnr <= hi) {
      xs.push_back(p.input_psnr);
      ys.push_back(p.output_psnr);
    }
  }
  if (xs.size() < 2) {
    throw AnalysisError("fit_slope: window [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        "] dB holds " + std::to_string(xs.size()) + " points, need 2");
  }
  return fit_line(xs, ys);
}

void write_psnr_csv(const std::filesystem::path& path, const PSNRCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sigma,in_dB,out_dB\n";
  out.precision(10);
  for (const auto& p : curve.points) {
    out << p.sigma << ',' << p.input_psnr << ',' << p.output_psnr << '\n';
  }
}

// ---------------------------------------------------------------------------
// Shrinkage

Eigen::VectorXd oracle_factors(const Eigen::VectorXd& cx, double sigma) {
  const double s2 = sigma * sigma;
  Eigen::VectorXd out(cx.size());
  for (Eigen::Index k = 0; k < cx.size(); ++k) {
    const double c2 = cx[k] * cx[k];
    out[k] = c2 + s2 > 0.0 ? c2 / (c2 + s2) : 0.0;
  }
  return out;
}

Eigen::VectorXd oracle_shrinkage_denoise(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                         const Eigen::MatrixXd& basis, double sigma) {
  const Eigen::VectorXd lam = oracle_factors(basis.transpose() * x, sigma);
  return basis * lam.cwiseProduct(basis.transpose() * y);
}

double oracle_risk(const Eigen::VectorXd& cx, double sigma) {
  return sigma * sigma * oracle_factors(cx, sigma).sum();
}

double oracle_min_sum(const Eigen::VectorXd& cx, double sigma) {
  return cx.array().square().min(sigma * sigma).sum();
}

double linear_shrinkage_risk(const Eigen::VectorXd& cx, const Eigen::VectorXd& a, double sigma) {
  if (a.size() != cx.size()) throw DimensionError("data", "linear_shrinkage_risk: size mismatch");
  const double s2 = sigma * sigma;
  return ((a.array() - 1.0).square() * cx.array().square() + a.array().square() * s2).sum();
}

double universal_threshold_constant(std::size_t d) { return std::sqrt(2.0 * std::log(double(d))); }

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& c, double t) {
  Eigen::VectorXd out(c.size());
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    const double a = std::abs(c[k]) - t;
    out[k] = a > 0.0 ? std::copysign(a, c[k]) : 0.0;
  }
  return out;
}

Eigen::VectorXd soft_threshold_denoise(const Eigen::VectorXd& y, const Eigen::MatrixXd& basis,
                                       double t) {
  return basis * soft_threshold(basis.transpose() * y, t);
}

double soft_threshold_risk(const Eigen::VectorXd& cx, double sigma, double t) {
  const auto Phi = [](double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); };
  const auto phi = [](double v) { return std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI); };
  const double lam = t / sigma;
  double total = 0.0;
  for (Eigen::Index k = 0; k < cx.size(); ++k) {
    const double mu = cx[k] / sigma;
    const double r = 1.0 + lam * lam +
                     (mu * mu - lam * lam - 1.0) * (Phi(lam - mu) - Phi(-lam - mu)) -
                     (lam - mu) * phi(lam + mu) - (lam + mu) * phi(lam - mu);
    total += sigma * sigma * r;
  }
  return total;
}

MTermError m_term_error(const Eigen::VectorXd& cx, double sigma) {
  MTermError e;
  for (Eigen::Index k = 0; k < cx.size(); ++k) {
    if (std::abs(cx[k]) > sigma) {
      ++e.M;
    } else {
      e.tail += cx[k] * cx[k];
    }
  }
  e.combined = double(e.M) * sigma * sigma + e.tail;
  return e;
}

MTermError m_term_error(const Eigen::VectorXd& x, const Eigen::MatrixXd& basis, double sigma) {
  return m_term_error(Eigen::VectorXd(basis.transpose() * x), sigma);
}

Eigen::VectorXd power_law_coefficients(std::size_t d, double alpha) {
  Eigen::VectorXd c(static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < d; ++k) c[Eigen::Index(k)] = std::pow(double(k + 1), -(alpha + 1.0) / 2.0);
  return c;
}

// ---------------------------------------------------------------------------
// Similarity

std::vector<double> paired_cosines(std::span<const Tensor4d> a, std::span<const Tensor4d> b) {
  if (a.size() != b.size()) throw DimensionError("batch", "paired_cosines: set sizes differ");
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(cosine_similarity(a[i].data(), b[i].data()));
  return out;
}

std::vector<double> nearest_cosines(std::span<const Tensor4d> a, std::span<const Tensor4d> b) {
  if (b.empty()) throw AnalysisError("nearest_cosines: empty reference set");
  std::vector<double> out;
  for (const auto& x : a) {
    double best = -1.0;
    for (const auto& r : b) best = std::max(best, cosine_similarity(x.data(), r.data()));
    out.push_back(best);
  }
  return out;
}

SimilarityHistogram similarity_histogram(std::span<const double> paired,
                                         std::span<const double> nearest, double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("similarity_histogram: bin width must be > 0");
  SimilarityHistogram h;
  h.bin_width = bin_width;
  const auto n = std::size_t(std::llround(2.0 / bin_width));
  h.pairs.assign(n, 0);
  h.nearest.assign(n, 0);
  auto bin = [&](double v) {
    const double i = std::floor((std::clamp(v, -1.0, 1.0) + 1.0) / bin_width);
    return std::min(std::size_t(std::max(i, 0.0)), n - 1);
  };
  for (double v : paired) ++h.pairs[bin(v)];
  for (double v : nearest) ++h.nearest[bin(v)];
  return h;
}

void write_similarity_csv(const std::filesystem::path& path, const SimilarityHistogram& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bin_lo,bin_hi,count_pairs,count_nn\n";
  for (std::size_t i = 0; i < h.bins(); ++i) {
    out << h.bin_lo(i) << ',' << h.bin_lo(i) + h.bin_width << ',' << h.pairs[i] << ','
        << h.nearest[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_svg_plot(const std::filesystem::path& path, std::span<const PlotSeries> series,
                    const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, bool log_y) {
  constexpr double W = 640, H = 440, L = 70, R = 20, T = 40, B = 60;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(ty(s.y[i]))) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x0 < x1)) {
    x0 = std::isfinite(x0) ? x0 - 1 : 0;
    x1 = x0 + 2;
  }
  if (!(y0 < y1)) {
    y0 = std::isfinite(y0) ? y0 - 1 : 0;
    y1 = y0 + 2;
  }
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    const double xp = L + (W - L - R) * i / 5.0, yp = H - B - (H - T - B) * i / 5.0;
    svg << "<text x=\"" << xp << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
        << std::setprecision(3) << xv << "</text>\n"
        << "<text x=\"" << L - 6 << "\" y=\"" << yp + 4 << "\" text-anchor=\"end\">"
        << std::setprecision(3) << (log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">"
      << xml_escape(xlabel) << "</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(ty(s.y[i]))) continue;
      svg << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    svg << "\"/>\n"
        << "<text x=\"" << L + 10 << "\" y=\"" << T + 14 + 16 * double(k) << "\" fill=\"" << color
        << "\">" << xml_escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg.str();
}

}  // namespace gahb
