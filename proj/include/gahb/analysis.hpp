#pragma once

// Jacobian spectra of denoisers, PSNR sweeps, shrinkage baselines in a fixed
// orthonormal basis, and similarity statistics between image sets.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gahb/function.hpp"
#include "gahb/tensor.hpp"

namespace gahb {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDenseJacobianLimit = 4096;

Eigen::VectorXd to_vector(const Tensor4d& x);
Tensor4d to_image(const Eigen::VectorXd& v, std::size_t height, std::size_t width);

// --- Jacobians -------------------------------------------------------------

/// Dense d×d Jacobian of f at a single image y, one vjp per output pixel
/// (rows), evaluated `batch` at a time.
Eigen::MatrixXd jacobian(const DenoiserFn& f, const Tensor4d& y, std::size_t batch = 64);

/// Central differences, one column per input pixel.
Eigen::MatrixXd finite_difference_jacobian(const DenoiserFn& f, const Tensor4d& y, double step);

struct JacobianSpectrum {
  std::size_t height = 0;
  std::size_t width = 0;
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // column k is e_k
  Eigen::VectorXd coeff_x;       // <x, e_k>
  Eigen::VectorXd coeff_y;       // <y, e_k>
  double asymmetry = 0.0;        // ||J - J^T||_F / ||J||_F
  double reconstruction_error = 0.0;

  std::size_t size() const { return std::size_t(eigenvalues.size()); }
  Tensor4d eigenvector(std::size_t k) const;
};

/// Symmetrizes J, diagonalizes it and measures how well sum_k λ_k <y,e_k> e_k
/// reproduces f(y) (J·y when `fy` is empty).
JacobianSpectrum spectrum(const Eigen::MatrixXd& J, const Tensor4d& x, const Tensor4d& y,
                          const Tensor4d* fy = nullptr);

/// Leading k eigenpairs of the symmetrized Jacobian by power iteration with
/// deflation. Jv is taken by central differences and Jᵀv by vjp.
JacobianSpectrum top_k_spectrum(const DenoiserFn& f, const Tensor4d& x, const Tensor4d& y,
                                std::size_t k = 64, std::size_t max_iters = 200,
                                std::uint64_t seed = 0);

std::size_t effective_rank(const JacobianSpectrum& s, double tau = 0.1);
double trace(const JacobianSpectrum& s);

/// Largest principal angles first, in degrees, between the column spans of A and B.
std::vector<double> principal_angles(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

void write_spectrum_csv(const std::filesystem::path& path, const JacobianSpectrum& s);
void write_eigenvector_mosaic(const std::filesystem::path& path, const JacobianSpectrum& s,
                              std::size_t count, std::size_t columns = 8);

// --- PSNR ------------------------------------------------------------------

struct PSNRPoint {
  double sigma = 0.0;
  double input_psnr = 0.0;
  double output_psnr = 0.0;
  double mse = 0.0;  // per pixel, averaged over the test set
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // RMS of fit residuals
  std::size_t points = 0;
};

struct PSNRCurve {
  std::vector<PSNRPoint> points;  // ascending input PSNR
  double window_lo = 20.0;
  double window_hi = 40.0;
  LineFit fit;
};

/// Peak 1: 10·log10(1 / mse).
double psnr_from_mse(double mse);

PSNRCurve psnr_curve(const DenoiserFn& f, std::span<const Tensor4d> test_set,
                     std::span<const double> sigmas, std::uint64_t seed, double window_lo = 20.0,
                     double window_hi = 40.0);

/// Least squares over the points whose input PSNR lies in [lo, hi].
LineFit fit_slope(std::span<const PSNRPoint> points, double lo = 20.0, double hi = 40.0);
LineFit fit_line(std::span<const double> xs, std::span<const double> ys);

void write_psnr_csv(const std::filesystem::path& path, const PSNRCurve& curve);

// --- Shrinkage in a fixed basis --------------------------------------------
// Bases are d×d matrices whose columns are orthonormal; coefficient-space
// overloads take c = <x, e_k> directly.

/// λ_k = c_k² / (c_k² + σ²).
Eigen::VectorXd oracle_factors(const Eigen::VectorXd& cx, double sigma);
Eigen::VectorXd oracle_shrinkage_denoise(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                         const Eigen::MatrixXd& basis, double sigma);
/// Expected risk σ² Σ λ_k of the oracle shrinker.
double oracle_risk(const Eigen::VectorXd& cx, double sigma);
/// Σ min(c_k², σ²).
double oracle_min_sum(const Eigen::VectorXd& cx, double sigma);
/// Expected risk of per-coefficient factors a_k applied to c + σz.
double linear_shrinkage_risk(const Eigen::VectorXd& cx, const Eigen::VectorXd& a, double sigma);

/// sqrt(2 ln d).
double universal_threshold_constant(std::size_t d);
Eigen::VectorXd soft_threshold(const Eigen::VectorXd& c, double t);
Eigen::VectorXd soft_threshold_denoise(const Eigen::VectorXd& y, const Eigen::MatrixXd& basis,
                                       double t);
/// Exact expected squared error of soft thresholding at t, summed over coefficients.
double soft_threshold_risk(const Eigen::VectorXd& cx, double sigma, double t);

struct MTermError {
  std::size_t M = 0;
  double tail = 0.0;      // ||x - x_M||²
  double combined = 0.0;  // Mσ² + tail
};
MTermError m_term_error(const Eigen::VectorXd& cx, double sigma);
MTermError m_term_error(const Eigen::VectorXd& x, const Eigen::MatrixXd& basis, double sigma);

/// c_k = k^(-(α+1)/2), k = 1..d.
Eigen::VectorXd power_law_coefficients(std::size_t d, double alpha);

// --- Similarity ------------------------------------------------------------

std::vector<double> paired_cosines(std::span<const Tensor4d> a, std::span<const Tensor4d> b);
/// For every image in `a`, its largest cosine against `b`.
std::vector<double> nearest_cosines(std::span<const Tensor4d> a, std::span<const Tensor4d> b);

struct SimilarityHistogram {
  double bin_width = 0.02;
  std::vector<std::size_t> pairs;    // bins over [-1, 1]
  std::vector<std::size_t> nearest;

  std::size_t bins() const { return pairs.size(); }
  double bin_lo(std::size_t i) const { return -1.0 + double(i) * bin_width; }
};

SimilarityHistogram similarity_histogram(std::span<const double> paired,
                                         std::span<const double> nearest, double bin_width = 0.02);
void write_similarity_csv(const std::filesystem::path& path, const SimilarityHistogram& h);

// --- Plots -----------------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

/// Minimal SVG line chart with axes, ticks and a legend.
void write_svg_plot(const std::filesystem::path& path, std::span<const PlotSeries> series,
                    const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, bool log_y = false);

}  // namespace gahb
