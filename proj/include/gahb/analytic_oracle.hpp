#pragma once

// Priors with closed-form noisy densities, scores and posterior moments, and
// numerical checks of the identities that tie denoising to the score.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gahb/function.hpp"
#include "gahb/rng.hpp"
#include "gahb/tensor.hpp"

namespace gahb {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// N(mean, V diag(eigenvalues) Vᵀ).
class GaussianPrior {
 public:
  GaussianPrior(Eigen::VectorXd mean, Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenvectors);

  static GaussianPrior diagonal(Eigen::VectorXd mean, const Eigen::VectorXd& variances);
  static GaussianPrior from_covariance(Eigen::VectorXd mean, const Eigen::MatrixXd& cov);
  /// Random orthonormal eigenbasis, eigenvalues log-uniform in [lo, hi],
  /// mean entries N(0, mean_scale²).
  static GaussianPrior random(std::size_t d, std::uint64_t seed, double lo = 0.1, double hi = 2.0,
                              double mean_scale = 0.5);

  std::size_t dim() const { return std::size_t(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }
  Eigen::MatrixXd covariance() const;

  /// Σ(Σ + σ²I)⁻¹.
  Eigen::MatrixXd shrinkage(double sigma) const;
  /// (Σ + σ²I)⁻¹.
  Eigen::MatrixXd noisy_precision(double sigma) const;
  double noisy_log_det(double sigma) const;

  Eigen::VectorXd sample(const CounterRng& rng, std::uint64_t index) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
};

struct MixtureComponent {
  double weight = 1.0;
  GaussianPrior prior;
};

class MixturePrior {
 public:
  explicit MixturePrior(std::vector<MixtureComponent> components);

  std::size_t dim() const { return components_.front().prior.dim(); }
  const std::vector<MixtureComponent>& components() const { return components_; }
  Eigen::VectorXd sample(const CounterRng& rng, std::uint64_t index) const;

 private:
  std::vector<MixtureComponent> components_;
};

// Noisy density p_σ = p * N(0, σ²I) and its derivatives.
Eigen::VectorXd score(const GaussianPrior& p, const Eigen::VectorXd& y, double sigma);
Eigen::VectorXd score(const MixturePrior& p, const Eigen::VectorXd& y, double sigma);
double log_density(const GaussianPrior& p, const Eigen::VectorXd& y, double sigma);
double log_density(const MixturePrior& p, const Eigen::VectorXd& y, double sigma);
/// Posterior component weights given y.
Eigen::VectorXd responsibilities(const MixturePrior& p, const Eigen::VectorXd& y, double sigma);

/// E[x | y].
Eigen::VectorXd optimal_denoiser(const GaussianPrior& p, const Eigen::VectorXd& y, double sigma);
Eigen::VectorXd optimal_denoiser(const MixturePrior& p, const Eigen::VectorXd& y, double sigma);
/// Cov[x | y].
Eigen::MatrixXd posterior_cov(const GaussianPrior& p, const Eigen::VectorXd& y, double sigma);
Eigen::MatrixXd posterior_cov(const MixturePrior& p, const Eigen::VectorXd& y, double sigma);

// DenoiserFn adapters. Images are flattened row-major; height·width must equal d.
DenoiserFn optimal_denoiser_fn(const GaussianPrior& p, double sigma);
DenoiserFn optimal_denoiser_fn(const MixturePrior& p, double sigma);
/// Gaussian posterior mean with σ² re-estimated from each input: the root s of
/// Σ c_i² / (λ_i + s) = d over prior eigencoordinates c, or 0 when none exists.
DenoiserFn blind_gaussian_denoiser(const GaussianPrior& p);
double estimate_noise_variance(const GaussianPrior& p, const Eigen::VectorXd& y);
/// f(y) = c·y.
DenoiserFn linear_shrinker(double c);
/// f(y) = base + P(y - base), P the orthogonal projector onto span(tangent).
DenoiserFn manifold_projection_denoiser(std::span<const Tensor4d> tangent, const Tensor4d& base);

struct MiyasawaReport {
  std::size_t points = 0;
  double mean_residual = 0.0;      // max |E[x|y] - y - σ² score|
  double cov_residual = 0.0;       // max |Cov - σ²(I + σ² H)|, H by differences of the score
  double jacobian_residual = 0.0;  // max |∇E[x|y] - σ⁻² Cov|
};

inline constexpr double kHessianStep = 1e-4;

MiyasawaReport verify_miyasawa(const GaussianPrior& p, double sigma, std::size_t n_points,
                               std::uint64_t seed);
MiyasawaReport verify_miyasawa(const MixturePrior& p, double sigma, std::size_t n_points,
                               std::uint64_t seed);

/// Draws the clean image with the given index.
using PriorSampler = std::function<Tensor4d(std::uint64_t index)>;

struct SureOptions {
  std::size_t n_mc = 2000;
  std::uint64_t seed = 0;
  std::size_t probes = 1;  // Hutchinson probes per sample
  std::size_t batch = 64;
  std::function<double(const Tensor4d&)> exact_trace;  // overrides the probes when set
};

struct SureReport {
  std::size_t n = 0;
  double true_mse = 0.0;  // E||x - f(y)||²
  double sure = 0.0;      // E[||y - f(y)||² + 2σ² tr ∇f(y) - σ² d]
  double true_se = 0.0;
  double sure_se = 0.0;
  double combined_se = 0.0;
  double z() const { return combined_se > 0.0 ? (sure - true_mse) / combined_se : 0.0; }
  bool agrees(double k = 4.0) const;
};

SureReport verify_sure(const DenoiserFn& f, const PriorSampler& prior, double sigma,
                       const SureOptions& options);

struct KLReport {
  double kl = 0.0;               // closed form
  double bound = 0.0;            // quadrature on the working grid plus tails
  double reference_bound = 0.0;  // dense adaptive quadrature of the same integrand
  double quadrature_error = 0.0; // |bound - reference| / reference
  double slack() const { return bound - kl; }
  bool holds(double tolerance = 0.02) const { return kl <= bound * (1.0 + tolerance) + 1e-14; }
};

double gaussian_kl(const GaussianPrior& p, const GaussianPrior& q);
/// E||f*_σ(y) - f_σ(y)||² for y = x + σz, x ~ truth; both denoisers optimal for their prior.
double denoiser_gap(const GaussianPrior& truth, const GaussianPrior& model, double sigma);
/// ∫ gap(σ) σ⁻³ dσ: trapezoid in log σ on `points` nodes over [lo, hi] plus
/// power-law tails fitted at both ends.
double integrated_gap(const GaussianPrior& truth, const GaussianPrior& model,
                      std::size_t points = 200, double lo = 1e-3, double hi = 1e3);
KLReport kl_bound_check(const GaussianPrior& truth, const GaussianPrior& model,
                        std::size_t points = 200, double lo = 1e-3, double hi = 1e3);

struct CheckResult {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  nlohmann::json to_json() const;
};

/// Closed-form checks on synthetic priors; `only` keeps names containing it.
std::vector<CheckResult> run_verification_suite(const std::string& only, std::uint64_t seed);
nlohmann::json verification_report(std::span<const CheckResult> checks);

}  // namespace gahb
