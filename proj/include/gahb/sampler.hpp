#pragma once

// Deterministic reverse diffusion: repeatedly step along the denoiser
// residual until its RMS falls below the target noise level.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "gahb/function.hpp"
#include "gahb/tensor.hpp"

namespace gahb {

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  double h = 0.01;
  double sigma0 = 1.0;
  double sigma_inf = 0.01;
  std::size_t max_iters = 10000;

  void validate() const;
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

struct ChainResult {
  std::vector<double> sigma_trace;  // sigma_t at every check, the stopping one included
  std::size_t updates = 0;
  bool converged = false;  // false when max_iters ran out
};

struct SampleResult {
  Tensor4d x;  // final state, one batch element per chain
  std::vector<ChainResult> chains;
};

/// sigma0 * N(0, I) keyed by seed.
Tensor4d initial_noise(const Dims& dims, double sigma0, std::uint64_t seed);

/// Every batch element of x0 is an independent chain. Stopped chains are
/// dropped from later denoiser calls, so results do not depend on packing.
SampleResult sample(const DenoiserFn& f, const SamplerConfig& config, Tensor4d x0);
SampleResult sample(const DenoiserFn& f, const SamplerConfig& config, const Dims& dims,
                    std::uint64_t seed);

struct PairedSample {
  std::uint64_t seed = 0;
  Tensor4d x0;
  SampleResult a;
  SampleResult b;
};

/// Runs both denoisers from the same initial image for seeds base_seed + i.
std::vector<PairedSample> paired_sample(const DenoiserFn& fa, const DenoiserFn& fb,
                                        const SamplerConfig& config, const Dims& image,
                                        std::size_t n_seeds, std::uint64_t base_seed);

/// CSV "iter,sigma_t" for one chain.
void write_sigma_csv(const std::filesystem::path& path, const ChainResult& chain);

}  // namespace gahb
