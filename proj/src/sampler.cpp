#include "gahb/sampler.hpp"

#include <cmath>
#include <fstream>

#include "gahb/rng.hpp"

namespace gahb {

void SamplerConfig::validate() const {
  if (!(h > 0.0 && h <= 1.0)) throw std::invalid_argument("SamplerConfig: h must be in (0, 1]");
  if (!(sigma_inf > 0.0 && sigma_inf < sigma0)) {
    throw std::invalid_argument("SamplerConfig: need 0 < sigma_inf < sigma0");
  }
  if (max_iters < 1) throw std::invalid_argument("SamplerConfig: max_iters must be >= 1");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"h", h}, {"sigma0", sigma0}, {"sigma_inf", sigma_inf}, {"max_iters", max_iters}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.h = j.value("h", c.h);
  c.sigma0 = j.value("sigma0", c.sigma0);
  c.sigma_inf = j.value("sigma_inf", c.sigma_inf);
  c.max_iters = j.value("max_iters", c.max_iters);
  return c;
}

Tensor4d initial_noise(const Dims& dims, double sigma0, std::uint64_t seed) {
  Tensor4d x(dims);
  const CounterRng rng(seed, 0x5a3b1e);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = sigma0 * rng.normal(i);
  return x;
}

SampleResult sample(const DenoiserFn& f, const SamplerConfig& config, Tensor4d x0) {
  config.validate();
  const Dims dims = x0.dims();
  const std::size_t per = dims.image_size();
  SampleResult res{std::move(x0), std::vector<ChainResult>(dims.batch)};
  std::vector<std::size_t> active(dims.batch);
  for (std::size_t b = 0; b < dims.batch; ++b) active[b] = b;

  for (std::size_t iter = 0; !active.empty(); ++iter) {
    Dims sub = dims;
    sub.batch = active.size();
    Tensor4d x(sub);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const auto src = res.x.item(active[k]);
      std::copy(src.begin(), src.end(), x.item(k).begin());
    }
    const Tensor4d fx = f(x);
    require_same_dims(sub, fx.dims(), "sample: denoiser output");

    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t b = active[k];
      ChainResult& chain = res.chains[b];
      auto xb = res.x.item(b);
      const auto fb = fx.item(k);
      double ss = 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        const double s = fb[i] - xb[i];
        ss += s * s;
      }
      const double sigma_t = std::sqrt(ss / double(per));
      if (!std::isfinite(sigma_t)) {
        throw SamplerError("sample: non-finite state in chain " + std::to_string(b) +
                           " at iteration " + std::to_string(iter));
      }
      chain.sigma_trace.push_back(sigma_t);
      if (sigma_t < config.sigma_inf) {
        chain.converged = true;
        continue;
      }
      if (chain.updates >= config.max_iters) continue;
      for (std::size_t i = 0; i < per; ++i) xb[i] += config.h * (fb[i] - xb[i]);
      ++chain.updates;
      still.push_back(b);
    }
    active = std::move(still);
  }
  return res;
}

SampleResult sample(const DenoiserFn& f, const SamplerConfig& config, const Dims& dims,
                    std::uint64_t seed) {
  return sample(f, config, initial_noise(dims, config.sigma0, seed));
}

std::vector<PairedSample> paired_sample(const DenoiserFn& fa, const DenoiserFn& fb,
                                        const SamplerConfig& config, const Dims& image,
                                        std::size_t n_seeds, std::uint64_t base_seed) {
  std::vector<PairedSample> out;
  for (std::size_t i = 0; i < n_seeds; ++i) {
    PairedSample p;
    p.seed = base_seed + i;
    p.x0 = initial_noise(image, config.sigma0, p.seed);
    p.a = sample(fa, config, p.x0);
    p.b = sample(fb, config, p.x0);
    out.push_back(std::move(p));
  }
  return out;
}

void write_sigma_csv(const std::filesystem::path& path, const ChainResult& chain) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iter,sigma_t\n";
  out.precision(9);
  for (std::size_t i = 0; i < chain.sigma_trace.size(); ++i) {
    out << i << ',' << chain.sigma_trace[i] << '\n';
  }
}

}  // namespace gahb
