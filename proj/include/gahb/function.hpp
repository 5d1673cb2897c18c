#pragma once

#include <functional>
#include <stdexcept>

#include "gahb/tensor.hpp"

namespace gahb {

/// A denoiser seen as a map on image batches. `vjp(y, c)` returns cᵀ·∇f(y)
/// batch element by batch element and may be left empty when unavailable.
struct DenoiserFn {
  std::function<Tensor4d(const Tensor4d&)> apply;
  std::function<Tensor4d(const Tensor4d&, const Tensor4d&)> vjp;

  Tensor4d operator()(const Tensor4d& y) const { return apply(y); }
  bool has_vjp() const { return bool(vjp); }
};

inline DenoiserFn identity_denoiser() {
  return {[](const Tensor4d& y) { return y; },
          [](const Tensor4d& y, const Tensor4d& c) {
            require_same_dims(y.dims(), c.dims(), "vjp cotangent");
            return c;
          }};
}

}  // namespace gahb
