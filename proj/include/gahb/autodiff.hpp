#pragma once

// Reverse-mode differentiation restricted to the handful of ops a bias-free
// CNN denoiser needs. Nodes are appended in evaluation order, so the node
// vector is already a topological order and backward is a reverse sweep.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gahb/tensor.hpp"

namespace gahb {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.1;

enum class OpKind { input, parameter, conv2d, relu, bfnorm, add, scale, mse };
enum class NormMode { train, eval };

const char* to_string(OpKind k);

template <class T>
struct ParamTensor {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Tensor4<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.dims()) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Tape-free kernels. The tape reuses them for its forward values.

/// Same-size 3×3 convolution (cross-correlation), zero boundary, no bias.
/// `kernel` is laid out as (out_ch, in_ch, 3, 3).
template <class T>
Tensor4<T> conv2d(const Tensor4<T>& input, const Tensor4<T>& kernel);

template <class T>
Tensor4<T> relu(const Tensor4<T>& input);

/// Bias-free batch normalization: per channel, x * gain / sqrt(ms + eps), where
/// ms is the mean square over batch and space (train) or the running estimate
/// (eval). Train mode folds the batch statistic into `running_sq`.
template <class T>
Tensor4<T> bf_batchnorm(const Tensor4<T>& input, std::span<const T> gain, NormMode mode,
                        std::vector<T>& running_sq);

template <class T>
double mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target);

using NodeId = std::size_t;

template <class T>
class Tape {
 public:
  /// Leaf holding a value. Gradients are recorded for it when `track` is set.
  NodeId input(Tensor4<T> value, bool track = true);
  /// Leaf bound to `p`; backward accumulates into `p.grad`. `p` must outlive
  /// the backward call.
  NodeId parameter(ParamTensor<T>& p);

  NodeId conv2d(NodeId x, NodeId kernel);
  NodeId relu(NodeId x);
  NodeId bf_batchnorm(NodeId x, NodeId gain, std::vector<T>& running_sq, NormMode mode);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, T factor);
  NodeId mse(NodeId pred, NodeId target);

  const Tensor4<T>& value(NodeId id) const { return at(id).value; }
  bool has_grad(NodeId id) const { return !at(id).grad.empty(); }
  const Tensor4<T>& grad(NodeId id) const;
  OpKind kind(NodeId id) const { return at(id).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1. `loss` must hold a single entry.
  void backward(NodeId loss);
  /// Seeds `output` with `cotangent` (vector-Jacobian product).
  void backward(NodeId output, const Tensor4<T>& cotangent);

 private:
  struct Node {
    OpKind kind = OpKind::input;
    std::array<NodeId, 2> parents{};
    std::size_t arity = 0;
    bool requires_grad = false;
    Tensor4<T> value;
    Tensor4<T> grad;
    ParamTensor<T>* param = nullptr;
    NormMode mode = NormMode::eval;
    std::vector<T> inv_scale;  // bfnorm: 1/sqrt(ms + eps) per channel
    T factor = T(1);           // scale
  };

  const Node& at(NodeId id) const;
  NodeId push(Node n);
  void sweep(NodeId output);
  Tensor4<T>& grad_slot(NodeId id);

  std::vector<Node> nodes_;
};

template <class T>
struct ModelParams {
  std::vector<ParamTensor<T>> tensors;

  std::size_t count() const;
  ParamTensor<T>& find(const std::string& name);
  const ParamTensor<T>& find(const std::string& name) const;
  void zero_grad();
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update using the gradients stored in `params`.
/// An empty state is sized on first use; a state sized for other tensors throws.
template <class T>
void adam_step(std::span<ParamTensor<T>> params, AdamState<T>& state, const AdamConfig& cfg);

}  // namespace gahb
