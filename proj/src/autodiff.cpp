#include "gahb/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace gahb {

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::bfnorm: return "bfnorm";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::mse: return "mse";
  }
  return "?";
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRow = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapRow = Eigen::Map<const RowMat<T>>;

void check_kernel(const Dims& in, const Dims& k) {
  if (k.height != 3) throw DimensionError("height", "conv2d: kernel height must be 3");
  if (k.width != 3) throw DimensionError("width", "conv2d: kernel width must be 3");
  if (k.channels != in.channels) {
    throw DimensionError("channels", "conv2d: input has " + std::to_string(in.channels) +
                                         " channels, kernel expects " +
                                         std::to_string(k.channels));
  }
}

// Unfolds one (C, H, W) image into a (C*9, H*W) patch matrix with zero padding.
template <class T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, RowMat<T>& col) {
  col.resize(Eigen::Index(C * 9), Eigen::Index(H * W));
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = img + c * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col.data() + (c * 9 + std::size_t(ky * 3 + kx)) * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = long(y) + ky - 1;
          for (std::size_t x = 0; x < W; ++x) {
            const long sx = long(x) + kx - 1;
            row[y * W + x] = (sy < 0 || sy >= long(H) || sx < 0 || sx >= long(W))
                                 ? T(0)
                                 : plane[std::size_t(sy) * W + std::size_t(sx)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the image.
template <class T>
void col2im_add(const RowMat<T>& col, std::size_t C, std::size_t H, std::size_t W, T* img) {
  for (std::size_t c = 0; c < C; ++c) {
    T* plane = img + c * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = col.data() + (c * 9 + std::size_t(ky * 3 + kx)) * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = long(y) + ky - 1;
          if (sy < 0 || sy >= long(H)) continue;
          for (std::size_t x = 0; x < W; ++x) {
            const long sx = long(x) + kx - 1;
            if (sx < 0 || sx >= long(W)) continue;
            plane[std::size_t(sy) * W + std::size_t(sx)] += row[y * W + x];
          }
        }
      }
    }
  }
}

template <class T>
std::vector<double> channel_mean_square(const Tensor4<T>& x) {
  const Dims& d = x.dims();
  std::vector<double> ms(d.channels, 0.0);
  const std::size_t hw = d.plane();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const T* p = x.data().data() + (b * d.channels + c) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += double(p[i]) * double(p[i]);
      ms[c] += s;
    }
  }
  const double n = double(d.batch * hw);
  for (double& v : ms) v /= n;
  return ms;
}

template <class T>
std::vector<T> norm_inv_scale(const Tensor4<T>& input, NormMode mode, std::vector<T>& running_sq) {
  const std::size_t C = input.dims().channels;
  if (running_sq.size() != C) {
    throw DimensionError("channels", "bf_batchnorm: running statistic has " +
                                         std::to_string(running_sq.size()) + " channels, input has " +
                                         std::to_string(C));
  }
  std::vector<T> inv(C);
  if (mode == NormMode::train) {
    const auto ms = channel_mean_square(input);
    for (std::size_t c = 0; c < C; ++c) {
      inv[c] = T(1.0 / std::sqrt(ms[c] + kNormEps));
      running_sq[c] = T((1.0 - kNormMomentum) * double(running_sq[c]) + kNormMomentum * ms[c]);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) inv[c] = T(1.0 / std::sqrt(double(running_sq[c]) + kNormEps));
  }
  return inv;
}

template <class T>
Tensor4<T> apply_channel_scale(const Tensor4<T>& input, std::span<const T> gain,
                               const std::vector<T>& inv) {
  Tensor4<T> out(input.dims());
  const Dims& d = input.dims();
  const std::size_t hw = d.plane();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const T s = gain[c] * inv[c];
      const std::size_t off = (b * d.channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[off + i] = input[off + i] * s;
    }
  }
  return out;
}

}  // namespace

template <class T>
Tensor4<T> conv2d(const Tensor4<T>& input, const Tensor4<T>& kernel) {
  const Dims& in = input.dims();
  const Dims& k = kernel.dims();
  check_kernel(in, k);
  Tensor4<T> out(Dims{in.batch, k.batch, in.height, in.width});
  const std::size_t hw = in.plane();
  ConstMapRow<T> K(kernel.data().data(), Eigen::Index(k.batch), Eigen::Index(k.channels * 9));
  RowMat<T> col;
  for (std::size_t b = 0; b < in.batch; ++b) {
    im2col(input.item(b).data(), in.channels, in.height, in.width, col);
    MapRow<T> O(out.item(b).data(), Eigen::Index(k.batch), Eigen::Index(hw));
    O.noalias() = K * col;
  }
  return out;
}

template <class T>
Tensor4<T> relu(const Tensor4<T>& input) {
  Tensor4<T> out(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <class T>
Tensor4<T> bf_batchnorm(const Tensor4<T>& input, std::span<const T> gain, NormMode mode,
                        std::vector<T>& running_sq) {
  if (gain.size() != input.dims().channels) {
    throw DimensionError("channels", "bf_batchnorm: gain has " + std::to_string(gain.size()) +
                                         " entries, input has " +
                                         std::to_string(input.dims().channels) + " channels");
  }
  const auto inv = norm_inv_scale(input, mode, running_sq);
  return apply_channel_scale(input, gain, inv);
}

template <class T>
double mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
  require_same_dims(pred.dims(), target.dims(), "mse_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = double(pred[i]) - double(target[i]);
    s += e * e;
  }
  return pred.size() ? s / double(pred.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
const typename Tape<T>::Node& Tape<T>::at(NodeId id) const {
  if (id >= nodes_.size()) throw std::out_of_range("Tape: unknown node id");
  return nodes_[id];
}

template <class T>
NodeId Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

template <class T>
const Tensor4<T>& Tape<T>::grad(NodeId id) const {
  const Node& n = at(id);
  if (n.grad.empty()) throw std::logic_error("Tape: node has no gradient");
  return n.grad;
}

template <class T>
NodeId Tape<T>::input(Tensor4<T> value, bool track) {
  Node n;
  n.kind = OpKind::input;
  n.requires_grad = track;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::parameter(ParamTensor<T>& p) {
  Node n;
  n.kind = OpKind::parameter;
  n.requires_grad = true;
  n.value = p.value;
  n.param = &p;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::conv2d(NodeId x, NodeId kernel) {
  Node n;
  n.kind = OpKind::conv2d;
  n.parents = {x, kernel};
  n.arity = 2;
  n.requires_grad = at(x).requires_grad || at(kernel).requires_grad;
  n.value = gahb::conv2d(at(x).value, at(kernel).value);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::relu(NodeId x) {
  Node n;
  n.kind = OpKind::relu;
  n.parents = {x, 0};
  n.arity = 1;
  n.requires_grad = at(x).requires_grad;
  n.value = gahb::relu(at(x).value);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::bf_batchnorm(NodeId x, NodeId gain, std::vector<T>& running_sq, NormMode mode) {
  const Tensor4<T>& in = at(x).value;
  const Tensor4<T>& g = at(gain).value;
  if (g.size() != in.dims().channels) {
    throw DimensionError("channels", "bf_batchnorm: gain has " + std::to_string(g.size()) +
                                         " entries, input has " +
                                         std::to_string(in.dims().channels) + " channels");
  }
  Node n;
  n.kind = OpKind::bfnorm;
  n.parents = {x, gain};
  n.arity = 2;
  n.mode = mode;
  n.requires_grad = at(x).requires_grad || at(gain).requires_grad;
  n.inv_scale = norm_inv_scale(in, mode, running_sq);
  n.value = apply_channel_scale(in, g.data(), n.inv_scale);
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::add(NodeId a, NodeId b) {
  require_same_dims(at(a).value.dims(), at(b).value.dims(), "add");
  Node n;
  n.kind = OpKind::add;
  n.parents = {a, b};
  n.arity = 2;
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  n.value = at(a).value + at(b).value;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::scale(NodeId a, T factor) {
  Node n;
  n.kind = OpKind::scale;
  n.parents = {a, 0};
  n.arity = 1;
  n.factor = factor;
  n.requires_grad = at(a).requires_grad;
  n.value = at(a).value * factor;
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::mse(NodeId pred, NodeId target) {
  Node n;
  n.kind = OpKind::mse;
  n.parents = {pred, target};
  n.arity = 2;
  n.requires_grad = at(pred).requires_grad || at(target).requires_grad;
  n.value = Tensor4<T>(Dims{1, 1, 1, 1}, T(mse_loss(at(pred).value, at(target).value)));
  return push(std::move(n));
}

template <class T>
Tensor4<T>& Tape<T>::grad_slot(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor4<T>(n.value.dims());
  return n.grad;
}

template <class T>
void Tape<T>::backward(NodeId loss) {
  if (at(loss).value.size() != 1) {
    throw std::invalid_argument(std::string("backward: node ") + to_string(at(loss).kind) +
                                " is not scalar (dims " + to_string(at(loss).value.dims()) + ")");
  }
  backward(loss, Tensor4<T>(at(loss).value.dims(), T(1)));
}

template <class T>
void Tape<T>::backward(NodeId output, const Tensor4<T>& cotangent) {
  require_same_dims(at(output).value.dims(), cotangent.dims(), "backward cotangent");
  for (Node& n : nodes_) n.grad = Tensor4<T>();
  nodes_[output].grad = cotangent;
  sweep(output);
  for (Node& n : nodes_) {
    if (n.kind == OpKind::parameter && !n.grad.empty()) n.param->grad += n.grad;
  }
}

template <class T>
void Tape<T>::sweep(NodeId output) {
  for (std::size_t idx = output + 1; idx-- > 0;) {
    Node& n = nodes_[idx];
    if (n.grad.empty() || !n.requires_grad) continue;
    const Tensor4<T>& g = n.grad;
    switch (n.kind) {
      case OpKind::input:
      case OpKind::parameter:
        break;
      case OpKind::conv2d: {
        const NodeId xi = n.parents[0], ki = n.parents[1];
        const Tensor4<T>& x = nodes_[xi].value;
        const Tensor4<T>& k = nodes_[ki].value;
        const Dims& in = x.dims();
        const Dims& kd = k.dims();
        const std::size_t hw = in.plane();
        const bool want_x = nodes_[xi].requires_grad;
        const bool want_k = nodes_[ki].requires_grad;
        ConstMapRow<T> K(k.data().data(), Eigen::Index(kd.batch), Eigen::Index(kd.channels * 9));
        RowMat<T> col, dcol;
        RowMat<T> dK = RowMat<T>::Zero(Eigen::Index(kd.batch), Eigen::Index(kd.channels * 9));
        Tensor4<T>* dx = want_x ? &grad_slot(xi) : nullptr;
        for (std::size_t b = 0; b < in.batch; ++b) {
          ConstMapRow<T> G(g.item(b).data(), Eigen::Index(kd.batch), Eigen::Index(hw));
          if (want_k) {
            im2col(x.item(b).data(), in.channels, in.height, in.width, col);
            dK.noalias() += G * col.transpose();
          }
          if (want_x) {
            dcol.noalias() = K.transpose() * G;
            col2im_add(dcol, in.channels, in.height, in.width, dx->item(b).data());
          }
        }
        if (want_k) {
          Tensor4<T>& dk = grad_slot(ki);
          MapRow<T>(dk.data().data(), dK.rows(), dK.cols()) += dK;
        }
        break;
      }
      case OpKind::relu: {
        const NodeId xi = n.parents[0];
        if (!nodes_[xi].requires_grad) break;
        const Tensor4<T>& x = nodes_[xi].value;
        Tensor4<T>& dx = grad_slot(xi);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] > T(0)) dx[i] += g[i];
        }
        break;
      }
      case OpKind::bfnorm: {
        const NodeId xi = n.parents[0], gi = n.parents[1];
        const Tensor4<T>& x = nodes_[xi].value;
        const Tensor4<T>& gain = nodes_[gi].value;
        const Dims& d = x.dims();
        const std::size_t hw = d.plane();
        const double count = double(d.batch * hw);
        // Per channel: sum(g*x), used by both the gain and the train-mode input adjoint.
        std::vector<double> gx(d.channels, 0.0);
        for (std::size_t b = 0; b < d.batch; ++b) {
          for (std::size_t c = 0; c < d.channels; ++c) {
            const std::size_t off = (b * d.channels + c) * hw;
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += double(g[off + i]) * double(x[off + i]);
            gx[c] += s;
          }
        }
        if (nodes_[gi].requires_grad) {
          Tensor4<T>& dg = grad_slot(gi);
          for (std::size_t c = 0; c < d.channels; ++c) dg[c] += T(gx[c] * double(n.inv_scale[c]));
        }
        if (nodes_[xi].requires_grad) {
          Tensor4<T>& dx = grad_slot(xi);
          for (std::size_t c = 0; c < d.channels; ++c) {
            const double s = double(n.inv_scale[c]);
            const double a = double(gain[c]) * s;
            // d(inv_scale)/dx_j = -inv_scale^3 * x_j / count in train mode.
            const double corr =
                n.mode == NormMode::train ? double(gain[c]) * s * s * s * gx[c] / count : 0.0;
            for (std::size_t b = 0; b < d.batch; ++b) {
              const std::size_t off = (b * d.channels + c) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                dx[off + i] += T(a * double(g[off + i]) - corr * double(x[off + i]));
              }
            }
          }
        }
        break;
      }
      case OpKind::add: {
        for (std::size_t p = 0; p < 2; ++p) {
          if (nodes_[n.parents[p]].requires_grad) grad_slot(n.parents[p]) += g;
        }
        break;
      }
      case OpKind::scale: {
        const NodeId ai = n.parents[0];
        if (!nodes_[ai].requires_grad) break;
        Tensor4<T>& da = grad_slot(ai);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += n.factor * g[i];
        break;
      }
      case OpKind::mse: {
        const NodeId pi = n.parents[0], ti = n.parents[1];
        const Tensor4<T>& p = nodes_[pi].value;
        const Tensor4<T>& t = nodes_[ti].value;
        const T scale = T(2.0 * double(g[0]) / double(p.size()));
        if (nodes_[pi].requires_grad) {
          Tensor4<T>& dp = grad_slot(pi);
          for (std::size_t i = 0; i < p.size(); ++i) dp[i] += scale * (p[i] - t[i]);
        }
        if (nodes_[ti].requires_grad) {
          Tensor4<T>& dt = grad_slot(ti);
          for (std::size_t i = 0; i < p.size(); ++i) dt[i] -= scale * (p[i] - t[i]);
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------

template <class T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : tensors) n += p.value.size();
  return n;
}

template <class T>
ParamTensor<T>& ModelParams<T>::find(const std::string& name) {
  for (auto& p : tensors) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("ModelParams: no tensor named '" + name + "'");
}

template <class T>
const ParamTensor<T>& ModelParams<T>::find(const std::string& name) const {
  return const_cast<ModelParams<T>*>(this)->find(name);
}

template <class T>
void ModelParams<T>::zero_grad() {
  for (auto& p : tensors) p.zero_grad();
}

template <class T>
void adam_step(std::span<ParamTensor<T>> params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.size(), T(0));
      state.v.emplace_back(p.value.size(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].value.size() || state.v[i].size() != params[i].value.size()) {
      throw std::invalid_argument("adam_step: state shape mismatch for '" + params[i].name + "'");
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = double(p.grad[j]);
      m[j] = T(cfg.beta1 * double(m[j]) + (1.0 - cfg.beta1) * g);
      v[j] = T(cfg.beta2 * double(v[j]) + (1.0 - cfg.beta2) * g * g);
      const double mhat = double(m[j]) / bc1;
      const double vhat = double(v[j]) / bc2;
      p.value[j] = T(double(p.value[j]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

#define GAHB_INSTANTIATE(T)                                                                     \
  template Tensor4<T> conv2d(const Tensor4<T>&, const Tensor4<T>&);                             \
  template Tensor4<T> relu(const Tensor4<T>&);                                                  \
  template Tensor4<T> bf_batchnorm(const Tensor4<T>&, std::span<const T>, NormMode,             \
                                   std::vector<T>&);                                            \
  template double mse_loss(const Tensor4<T>&, const Tensor4<T>&);                               \
  template class Tape<T>;                                                                       \
  template struct ModelParams<T>;                                                               \
  template void adam_step(std::span<ParamTensor<T>>, AdamState<T>&, const AdamConfig&);

GAHB_INSTANTIATE(float)
GAHB_INSTANTIATE(double)

#undef GAHB_INSTANTIATE

}  // namespace gahb
