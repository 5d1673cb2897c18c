#pragma once

// Bias-free CNN denoiser: conv -> ReLU, then (conv -> BF-BN -> ReLU) blocks,
// then a final conv back to one channel. No additive constants anywhere.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gahb/autodiff.hpp"
#include "gahb/function.hpp"
#include "gahb/tensor.hpp"

namespace gahb {

struct BFCNNConfig {
  int layers = 9;  // convolutional layers, first and last included
  int channels = 32;
  std::size_t height = 16;
  std::size_t width = 16;
  // Predict the noise and return y - r(y) instead of f(y) directly.
  bool residual = true;

  /// 64 channels, 20 convolutions: 665,856 parameters.
  static BFCNNConfig full_scale(std::size_t height = 40, std::size_t width = 40);

  void validate() const;
  /// Parameter count implied by the layout, without building tensors.
  std::size_t param_count() const;
  nlohmann::json to_json() const;
  static BFCNNConfig from_json(const nlohmann::json& j);
  friend bool operator==(const BFCNNConfig&, const BFCNNConfig&) = default;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
class BFCNN {
 public:
  BFCNN() = default;
  BFCNN(BFCNNConfig config, ModelParams<T> params, std::vector<std::vector<T>> running_sq);

  const BFCNNConfig& config() const { return config_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  std::vector<std::vector<T>>& running_sq() { return running_sq_; }
  const std::vector<std::vector<T>>& running_sq() const { return running_sq_; }
  std::uint64_t steps_trained = 0;

  std::size_t param_count() const { return params_.count(); }

  /// Records the network on `tape`. Parameters are bound as trainable leaves;
  /// train mode updates the running statistics.
  NodeId forward(Tape<T>& tape, NodeId y, NormMode mode);

  /// Eval-mode forward pass.
  Tensor4<T> denoise(const Tensor4<T>& y) const;
  /// Eval-mode cotangentᵀ·∇f(y). Parameters and gradients are left untouched.
  Tensor4<T> vjp(const Tensor4<T>& y, const Tensor4<T>& cotangent) const;

  template <class U>
  BFCNN<U> cast() const;

 private:
  template <class Bind>
  NodeId build(Tape<T>& tape, NodeId y, NormMode mode, std::vector<std::vector<T>>& stats,
               Bind&& bind) const;
  void check_input(const Dims& d) const;

  BFCNNConfig config_;
  ModelParams<T> params_;
  std::vector<std::vector<T>> running_sq_;
};

/// He-normal kernels (std sqrt(2 / (in_ch * 9))), unit gains, unit running
/// mean squares. Same seed gives identical parameters.
BFCNN<float> build_model(const BFCNNConfig& config, std::uint64_t seed);

/// Wraps a double-precision copy of `model` as a DenoiserFn.
DenoiserFn as_denoiser_fn(const BFCNN<double>& model);
DenoiserFn as_denoiser_fn(const BFCNN<float>& model);

struct TrainConfig {
  double sigma_min = 0.0;
  double sigma_max = 1.0;
  std::size_t batch_size = 32;
  std::size_t steps = 1000;
  AdamConfig adam;
  // Step decay: lr is multiplied by lr_decay every lr_decay_every steps (0 = never).
  std::size_t lr_decay_every = 0;
  double lr_decay = 0.5;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossRecord {
  std::uint64_t step = 0;
  double sigma_mean = 0.0;
  double loss = 0.0;
};

/// Runs `config.steps` Adam steps on images (N, 1, h, w), continuing from
/// `model.steps_trained`. Each step draws batch indices with replacement and a
/// noise level per image. Deterministic given the seed.
std::vector<LossRecord> train(BFCNN<float>& model, const Tensor4f& images, const TrainConfig& config,
                              const std::function<void(const LossRecord&)>& on_step = {});

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> trace);

// Checkpoint: "GAHBCKPT", u32 version, u32 header length, JSON header,
// u64 FNV-1a checksum of the payload, payload of little-endian f32 blocks
// (parameters in declaration order, then running statistics).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const BFCNN<float>& model);
BFCNN<float> load_checkpoint(const std::filesystem::path& path);
/// Also checks the stored configuration against `expected`.
BFCNN<float> load_checkpoint(const std::filesystem::path& path, const BFCNNConfig& expected);

}  // namespace gahb
