#include "gahb/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include "gahb/rng.hpp"

namespace gahb {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

// ---------------------------------------------------------------------------
// Config

BFCNNConfig BFCNNConfig::full_scale(std::size_t height, std::size_t width) {
  return {20, 64, height, width, true};
}

void BFCNNConfig::validate() const {
  if (layers < 3) throw std::invalid_argument("BFCNNConfig: layers must be >= 3");
  if (channels < 4) throw std::invalid_argument("BFCNNConfig: channels must be >= 4");
  if (height < 1 || width < 1) throw std::invalid_argument("BFCNNConfig: empty image size");
}

std::size_t BFCNNConfig::param_count() const {
  const std::size_t c = std::size_t(channels);
  const std::size_t middle = std::size_t(layers - 2);
  return c * 9 + middle * (c * c * 9 + c) + c * 9;
}

nlohmann::json BFCNNConfig::to_json() const {
  return {{"layers", layers},
          {"channels", channels},
          {"height", height},
          {"width", width},
          {"residual", residual}};
}

BFCNNConfig BFCNNConfig::from_json(const nlohmann::json& j) {
  BFCNNConfig c;
  c.layers = j.value("layers", c.layers);
  c.channels = j.value("channels", c.channels);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.residual = j.value("residual", c.residual);
  return c;
}

// ---------------------------------------------------------------------------
// Model

template <class T>
BFCNN<T>::BFCNN(BFCNNConfig config, ModelParams<T> params, std::vector<std::vector<T>> running_sq)
    : config_(config), params_(std::move(params)), running_sq_(std::move(running_sq)) {
  config_.validate();
  const std::size_t L = std::size_t(config_.layers);
  if (params_.tensors.size() != 2 * L - 2) {
    throw std::invalid_argument("BFCNN: expected " + std::to_string(2 * L - 2) +
                                " parameter tensors, got " +
                                std::to_string(params_.tensors.size()));
  }
  if (running_sq_.size() != L - 2) {
    throw std::invalid_argument("BFCNN: expected " + std::to_string(L - 2) +
                                " running statistics, got " + std::to_string(running_sq_.size()));
  }
}

template <class T>
void BFCNN<T>::check_input(const Dims& d) const {
  if (d.channels != 1) throw DimensionError("channels", "BFCNN: input must have one channel");
  if (d.height != config_.height) {
    throw DimensionError("height", "BFCNN: input height " + std::to_string(d.height) +
                                       " does not match model height " +
                                       std::to_string(config_.height));
  }
  if (d.width != config_.width) {
    throw DimensionError("width", "BFCNN: input width " + std::to_string(d.width) +
                                      " does not match model width " +
                                      std::to_string(config_.width));
  }
}

template <class T>
template <class Bind>
NodeId BFCNN<T>::build(Tape<T>& tape, NodeId y, NormMode mode, std::vector<std::vector<T>>& stats,
                       Bind&& bind) const {
  check_input(tape.value(y).dims());
  const std::size_t L = std::size_t(config_.layers);
  NodeId h = tape.relu(tape.conv2d(y, bind(0)));
  for (std::size_t l = 1; l + 1 < L; ++l) {
    h = tape.conv2d(h, bind(2 * l - 1));
    h = tape.bf_batchnorm(h, bind(2 * l), stats[l - 1], mode);
    h = tape.relu(h);
  }
  NodeId out = tape.conv2d(h, bind(2 * L - 3));
  if (config_.residual) out = tape.add(y, tape.scale(out, T(-1)));
  return out;
}

template <class T>
NodeId BFCNN<T>::forward(Tape<T>& tape, NodeId y, NormMode mode) {
  return build(tape, y, mode, running_sq_,
               [&](std::size_t i) { return tape.parameter(params_.tensors[i]); });
}

template <class T>
Tensor4<T> BFCNN<T>::denoise(const Tensor4<T>& y) const {
  check_input(y.dims());
  const std::size_t L = std::size_t(config_.layers);
  const auto& p = params_.tensors;
  std::vector<T> stats;
  Tensor4<T> h = relu(conv2d(y, p[0].value));
  for (std::size_t l = 1; l + 1 < L; ++l) {
    stats = running_sq_[l - 1];
    h = relu(bf_batchnorm(conv2d(h, p[2 * l - 1].value), p[2 * l].value.data(), NormMode::eval,
                          stats));
  }
  Tensor4<T> out = conv2d(h, p[2 * L - 3].value);
  if (config_.residual) return y - out;
  return out;
}

template <class T>
Tensor4<T> BFCNN<T>::vjp(const Tensor4<T>& y, const Tensor4<T>& cotangent) const {
  require_same_dims(y.dims(), cotangent.dims(), "vjp cotangent");
  Tape<T> tape;
  auto stats = running_sq_;
  const NodeId in = tape.input(y, true);
  const NodeId out = build(tape, in, NormMode::eval, stats, [&](std::size_t i) {
    return tape.input(params_.tensors[i].value, false);
  });
  tape.backward(out, cotangent);
  return tape.grad(in);
}

template <class T>
template <class U>
BFCNN<U> BFCNN<T>::cast() const {
  ModelParams<U> p;
  for (const auto& t : params_.tensors) p.tensors.emplace_back(t.name, t.value.template cast<U>());
  std::vector<std::vector<U>> stats;
  for (const auto& s : running_sq_) stats.emplace_back(s.begin(), s.end());
  BFCNN<U> out(config_, std::move(p), std::move(stats));
  out.steps_trained = steps_trained;
  return out;
}

template class BFCNN<float>;
template class BFCNN<double>;
template BFCNN<double> BFCNN<float>::cast<double>() const;
template BFCNN<float> BFCNN<float>::cast<float>() const;
template BFCNN<float> BFCNN<double>::cast<float>() const;
template BFCNN<double> BFCNN<double>::cast<double>() const;

BFCNN<float> build_model(const BFCNNConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t L = std::size_t(config.layers);
  const std::size_t C = std::size_t(config.channels);
  ModelParams<float> params;
  std::uint64_t stream = 0;
  auto kernel = [&](const std::string& name, std::size_t out_ch, std::size_t in_ch) {
    Tensor4f k(Dims{out_ch, in_ch, 3, 3});
    const CounterRng rng(seed, stream++);
    const double std = std::sqrt(2.0 / double(in_ch * 9));
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = float(std * rng.normal(i));
    params.tensors.emplace_back(name, std::move(k));
  };
  kernel("conv0", C, 1);
  for (std::size_t l = 1; l + 1 < L; ++l) {
    kernel("conv" + std::to_string(l), C, C);
    params.tensors.emplace_back("gain" + std::to_string(l), Tensor4f(Dims{1, C, 1, 1}, 1.0f));
  }
  kernel("conv" + std::to_string(L - 1), 1, C);
  std::vector<std::vector<float>> stats(L - 2, std::vector<float>(C, 1.0f));
  return BFCNN<float>(config, std::move(params), std::move(stats));
}

DenoiserFn as_denoiser_fn(const BFCNN<double>& model) {
  auto m = std::make_shared<const BFCNN<double>>(model);
  return {[m](const Tensor4d& y) { return m->denoise(y); },
          [m](const Tensor4d& y, const Tensor4d& c) { return m->vjp(y, c); }};
}

DenoiserFn as_denoiser_fn(const BFCNN<float>& model) {
  auto m = std::make_shared<const BFCNN<float>>(model);
  return {[m](const Tensor4d& y) { return m->denoise(y.cast<float>()).cast<double>(); },
          [m](const Tensor4d& y, const Tensor4d& c) {
            return m->vjp(y.cast<float>(), c.cast<float>()).cast<double>();
          }};
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(sigma_min >= 0.0) || !(sigma_max >= sigma_min)) {
    throw std::invalid_argument("TrainConfig: need 0 <= sigma_min <= sigma_max");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(adam.lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (checkpoint_every > 0 && checkpoint_path.empty()) {
    throw std::invalid_argument("TrainConfig: checkpoint_every set without checkpoint_path");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"sigma_min", sigma_min},
          {"sigma_max", sigma_max},
          {"batch_size", batch_size},
          {"steps", steps},
          {"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"adam_eps", adam.eps},
          {"lr_decay_every", lr_decay_every},
          {"lr_decay", lr_decay},
          {"checkpoint_every", checkpoint_every},
          {"checkpoint_path", checkpoint_path.string()},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.sigma_min = j.value("sigma_min", c.sigma_min);
  c.sigma_max = j.value("sigma_max", c.sigma_max);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", std::string());
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<LossRecord> train(BFCNN<float>& model, const Tensor4f& images, const TrainConfig& config,
                              const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  const Dims& d = images.dims();
  if (d.batch == 0 || images.empty()) throw TrainingError("train: empty dataset");
  if (d.channels != 1 || d.height != model.config().height || d.width != model.config().width) {
    throw DimensionError(d.channels != 1 ? "channels" : d.height != model.config().height ? "height"
                                                                                           : "width",
                         "train: dataset images " + to_string(d) + " do not fit the model");
  }
  const std::size_t B = config.batch_size;
  const std::size_t per = d.image_size();
  AdamState<float> state;
  std::vector<LossRecord> trace;
  trace.reserve(config.steps);

  for (std::size_t s = 0; s < config.steps; ++s) {
    const std::uint64_t step = model.steps_trained + 1;
    AdamConfig adam = config.adam;
    if (config.lr_decay_every > 0) {
      adam.lr *= std::pow(config.lr_decay, double((step - 1) / config.lr_decay_every));
    }
    const CounterRng rng(config.seed, step);
    RngStream picks(rng.substream(1));
    const CounterRng levels = rng.substream(2);
    const CounterRng noise = rng.substream(3);

    Tensor4f x(Dims{B, 1, d.height, d.width});
    Tensor4f y(x.dims());
    double sigma_sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t idx = std::size_t(picks.below(d.batch));
      const double sigma =
          config.sigma_min + (config.sigma_max - config.sigma_min) * levels.uniform(b);
      sigma_sum += sigma;
      auto src = images.item(idx);
      auto xb = x.item(b), yb = y.item(b);
      for (std::size_t i = 0; i < per; ++i) {
        xb[i] = src[i];
        yb[i] = float(double(src[i]) + sigma * noise.normal(b * per + i));
      }
    }

    Tape<float> tape;
    const NodeId yid = tape.input(std::move(y), false);
    const NodeId xid = tape.input(x, false);
    const NodeId out = model.forward(tape, yid, NormMode::train);
    const NodeId loss = tape.mse(out, xid);
    const double value = double(tape.value(loss)[0]);
    if (!std::isfinite(value)) {
      throw TrainingError("train: non-finite loss at step " + std::to_string(step) + " (lr " +
                          std::to_string(adam.lr) + ", mean sigma " +
                          std::to_string(sigma_sum / double(B)) + ")");
    }
    model.params().zero_grad();
    tape.backward(loss);
    adam_step(std::span<ParamTensor<float>>(model.params().tensors), state, adam);
    model.steps_trained = step;

    const LossRecord rec{step, sigma_sum / double(B), value};
    trace.push_back(rec);
    if (on_step) on_step(rec);
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      save_checkpoint(config.checkpoint_path, model);
    }
  }
  return trace;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,sigma_mean,loss\n";
  out.precision(9);
  for (const auto& r : trace) out << r.step << ',' << r.sigma_mean << ',' << r.loss << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'G', 'A', 'H', 'B', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class Int>
void put(std::string& out, Int v) {
  char b[sizeof(Int)];
  std::memcpy(b, &v, sizeof(Int));
  out.append(b, sizeof(Int));
}

template <class Int>
Int get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(Int) > in.size()) throw CheckpointError("checkpoint: truncated header");
  Int v;
  std::memcpy(&v, in.data() + pos, sizeof(Int));
  pos += sizeof(Int);
  return v;
}

void put_floats(std::string& out, std::span<const float> v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const BFCNN<float>& model) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for (const auto& p : model.params().tensors) {
    const Dims& d = p.value.dims();
    tensors.push_back({{"name", p.name}, {"dims", {d.batch, d.channels, d.height, d.width}}});
    put_floats(payload, p.value.data());
  }
  for (const auto& s : model.running_sq()) put_floats(payload, s);
  const nlohmann::json header = {{"config", model.config().to_json()},
                                 {"steps_trained", model.steps_trained},
                                 {"tensors", tensors}};
  const std::string head = header.dump();

  std::string bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(bytes, kCheckpointVersion);
  put<std::uint32_t>(bytes, std::uint32_t(head.size()));
  bytes += head;
  put<std::uint64_t>(bytes, fnv1a(payload));
  bytes += payload;

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

BFCNN<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported");
  }
  const auto head_len = get<std::uint32_t>(bytes, pos);
  if (pos + head_len > bytes.size()) throw CheckpointError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, head_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad header: ") + e.what());
  }
  pos += head_len;
  const auto checksum = get<std::uint64_t>(bytes, pos);
  const std::string payload = bytes.substr(pos);
  if (fnv1a(payload) != checksum) {
    throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated): " + path.string());
  }

  const BFCNNConfig config = BFCNNConfig::from_json(header.at("config"));
  config.validate();
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    if (off + n * sizeof(float) > payload.size()) {
      throw CheckpointError("checkpoint payload shorter than its header declares");
    }
    std::vector<float> v(n);
    std::memcpy(v.data(), payload.data() + off, n * sizeof(float));
    off += n * sizeof(float);
    return v;
  };
  ModelParams<float> params;
  for (const auto& t : header.at("tensors")) {
    const auto dims = t.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 4) throw CheckpointError("checkpoint: tensor rank must be 4");
    const Dims d{dims[0], dims[1], dims[2], dims[3]};
    params.tensors.emplace_back(t.at("name").get<std::string>(), Tensor4f(d, take(d.size())));
  }
  std::vector<std::vector<float>> stats;
  for (int l = 1; l + 1 < config.layers; ++l) stats.push_back(take(std::size_t(config.channels)));
  if (off != payload.size()) throw CheckpointError("checkpoint payload has trailing bytes");

  const BFCNNConfig expected_layout = config;
  const BFCNN<float> reference = build_model(expected_layout, 0);
  for (std::size_t i = 0; i < params.tensors.size() && i < reference.params().tensors.size(); ++i) {
    const auto& a = params.tensors[i];
    const auto& b = reference.params().tensors[i];
    if (a.name != b.name || a.value.dims() != b.value.dims()) {
      throw CheckpointError("checkpoint tensor '" + a.name + "' does not match its config");
    }
  }
  BFCNN<float> model(config, std::move(params), std::move(stats));
  model.steps_trained = header.value("steps_trained", std::uint64_t(0));
  return model;
}

BFCNN<float> load_checkpoint(const std::filesystem::path& path, const BFCNNConfig& expected) {
  BFCNN<float> model = load_checkpoint(path);
  if (!(model.config() == expected)) {
    throw CheckpointError("checkpoint config " + model.config().to_json().dump() +
                          " does not match expected " + expected.to_json().dump());
  }
  return model;
}

}  // namespace gahb
