#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "gahb/datasets.hpp"
#include "gahb/denoiser.hpp"
#include "test_util.hpp"

using namespace gahb;
using gahb::testing::random_tensor;
using gahb::testing::rel_l2;

namespace {

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(v.size() / 2), v.end());
  return v[v.size() / 2];
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

BFCNNConfig small_config() { return BFCNNConfig{5, 12, 8, 8, true}; }

}  // namespace

TEST(Config, ParameterCounts) {
  EXPECT_EQ(BFCNNConfig::full_scale().param_count(), 665856u);
  // first conv 1·4·9, middle conv 4·4·9 with one gain vector of 4, last conv 4·1·9.
  const BFCNNConfig tiny{3, 4, 8, 8, true};
  EXPECT_EQ(tiny.param_count(), 36u + 144u + 4u + 36u);
  EXPECT_EQ(build_model(tiny, 0).param_count(), tiny.param_count());
  EXPECT_EQ(build_model(BFCNNConfig::full_scale(8, 8), 0).param_count(), 665856u);
  EXPECT_THROW((BFCNNConfig{2, 4, 8, 8, true}.validate()), std::invalid_argument);
  EXPECT_THROW((BFCNNConfig{3, 3, 8, 8, true}.validate()), std::invalid_argument);
  const auto j = BFCNNConfig::full_scale().to_json();
  EXPECT_EQ(BFCNNConfig::from_json(j), BFCNNConfig::full_scale());
}

TEST(Build, SameSeedIdentical) {
  const auto a = build_model(small_config(), 3), b = build_model(small_config(), 3);
  const auto c = build_model(small_config(), 4);
  ASSERT_EQ(a.params().tensors.size(), b.params().tensors.size());
  for (std::size_t i = 0; i < a.params().tensors.size(); ++i) {
    EXPECT_EQ(a.params().tensors[i].value.vector(), b.params().tensors[i].value.vector());
  }
  EXPECT_NE(a.params().tensors[0].value.vector(), c.params().tensors[0].value.vector());
}

TEST(Build, HeInitialisationScale) {
  const auto m = build_model(BFCNNConfig{4, 32, 8, 8, true}, 1);
  const auto& k = m.params().tensors[1].value;  // 32 -> 32 conv
  const double var = squared_norm<float>(k.data()) / double(k.size());
  EXPECT_NEAR(var, 2.0 / (32.0 * 9.0), 0.1 * 2.0 / (32.0 * 9.0));
}

TEST(Denoise, BiasFree) {
  for (bool residual : {true, false}) {
    BFCNNConfig cfg = small_config();
    cfg.residual = residual;
    const auto m = build_model(cfg, 5).cast<double>();
    const auto zero = m.denoise(Tensor4d(Dims{2, 1, 8, 8}));
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);
    const auto y = random_tensor(Dims{3, 1, 8, 8}, 6);
    const auto fy = m.denoise(y);
    for (double a : {0.5, 2.0}) EXPECT_LT(rel_l2(m.denoise(y * a), fy * a), 1e-4);
  }
}

TEST(Denoise, PiecewiseLinear) {
  const auto m = build_model(small_config(), 7).cast<double>();
  const auto y = random_tensor(Dims{1, 1, 8, 8}, 8);
  // Row i of the Jacobian from a vjp; (∇f(y)·y)_i = <row_i, y>.
  Tensor4d jy(y.dims());
  for (std::size_t i = 0; i < 64; ++i) {
    Tensor4d e(y.dims());
    e[i] = 1.0;
    jy[i] = dot<double>(m.vjp(y, e).data(), y.data());
  }
  EXPECT_LT(rel_l2(jy, m.denoise(y)), 1e-10);
}

TEST(Denoise, DimensionMismatch) {
  const auto m = build_model(small_config(), 0);
  try {
    m.denoise(Tensor4f(Dims{1, 1, 8, 9}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "width");
  }
  EXPECT_THROW(m.denoise(Tensor4f(Dims{1, 2, 8, 8})), DimensionError);
}

TEST(Denoise, BatchIndependentInEval) {
  const auto m = build_model(small_config(), 9).cast<double>();
  const auto y = random_tensor(Dims{3, 1, 8, 8}, 10);
  const auto all = m.denoise(y);
  for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(m.denoise(y.slice(b)).vector(), all.slice(b).vector());
}

TEST(Train, LossDecreasesAndIsReproducible) {
  DatasetSpec spec;
  spec.kind = DatasetKind::disks;
  spec.count = 32;
  spec.height = spec.width = 8;
  spec.seed = 2;
  // 8x8 is too small for the disk radius range; use C^alpha instead.
  spec.kind = DatasetKind::calpha;
  const auto imgs = to_batch(generate(spec)).cast<float>();
  TrainConfig tc;
  tc.steps = 500;
  tc.batch_size = 8;
  tc.seed = 3;
  auto m1 = build_model(small_config(), 1);
  const auto trace = train(m1, imgs, tc);
  ASSERT_EQ(trace.size(), 500u);
  std::vector<double> first, last;
  for (std::size_t i = 0; i < 100; ++i) {
    first.push_back(trace[i].loss);
    last.push_back(trace[400 + i].loss);
  }
  EXPECT_LT(median(last), median(first));
  EXPECT_EQ(m1.steps_trained, 500u);

  tc.steps = 20;
  auto a = build_model(small_config(), 1), b = build_model(small_config(), 1);
  train(a, imgs, tc);
  train(b, imgs, tc);
  for (std::size_t i = 0; i < a.params().tensors.size(); ++i)
    EXPECT_EQ(a.params().tensors[i].value.vector(), b.params().tensors[i].value.vector());
  EXPECT_EQ(a.running_sq(), b.running_sq());
}

TEST(Train, ZeroDatasetLearnsZero) {
  const Tensor4f zeros(Dims{4, 1, 8, 8});
  TrainConfig tc;
  tc.steps = 600;
  tc.batch_size = 8;
  tc.adam.lr = 3e-3;
  auto m = build_model(small_config(), 2);
  train(m, zeros, tc);
  const double sigma = 0.1;
  const auto y = add_noise(Tensor4d(Dims{16, 1, 8, 8}), sigma, 4);
  const auto out = m.cast<double>().denoise(y);
  const double mse = squared_norm<double>(out.data()) / 16.0;
  EXPECT_LT(mse, sigma * sigma * 64.0 * 0.05);
}

TEST(Train, ZeroNoiseApproachesIdentity) {
  DatasetSpec spec;
  spec.count = 16;
  spec.height = spec.width = 8;
  spec.seed = 5;
  const auto clean = to_batch(generate(spec));
  TrainConfig tc;
  tc.sigma_min = tc.sigma_max = 0.0;
  tc.steps = 300;
  tc.batch_size = 8;
  auto m = build_model(small_config(), 3);
  train(m, clean.cast<float>(), tc);
  EXPECT_LT(rel_l2(m.cast<double>().denoise(clean), clean), 0.05);
}

TEST(Train, MemorisesSingleImage) {
  const auto img = synth_calpha(8, 8, 2.0, 2.0, 6).pixels;
  TrainConfig tc;
  tc.steps = 800;
  tc.batch_size = 8;
  tc.adam.lr = 2e-3;
  auto m = build_model(small_config(), 4);
  train(m, img.cast<float>(), tc);
  const auto y = add_noise(img, 0.2, 9);
  const auto out = m.cast<double>().denoise(y);
  EXPECT_GT(cosine_similarity<double>(out.data(), img.data()), 0.95);
}

TEST(Train, Errors) {
  auto m = build_model(small_config(), 0);
  TrainConfig tc;
  tc.steps = 2;
  EXPECT_THROW(train(m, Tensor4f(Dims{0, 1, 8, 8}), tc), TrainingError);
  EXPECT_THROW(train(m, Tensor4f(Dims{1, 1, 8, 7}), tc), DimensionError);
  Tensor4f bad(Dims{1, 1, 8, 8}, 0.5f);
  bad[3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(train(m, bad, tc), TrainingError);
  tc.sigma_min = 0.5;
  tc.sigma_max = 0.2;
  EXPECT_THROW(train(m, Tensor4f(Dims{1, 1, 8, 8}), tc), std::invalid_argument);
}

TEST(Train, ResumeContinuesStepCounter) {
  const auto imgs = random_tensor<float>(Dims{4, 1, 8, 8}, 1, 0.3);
  TrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 2;
  auto m = build_model(small_config(), 0);
  train(m, imgs, tc);
  const auto path = temp_file("gahb_resume.ckpt");
  save_checkpoint(path, m);
  auto r = load_checkpoint(path);
  EXPECT_EQ(r.steps_trained, 5u);
  const auto trace = train(r, imgs, tc);
  EXPECT_EQ(trace.front().step, 6u);
  EXPECT_EQ(r.steps_trained, 10u);
  std::filesystem::remove(path);
}

TEST(Train, PeriodicCheckpointAndLossCsv) {
  const auto imgs = random_tensor<float>(Dims{4, 1, 8, 8}, 2, 0.3);
  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 2;
  tc.checkpoint_every = 3;
  tc.checkpoint_path = temp_file("gahb_periodic.ckpt");
  std::filesystem::remove(tc.checkpoint_path);
  auto m = build_model(small_config(), 0);
  std::size_t calls = 0;
  const auto trace = train(m, imgs, tc, [&](const LossRecord&) { ++calls; });
  EXPECT_EQ(calls, 6u);
  EXPECT_EQ(load_checkpoint(tc.checkpoint_path).steps_trained, 6u);
  const auto csv = temp_file("gahb_loss.csv");
  write_loss_csv(csv, trace);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,sigma_mean,loss");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6u);
  std::filesystem::remove(csv);
  std::filesystem::remove(tc.checkpoint_path);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto m = build_model(small_config(), 11);
  TrainConfig tc;
  tc.steps = 3;
  tc.batch_size = 2;
  train(m, random_tensor<float>(Dims{2, 1, 8, 8}, 3, 0.3), tc);
  const auto path = temp_file("gahb_rt.ckpt");
  save_checkpoint(path, m);
  const auto back = load_checkpoint(path, small_config());
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.running_sq(), m.running_sq());
  const auto y = random_tensor<float>(Dims{2, 1, 8, 8}, 4);
  EXPECT_EQ(back.denoise(y).vector(), m.denoise(y).vector());
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedAndCorrupt) {
  const auto m = build_model(small_config(), 12);
  const auto path = temp_file("gahb_trunc.ckpt");
  save_checkpoint(path, m);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 7);
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  save_checkpoint(path, m);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(std::streamoff(size - 10));
    f.put('\x55');
  }
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, ConfigMismatch) {
  const auto m = build_model(small_config(), 13);
  const auto path = temp_file("gahb_cfg.ckpt");
  save_checkpoint(path, m);
  BFCNNConfig other = small_config();
  other.height = other.width = 16;
  EXPECT_THROW(load_checkpoint(path, other), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Adapter, DenoiserFnMatchesModel) {
  const auto m = build_model(small_config(), 14);
  const auto f = as_denoiser_fn(m);
  const auto y = random_tensor(Dims{2, 1, 8, 8}, 15);
  const auto direct = m.denoise(y.cast<float>()).cast<double>();
  EXPECT_LT(gahb::testing::max_abs_diff(f(y), direct), 1e-5);
  ASSERT_TRUE(f.has_vjp());
  const auto c = random_tensor(Dims{2, 1, 8, 8}, 16);
  const auto md = m.cast<double>();
  EXPECT_LT(rel_l2(as_denoiser_fn(md).vjp(y, c), md.vjp(y, c)), 1e-12);
}
