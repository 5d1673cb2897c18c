// gahb: command-line front end. Every run writes <out>/manifest.json holding
// the fully resolved options; feeding it back through --config reproduces the
// run. Exit codes: 0 success, 1 usage, 2 runtime, 3 verification failure.

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gahb/analysis.hpp"
#include "gahb/analytic_oracle.hpp"
#include "gahb/datasets.hpp"
#include "gahb/denoiser.hpp"
#include "gahb/image_io.hpp"
#include "gahb/parallel.hpp"
#include "gahb/sampler.hpp"

using namespace gahb;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON config files for CLI11. Top-level keys are global options; an object
// named after a subcommand holds that subcommand's options.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void collect(const json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        collect(*it, p, items);
        continue;
      }
      if (it->is_null() || (it->is_string() && it->get<std::string>().empty())) continue;
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& e : *it) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      items.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::string out = "out";
  std::uint64_t seed = 0;
};

fs::path output_dir(const Globals& g) {
  const fs::path dir(g.out);
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const Globals& g, const std::string& command, const json& options,
                    const json& outputs) {
  const json m = {{"command", command}, {"out", g.out},       {"seed", g.seed},
                  {command, options},   {"outputs", outputs}, {"threads", thread_count()}};
  std::ofstream(output_dir(g) / "manifest.json") << m.dump(2) << '\n';
}

// Images from samples can have any scale; stretch each to its own range.
void write_pgm_stretched(const fs::path& path, const Tensor4d& img) {
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  write_pgm(path, img, *lo, *hi > *lo ? *hi : *lo + 1.0);
}

std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
  std::ostringstream s;
  s << stem << '_' << std::setw(3) << std::setfill('0') << i << ext;
  return s.str();
}

// ---------------------------------------------------------------------------
// Shared model / training / sampler options

struct ModelOpts {
  int layers = 9;
  int channels = 32;
  bool residual = true;

  void add(CLI::App* app) {
    app->add_option("--layers", layers, "Convolutional layers")->capture_default_str();
    app->add_option("--channels", channels, "Channels per hidden layer")->capture_default_str();
    app->add_flag("--residual,!--no-residual", residual, "Predict the noise and subtract it");
  }
  json to_json() const { return {{"layers", layers}, {"channels", channels}, {"residual", residual}}; }
  BFCNNConfig config(std::size_t h, std::size_t w) const { return {layers, channels, h, w, residual}; }
};

struct TrainOpts {
  double sigma_min = 0.0;
  double sigma_max = 1.0;
  std::size_t batch = 32;
  std::size_t steps = 1000;
  double lr = 1e-3;
  std::size_t lr_decay_every = 0;
  double lr_decay = 0.5;

  void add(CLI::App* app) {
    app->add_option("--sigma-min", sigma_min, "Smallest training noise std")->capture_default_str();
    app->add_option("--sigma-max", sigma_max, "Largest training noise std")->capture_default_str();
    app->add_option("--batch", batch, "Images per step")->capture_default_str();
    app->add_option("--steps", steps, "Optimizer steps")->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--lr-decay-every", lr_decay_every, "Steps between decays (0 = never)")
        ->capture_default_str();
    app->add_option("--lr-decay", lr_decay, "Learning-rate factor per decay")->capture_default_str();
  }
  json to_json() const {
    return {{"sigma-min", sigma_min}, {"sigma-max", sigma_max},           {"batch", batch},
            {"steps", steps},         {"lr", lr}, {"lr-decay-every", lr_decay_every},
            {"lr-decay", lr_decay}};
  }
  TrainConfig config(std::uint64_t seed) const {
    TrainConfig tc;
    tc.sigma_min = sigma_min;
    tc.sigma_max = sigma_max;
    tc.batch_size = batch;
    tc.steps = steps;
    tc.adam.lr = lr;
    tc.lr_decay_every = lr_decay_every;
    tc.lr_decay = lr_decay;
    tc.seed = seed;
    return tc;
  }
};

struct SamplerOpts {
  SamplerConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--step-size", cfg.h, "Step size in (0, 1]")->capture_default_str();
    app->add_option("--sigma0", cfg.sigma0, "Initial noise std")->capture_default_str();
    app->add_option("--sigma-inf", cfg.sigma_inf, "Stop when the residual std falls below this")
        ->capture_default_str();
    app->add_option("--max-iters", cfg.max_iters, "Update cap per chain")->capture_default_str();
  }
  json to_json() const {
    return {{"step-size", cfg.h}, {"sigma0", cfg.sigma0}, {"sigma-inf", cfg.sigma_inf}, {"max-iters", cfg.max_iters}};
  }
};

std::function<void(const LossRecord&)> progress(std::size_t steps, const std::string& tag) {
  const std::size_t every = std::max<std::size_t>(1, steps / 10);
  return [every, tag](const LossRecord& r) {
    if (r.step % every == 0) {
      std::cout << tag << "step " << r.step << " sigma " << r.sigma_mean << " loss " << r.loss << '\n';
    }
  };
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
  std::string kind = "calpha";
  std::size_t n = 16;
  std::size_t size = 32;
  std::size_t height = 0;
  std::size_t width = 0;
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double alpha1 = 2.0;
  double alpha2 = 2.0;
  double scale_min = 0.2;
  double scale_max = 1.0;
  std::string inner_kind = "calpha";
  std::string path;
  std::uint64_t perm_seed = 0;
  std::string name = "dataset.gahb";

  void add(CLI::App* app) {
    app->add_option("--kind", kind, "calpha, disks, sine_cone, single_image_ray, shuffled, image_dir")
        ->capture_default_str();
    app->add_option("--n", n, "Number of images")->capture_default_str();
    app->add_option("--size", size, "Square image side")->capture_default_str();
    app->add_option("--height", height, "Image height (overrides --size)");
    app->add_option("--width", width, "Image width (overrides --size)");
    app->add_option("--alpha", alpha, "Sets both --alpha1 and --alpha2");
    app->add_option("--alpha1", alpha1, "Contour regularity")->capture_default_str();
    app->add_option("--alpha2", alpha2, "Background regularity")->capture_default_str();
    app->add_option("--scale-min", scale_min, "Ray: smallest scale")->capture_default_str();
    app->add_option("--scale-max", scale_max, "Ray: largest scale")->capture_default_str();
    app->add_option("--inner-kind", inner_kind, "Source kind for ray and shuffled")->capture_default_str();
    app->add_option("--path", path, "Directory for image_dir");
    app->add_option("--perm-seed", perm_seed, "Pixel permutation seed for shuffled")->capture_default_str();
    app->add_option("--name", name, "Output file name")->capture_default_str();
  }

  json to_json() const {
    return {{"kind", kind},           {"n", n},
            {"height", resolved_h()}, {"width", resolved_w()},
            {"alpha1", alpha1},       {"alpha2", alpha2},
            {"scale-min", scale_min}, {"scale-max", scale_max},
            {"inner-kind", inner_kind}, {"path", path},
            {"perm-seed", perm_seed}, {"name", name}};
  }
  std::size_t resolved_h() const { return height ? height : size; }
  std::size_t resolved_w() const { return width ? width : size; }

  int run(const Globals& g) {
    if (!std::isnan(alpha)) alpha1 = alpha2 = alpha;
    DatasetSpec s;
    try {
      s.kind = dataset_kind_from_string(kind);
      s.count = n;
      s.height = resolved_h();
      s.width = resolved_w();
      s.seed = g.seed;
      s.alpha1 = alpha1;
      s.alpha2 = alpha2;
      s.scale_min = scale_min;
      s.scale_max = scale_max;
      s.path = path;
      s.perm_seed = perm_seed;
      if (s.kind == DatasetKind::single_image_ray || s.kind == DatasetKind::shuffled) {
        auto inner = std::make_shared<DatasetSpec>(s);
        inner->kind = dataset_kind_from_string(inner_kind);
        if (s.kind == DatasetKind::single_image_ray) inner->count = 1;
        s.inner = inner;
      }
      s.validate();
    } catch (const DatasetError& e) {
      throw UsageError(e.what());
    }
    const auto samples = generate(s);
    const fs::path dir = output_dir(g);
    save_dataset(dir / name, {s.height, s.width, samples, s.to_json()});
    std::vector<Tensor4d> tiles;
    for (std::size_t i = 0; i < std::min<std::size_t>(16, samples.size()); ++i) tiles.push_back(samples[i].pixels);
    write_pgm(dir / "preview.pgm", mosaic(tiles, 4));
    std::cout << "wrote " << samples.size() << " images (" << s.height << "x" << s.width << ") to "
              << (dir / name).string() << '\n';
    write_manifest(g, "synth", to_json(), {{"dataset", (dir / name).string()}, {"preview", "preview.pgm"}});
    return 0;
  }
};

// ---------------------------------------------------------------------------
// train

struct TrainCmd {
  std::string data;
  ModelOpts model;
  TrainOpts train;
  std::size_t checkpoint_every = 0;
  std::int64_t init_seed = -1;
  std::string resume;
  std::string name = "model.ckpt";

  void add(CLI::App* app) {
    app->add_option("--data", data, "Packed dataset file")->required()->check(CLI::ExistingFile);
    model.add(app);
    train.add(app);
    app->add_option("--checkpoint-every", checkpoint_every, "Steps between checkpoints (0 = end only)")
        ->capture_default_str();
    app->add_option("--init-seed", init_seed, "Parameter init seed (default: --seed)");
    app->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    app->add_option("--name", name, "Checkpoint file name")->capture_default_str();
  }

  json to_json() const {
    json j = {{"data", data},   {"checkpoint-every", checkpoint_every}, {"init-seed", init_seed},
              {"resume", resume}, {"name", name}};
    j.update(model.to_json());
    j.update(train.to_json());
    return j;
  }

  int run(const Globals& g) {
    const auto ds = load_dataset(data);
    if (ds.samples.empty()) throw UsageError("dataset is empty");
    const auto cfg = model.config(ds.height, ds.width);
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const std::uint64_t seed0 = init_seed >= 0 ? std::uint64_t(init_seed) : g.seed;
    BFCNN<float> m = resume.empty() ? build_model(cfg, seed0) : load_checkpoint(resume, cfg);
    const std::uint64_t start = m.steps_trained;
    const fs::path dir = output_dir(g);
    auto tc = train.config(g.seed);
    tc.checkpoint_every = checkpoint_every;
    tc.checkpoint_path = dir / name;
    const auto images = to_batch(ds.samples).cast<float>();
    const auto trace = gahb::train(m, images, tc, progress(tc.steps, ""));
    save_checkpoint(dir / name, m);
    write_loss_csv(dir / "loss.csv", trace);
    std::cout << "trained to step " << m.steps_trained << ", checkpoint " << (dir / name).string() << '\n';
    write_manifest(g, "train", to_json(),
                   {{"checkpoint", (dir / name).string()},
                    {"loss_csv", "loss.csv"},
                    {"params", m.param_count()},
                    {"start_step", start},
                    {"steps_trained", m.steps_trained},
                    {"final_loss", trace.empty() ? 0.0 : trace.back().loss}});
    return 0;
  }
};

// ---------------------------------------------------------------------------
// sample

struct SampleCmd {
  std::vector<std::string> checkpoints;
  bool paired = false;
  std::size_t n = 4;
  SamplerOpts sampler;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoints, "One checkpoint, or two with --paired")
        ->required()
        ->check(CLI::ExistingFile);
    app->add_flag("--paired", paired, "Run both models from the same initial noise");
    app->add_option("--n", n, "Number of samples (seeds --seed .. --seed+n-1)")->capture_default_str();
    sampler.add(app);
  }

  json to_json() const {
    json j = {{"checkpoint", checkpoints}, {"paired", paired}, {"n", n}};
    j.update(sampler.to_json());
    return j;
  }

  int run(const Globals& g) {
    if (paired != (checkpoints.size() == 2) || checkpoints.size() > 2) {
      throw UsageError("pass one checkpoint, or two together with --paired");
    }
    try {
      sampler.cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    std::vector<BFCNN<double>> models;
    for (const auto& c : checkpoints) models.push_back(load_checkpoint(c).cast<double>());
    const auto& c0 = models.front().config();
    if (paired && (models[1].config().height != c0.height || models[1].config().width != c0.width)) {
      throw UsageError("paired checkpoints have different image sizes");
    }
    const Dims image = image_dims(c0.height, c0.width);
    const fs::path dir = output_dir(g);
    json files = json::array();
    std::vector<ImageSample> packed;
    auto save = [&](const std::string& stem, std::size_t i, const Tensor4d& x, const ChainResult& chain) {
      write_pgm_stretched(dir / indexed(stem, i, ".pgm"), x);
      write_sigma_csv(dir / indexed("sigma_" + stem, i, ".csv"), chain);
      packed.push_back({x, {{"model", stem}, {"seed", g.seed + i}, {"updates", chain.updates},
                            {"converged", chain.converged}}});
      files.push_back(indexed(stem, i, ".pgm"));
    };
    if (paired) {
      const auto fa = as_denoiser_fn(models[0]);
      const auto fb = as_denoiser_fn(models[1]);
      const auto pairs = paired_sample(fa, fb, sampler.cfg, image, n, g.seed);
      std::ofstream csv(dir / "pairs.csv");
      csv << "seed,cosine_ab,updates_a,updates_b\n";
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        save("a", i, pairs[i].a.x, pairs[i].a.chains[0]);
        save("b", i, pairs[i].b.x, pairs[i].b.chains[0]);
        csv << pairs[i].seed << ','
            << cosine_similarity<double>(pairs[i].a.x.data(), pairs[i].b.x.data()) << ','
            << pairs[i].a.chains[0].updates << ',' << pairs[i].b.chains[0].updates << '\n';
      }
    } else {
      const auto f = as_denoiser_fn(models[0]);
      for (std::size_t i = 0; i < n; ++i) {
        const auto res = sample(f, sampler.cfg, image, g.seed + i);
        save("sample", i, res.x, res.chains[0]);
      }
    }
    save_dataset(dir / "samples.gahb", {c0.height, c0.width, packed, json::object()});
    std::size_t capped = 0;
    for (const auto& p : packed) capped += !p.metadata.at("converged").get<bool>();
    std::cout << "wrote " << packed.size() << " samples to " << dir.string();
    if (capped) std::cout << " (" << capped << " stopped by --max-iters)";
    std::cout << '\n';
    write_manifest(g, "sample", to_json(), {{"images", files}, {"samples", "samples.gahb"}, {"capped", capped}});
    return 0;
  }
};

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeCmd {
  std::string checkpoint;
  std::string image;
  std::size_t index = 0;
  double sigma = 0.1;
  std::size_t topk = 0;
  bool tangent_check = false;
  std::size_t count = 16;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    app->add_option("--image", image, "Clean image: a netpbm file or a packed dataset")
        ->required()
        ->check(CLI::ExistingFile);
    app->add_option("--index", index, "Image index inside a packed dataset")->capture_default_str();
    app->add_option("--sigma", sigma, "Noise std added to the clean image")->capture_default_str();
    app->add_option("--topk", topk, "Leading eigenpairs by power iteration instead of a dense Jacobian");
    app->add_flag("--tangent-check", tangent_check, "Principal angles against the disk tangent basis");
    app->add_option("--count", count, "Eigenvectors in the mosaic")->capture_default_str();
  }

  json to_json() const {
    return {{"checkpoint", checkpoint}, {"image", image},     {"index", index},
            {"sigma", sigma},           {"topk", topk},       {"tangent-check", tangent_check},
            {"count", count}};
  }

  ImageSample load_image() const {
    if (fs::path(image).extension() == ".gahb") {
      auto ds = load_dataset(image);
      if (index >= ds.samples.size()) throw UsageError("--index is past the end of the dataset");
      return ds.samples[index];
    }
    return {read_netpbm(image), json::object()};
  }

  int run(const Globals& g) {
    const auto model = load_checkpoint(checkpoint).cast<double>();
    const auto sample_img = load_image();
    const auto& x = sample_img.pixels;
    const auto& cfg = model.config();
    if (x.dims().height != cfg.height || x.dims().width != cfg.width) {
      throw UsageError("image is " + std::to_string(x.dims().height) + "x" + std::to_string(x.dims().width) +
                       ", model expects " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
    const std::size_t d = cfg.height * cfg.width;
    if (topk == 0 && d > kDenseJacobianLimit) {
      throw UsageError("image has " + std::to_string(d) + " pixels; dense Jacobians stop at " +
                       std::to_string(kDenseJacobianLimit) + ", pass --topk");
    }
    const auto f = as_denoiser_fn(model);
    const auto y = add_noise(x, sigma, g.seed);
    const auto fy = f(y);
    const JacobianSpectrum sp = topk ? top_k_spectrum(f, x, y, topk, 200, g.seed) : spectrum(jacobian(f, y), x, y, &fy);
    const fs::path dir = output_dir(g);
    write_spectrum_csv(dir / "spectrum.csv", sp);
    write_eigenvector_mosaic(dir / "eigenvectors.pgm", sp, std::min(count, sp.size()));
    write_pgm(dir / "clean.pgm", x);
    write_pgm(dir / "noisy.pgm", y);
    write_pgm(dir / "denoised.pgm", fy);
    const double mse = squared_norm<double>((fy - x).data()) / double(d);
    json report = {{"pixels", d},
                   {"sigma", sigma},
                   {"dense", topk == 0},
                   {"eigenpairs", sp.size()},
                   {"asymmetry", sp.asymmetry},
                   {"reconstruction_error", sp.reconstruction_error},
                   {"effective_rank_0.1", effective_rank(sp, 0.1)},
                   {"trace", trace(sp)},
                   {"input_psnr", psnr_from_mse(sigma * sigma)},
                   {"output_psnr", psnr_from_mse(mse)}};
    if (tangent_check) {
      const auto basis = disk_tangent_basis(sample_img);
      Eigen::MatrixXd T(Eigen::Index(d), Eigen::Index(basis.size()));
      for (std::size_t k = 0; k < basis.size(); ++k) T.col(Eigen::Index(k)) = to_vector(basis[k]);
      const auto k = std::min<std::size_t>(basis.size(), sp.size());
      report["principal_angles_deg"] = principal_angles(sp.eigenvectors.leftCols(Eigen::Index(k)), T);
    }
    std::ofstream(dir / "report.json") << report.dump(2) << '\n';
    std::cout << report.dump(2) << '\n';
    write_manifest(g, "analyze", to_json(),
                   {{"spectrum", "spectrum.csv"}, {"mosaic", "eigenvectors.pgm"}, {"report", "report.json"}});
    return 0;
  }
};

// ---------------------------------------------------------------------------
// psnr

struct PsnrCmd {
  std::string checkpoint;
  std::string data;
  std::vector<double> sigmas{0.3, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005};
  double window_lo = 20.0;
  double window_hi = 40.0;
  double alpha = std::numeric_limits<double>::quiet_NaN();
  std::size_t limit = 0;

  void add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Model checkpoint, or 'identity'")->required();
    app->add_option("--data", data, "Packed test set")->required()->check(CLI::ExistingFile);
    app->add_option("--sigmas", sigmas, "Noise levels")->capture_default_str();
    app->add_option("--window-lo", window_lo, "Fit window start, input PSNR dB")->capture_default_str();
    app->add_option("--window-hi", window_hi, "Fit window end, input PSNR dB")->capture_default_str();
    app->add_option("--alpha", alpha, "Regularity for the alpha/(alpha+1) reference");
    app->add_option("--limit", limit, "Use only the first images (0 = all)")->capture_default_str();
  }

  json to_json() const {
    json j = {{"checkpoint", checkpoint}, {"data", data},           {"sigmas", sigmas},
              {"window-lo", window_lo},   {"window-hi", window_hi}, {"limit", limit}};
    if (!std::isnan(alpha)) j["alpha"] = alpha;
    return j;
  }

  int run(const Globals& g) {
    if (sigmas.empty()) throw UsageError("empty sigma grid");
    const auto ds = load_dataset(data);
    std::vector<Tensor4d> set;
    for (const auto& s : ds.samples) {
      if (limit && set.size() >= limit) break;
      set.push_back(s.pixels);
    }
    DenoiserFn f = identity_denoiser();
    BFCNN<double> model;
    if (checkpoint != "identity") {
      model = load_checkpoint(checkpoint).cast<double>();
      f = as_denoiser_fn(model);
    }
    double ref_alpha = alpha;
    if (std::isnan(ref_alpha) && ds.spec.value("kind", "") == "calpha") {
      ref_alpha = std::min(ds.spec.value("alpha1", 2.0), ds.spec.value("alpha2", 2.0));
    }
    const auto curve = psnr_curve(f, set, sigmas, g.seed, window_lo, window_hi);
    const fs::path dir = output_dir(g);
    write_psnr_csv(dir / "psnr.csv", curve);
    PlotSeries out{"output", {}, {}, false}, diag{"identity", {}, {}, true};
    for (const auto& p : curve.points) {
      out.x.push_back(p.input_psnr);
      out.y.push_back(p.output_psnr);
      diag.x.push_back(p.input_psnr);
      diag.y.push_back(p.input_psnr);
    }
    const std::vector<PlotSeries> series{out, diag};
    write_svg_plot(dir / "psnr.svg", series, "Denoising performance", "input PSNR (dB)", "output PSNR (dB)");
    json outputs = {{"csv", "psnr.csv"}, {"svg", "psnr.svg"}, {"slope", curve.fit.slope},
                    {"intercept", curve.fit.intercept}, {"fit_points", curve.fit.points}};
    std::cout << "slope " << curve.fit.slope << " over " << curve.fit.points << " points";
    if (!std::isnan(ref_alpha)) {
      const double ref = ref_alpha / (ref_alpha + 1.0);
      outputs["reference_slope"] = ref;
      std::cout << " (alpha/(alpha+1) reference " << ref << ")";
    }
    std::cout << '\n';
    write_manifest(g, "psnr", to_json(), outputs);
    return 0;
  }
};

// ---------------------------------------------------------------------------
// verify

struct VerifyCmd {
  std::string only;

  void add(CLI::App* app) { app->add_option("--only", only, "Run checks whose name contains this"); }
  json to_json() const { return {{"only", only}}; }

  int run(const Globals& g) {
    const auto checks = run_verification_suite(only, g.seed);
    if (checks.empty()) throw UsageError("no checks match '" + only + "'");
    bool all = true;
    for (const auto& c : checks) {
      all = all && c.pass;
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " residual " << c.residual << " tol " << c.tolerance
                << '\n';
    }
    std::ofstream(output_dir(g) / "verify.json") << verification_report(checks).dump(2) << '\n';
    write_manifest(g, "verify", to_json(), {{"report", "verify.json"}, {"all_pass", all}});
    return all ? 0 : kExitVerify;
  }
};

// ---------------------------------------------------------------------------
// memgen

struct MemgenCmd {
  std::string data;
  std::vector<std::size_t> sizes;
  std::size_t n_samples = 8;
  ModelOpts model;
  TrainOpts train;
  SamplerOpts sampler;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Packed dataset to split")->required()->check(CLI::ExistingFile);
    app->add_option("--sizes", sizes, "Training set sizes N")->required();
    app->add_option("--n-samples", n_samples, "Paired samples per N")->capture_default_str();
    model.add(app);
    train.add(app);
    sampler.add(app);
  }

  json to_json() const {
    json j = {{"data", data}, {"sizes", sizes}, {"n-samples", n_samples}};
    j.update(model.to_json());
    j.update(train.to_json());
    j.update(sampler.to_json());
    return j;
  }

  int run(const Globals& g) {
    if (sizes.empty()) throw UsageError("--sizes needs at least one value");
    const auto ds = load_dataset(data);
    for (std::size_t N : sizes) {
      if (N == 0 || 2 * N > ds.samples.size()) {
        throw UsageError("N=" + std::to_string(N) + " needs " + std::to_string(2 * N) + " images, dataset has " +
                         std::to_string(ds.samples.size()));
      }
    }
    const auto cfg = model.config(ds.height, ds.width);
    const fs::path dir = output_dir(g);
    json results = json::array();
    for (std::size_t N : sizes) {
      const std::vector<std::size_t> parts{N, N};
      const auto subsets = split_disjoint(ds.samples.size(), parts, g.seed + N);
      std::vector<std::vector<Tensor4d>> train_sets(2);
      std::vector<BFCNN<double>> models;
      for (std::size_t k = 0; k < 2; ++k) {
        std::vector<ImageSample> picked;
        for (std::size_t i : subsets[k]) {
          picked.push_back(ds.samples[i]);
          train_sets[k].push_back(ds.samples[i].pixels);
        }
        auto m = build_model(cfg, g.seed + 2 * N + k);
        const std::string tag = "N=" + std::to_string(N) + (k ? " b " : " a ");
        gahb::train(m, to_batch(picked).cast<float>(), train.config(g.seed + 2 * N + k), progress(train.steps, tag));
        save_checkpoint(dir / ("model_" + std::to_string(N) + (k ? "_b" : "_a") + ".ckpt"), m);
        models.push_back(m.cast<double>());
      }
      const auto pairs = paired_sample(as_denoiser_fn(models[0]), as_denoiser_fn(models[1]), sampler.cfg,
                                       image_dims(ds.height, ds.width), n_samples, g.seed);
      std::vector<Tensor4d> sa, sb;
      for (const auto& p : pairs) {
        sa.push_back(p.a.x);
        sb.push_back(p.b.x);
      }
      const auto paired = paired_cosines(sa, sb);
      auto nearest = nearest_cosines(sa, train_sets[0]);
      const auto nb = nearest_cosines(sb, train_sets[1]);
      nearest.insert(nearest.end(), nb.begin(), nb.end());
      const auto hist = similarity_histogram(paired, nearest);
      const std::string csv = "similarity_" + std::to_string(N) + ".csv";
      write_similarity_csv(dir / csv, hist);
      std::vector<Tensor4d> tiles = sa;
      tiles.insert(tiles.end(), sb.begin(), sb.end());
      write_pgm(dir / ("samples_" + std::to_string(N) + ".pgm"), mosaic(tiles, std::max<std::size_t>(1, sa.size())));
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double e : v) s += e / double(v.size());
        return s;
      };
      std::cout << "N=" << N << " mean paired cos " << mean(paired) << ", mean nearest-train cos " << mean(nearest)
                << '\n';
      results.push_back({{"N", N},
                         {"subsets", subsets},
                         {"histogram", csv},
                         {"mean_paired", mean(paired)},
                         {"mean_nearest", mean(nearest)}});
    }
    write_manifest(g, "memgen", to_json(), {{"runs", results}});
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gahb: denoiser training, sampling and Jacobian analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(true);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; explicit flags win");
  Globals g;
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();

  SynthCmd synth;
  TrainCmd train_cmd;
  SampleCmd sample_cmd;
  AnalyzeCmd analyze;
  PsnrCmd psnr;
  VerifyCmd verify;
  MemgenCmd memgen;
  synth.add(app.add_subcommand("synth", "Generate a synthetic dataset"));
  train_cmd.add(app.add_subcommand("train", "Train a bias-free denoiser"));
  sample_cmd.add(app.add_subcommand("sample", "Draw samples by reverse diffusion"));
  analyze.add(app.add_subcommand("analyze", "Jacobian eigendecomposition at one noisy image"));
  psnr.add(app.add_subcommand("psnr", "Output vs input PSNR curve and slope"));
  verify.add(app.add_subcommand("verify", "Closed-form identity checks"));
  memgen.add(app.add_subcommand("memgen", "Memorization vs generalization across training set sizes"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "synth") return synth.run(g);
    if (name == "train") return train_cmd.run(g);
    if (name == "sample") return sample_cmd.run(g);
    if (name == "analyze") return analyze.run(g);
    if (name == "psnr") return psnr.run(g);
    if (name == "verify") return verify.run(g);
    if (name == "memgen") return memgen.run(g);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
