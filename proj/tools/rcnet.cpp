// rcnet command-line driver.
//
// Exit codes: 0 success, 1 internal or numeric failure, 2 usage or config error.

#include "rcnet/checkpoint.hpp"
#include "rcnet/data.hpp"
#include "rcnet/gradcheck_suite.hpp"
#include "rcnet/metrics.hpp"
#include "rcnet/model.hpp"
#include "rcnet/netpbm.hpp"
#include "rcnet/optim.hpp"
#include "rcnet/run_config.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace rcnet;

namespace {

// Bad invocation or bad inputs: maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_file, "key = value configuration file");
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
    cmd->add_option("-o,--out-dir", out_dir, "output directory (overrides out_dir)");
  }

  RunConfig load() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    return cfg;
  }
};

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RCNET_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw UsageError("RCNET_THREADS must be a positive integer, got '" + std::string(env) + "'");
    n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs job(i) for i in [0, count) on up to RCNET_THREADS workers. The first
// exception (lowest index) is rethrown after all workers stop.
template <typename Job>
void parallel_for(std::size_t count, Job&& job) {
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = count;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < count;) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) failed_at = i, error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  const std::size_t n = worker_count(count);
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

DatasetSplit load_split(const RunConfig& cfg) {
  if (cfg.dataset_root.empty())
    throw ConfigError("dataset_root", "config key 'dataset_root' is required (dataset directory)");
  if (!fs::is_directory(cfg.dataset_root))
    throw ConfigError("dataset_root",
                      "config key 'dataset_root': '" + cfg.dataset_root + "' is not a directory");
  const Protocol p = cfg.protocol_id();
  if (p == Protocol::DriveFixed) return load_drive(cfg.dataset_root);
  return load_stare(cfg.dataset_root, p, cfg.holdout, cfg.whole_image_fov);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

// An RGB image on disk as a padded [1, 3, H, W] input.
Sample load_rgb(const fs::path& path) {
  const netpbm::Image img = netpbm::read(path);
  if (img.channels != 3) throw UsageError(path.string() + ": expected an RGB (P6) image");
  netpbm::Image blank{img.width, img.height, 1, 255,
                      std::vector<std::uint16_t>(static_cast<std::size_t>(img.width) * img.height)};
  return make_sample(path.stem().string(), img, blank, blank);
}

TensorF as_batch(const Sample& s) { return s.image.reshape({1, 3, s.height(), s.width()}); }

std::vector<fs::path> list_images(const fs::path& input) {
  if (fs::is_regular_file(input)) return {input};
  if (!fs::is_directory(input)) throw UsageError("no such image or directory: " + input.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input))
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw UsageError("no .ppm images in " + input.string());
  return out;
}

// ---------------------------------------------------------------------------

int cmd_train(const ConfigArgs& args) {
  const RunConfig cfg = args.load();
  DatasetSplit split = load_split(cfg);
  std::vector<Sample> train_set = std::move(split.train);
  if (cfg.train_subset > 0 && static_cast<std::size_t>(cfg.train_subset) < train_set.size())
    train_set.resize(static_cast<std::size_t>(cfg.train_subset));

  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  write_text(out / "run.cfg", cfg.resolved());

  ModelParams<float> params = build<float>(cfg.model, cfg.seed);
  std::ofstream log(out / "train_log.csv");
  log << kEpochCsvHeader << '\n';
  auto on_epoch = [&](const EpochLog& e) {
    write_epoch_csv(log, e);
    log.flush();
    write_epoch_csv(std::cout, e);
  };
  std::cout << kEpochCsvHeader << '\n';

  TrainResult result;
  if (cfg.augment) {
    const AugmentedSet set = augment(train_set, cfg.augment_plan);
    std::cerr << "training on " << set.size() << " augmented images from " << train_set.size()
              << " (" << split.tag() << ")\n";
    result = train(params, SampleSource::of(set), cfg.train, train_set, on_epoch);
  } else {
    std::cerr << "training on " << train_set.size() << " images (" << split.tag() << ")\n";
    result = train(params, SampleSource::of(train_set), cfg.train, train_set, on_epoch);
  }
  std::cerr << "loss weights: background " << result.weights.background << ", vessel "
            << result.weights.vessel << '\n';
  save_checkpoint(params, out / "model.rcn");
  std::cerr << "wrote " << (out / "model.rcn").string() << '\n';
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& out_dir) {
  const ModelParams<float> params = load_checkpoint(checkpoint);
  const std::vector<fs::path> images = list_images(input);
  fs::create_directories(out_dir);
  parallel_for(images.size(), [&](std::size_t i) {
    const Sample s = load_rgb(images[i]);
    const TensorF probs = infer(params, as_batch(s));
    const Index h = s.original_height, w = s.original_width, pw = s.width();
    const Index plane = s.height() * pw;
    netpbm::Image map{static_cast<int>(w), static_cast<int>(h), 1, 65535,
                      std::vector<std::uint16_t>(static_cast<std::size_t>(h * w))};
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double p = std::clamp(static_cast<double>(probs[plane + y * pw + x]), 0.0, 1.0);
        map.samples[static_cast<std::size_t>(y * w + x)] =
            static_cast<std::uint16_t>(std::lround(p * 65535.0));
      }
    netpbm::write(fs::path(out_dir) / (s.id + ".pgm"), map);
  });
  std::cout << "wrote " << images.size() << " probability map(s) to " << out_dir << '\n';
  return 0;
}

int cmd_evaluate(const ConfigArgs& args, const std::string& pred_dir) {
  const RunConfig cfg = args.load();
  const DatasetSplit split = load_split(cfg);
  const fs::path out(cfg.out_dir);

  for (const Sample& s : split.test)
    if (!fs::is_regular_file(fs::path(pred_dir) / (s.id + ".pgm")))
      throw UsageError("missing prediction for test id '" + s.id + "' in " + pred_dir);
  fs::create_directories(out);

  std::vector<TensorF> scores(split.test.size());
  parallel_for(split.test.size(), [&](std::size_t i) {
    const Sample& s = split.test[i];
    const netpbm::Image pred = netpbm::read(fs::path(pred_dir) / (s.id + ".pgm"));
    if (pred.channels != 1 || pred.height != s.original_height || pred.width != s.original_width)
      throw UsageError("prediction '" + s.id + "' must be a " + std::to_string(s.original_width) +
                       "x" + std::to_string(s.original_height) + " graymap");
    TensorF map({s.height(), s.width()});
    const float inv = 1.0f / static_cast<float>(pred.maxval);
    for (int y = 0; y < pred.height; ++y)
      for (int x = 0; x < pred.width; ++x) map[y * s.width() + x] = pred.at(y, x) * inv;
    netpbm::write(out / (s.id + "_overlay.ppm"),
                  render_overlay(binarize(map, cfg.threshold), s.label, s.fov));
    scores[i] = std::move(map);
  });

  MetricsAccumulator acc;
  for (std::size_t i = 0; i < split.test.size(); ++i)
    acc.add(split.test[i].id, scores[i], split.test[i].label, split.test[i].fov, cfg.threshold);
  const MetricsReport report = acc.finish();

  std::ofstream csv(out / "report.csv");
  write_report_csv(csv, report);
  write_text(out / "run.cfg", cfg.resolved());

  std::ostringstream summary;
  summary << split.tag() << " (" << report.images.size() << " images, threshold "
          << cfg.threshold << ")\n";
  auto row = [&](const char* name, const ScalarMetrics& m, const std::optional<double>& auc) {
    summary << name << "  Se " << format_metric(m.se) << "  Sp " << format_metric(m.sp)
            << "  Acc " << format_metric(m.acc) << "  AUC " << format_metric(auc) << "  F1 "
            << format_metric(m.f1) << '\n';
  };
  row("mean  ", report.mean, report.mean_auc);
  row("pooled", report.pooled, report.pooled_auc);
  write_text(out / "summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance, bool layers_only) {
  GradcheckOptions opt;
  opt.tolerance = tolerance;
  bool pass = true;
  for (const NamedReport& r : layer_gradchecks(seed, opt)) {
    std::cout << "== " << r.name << '\n' << r.report;
    pass = pass && r.report.pass();
  }
  if (!layers_only) {
    const CompositeGradcheck full = rcnet_gradcheck(RCNetConfig{}, seed, 16, opt);
    std::cout << "== rcnet 1x3x16x16, eval-mode BN (input seed " << full.input_seed << ", kink margin "
              << full.margin << ")\n"
              << full.report;
    pass = pass && full.report.pass();
  }
  std::cout << (pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  return pass ? 0 : 1;
}

int cmd_params(const ConfigArgs& args) {
  const RunConfig cfg = args.load();
  cfg.model.validate();
  std::int64_t n = 0;
  for (const ParamSpec& p : param_layout(cfg.model))
    if (p.learnable) n += shape_size(p.shape);
  std::cout << n << '\n';
  return 0;
}

int cmd_augment(const ConfigArgs& args, std::size_t limit) {
  const RunConfig cfg = args.load();
  DatasetSplit split = load_split(cfg);
  std::vector<Sample> train_set = std::move(split.train);
  if (cfg.train_subset > 0 && static_cast<std::size_t>(cfg.train_subset) < train_set.size())
    train_set.resize(static_cast<std::size_t>(cfg.train_subset));
  const AugmentedSet set = augment(std::move(train_set), cfg.augment_plan);
  const std::size_t n = limit ? std::min(limit, set.size()) : set.size();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  parallel_for(n, [&](std::size_t i) { write_sample(set.at(i), out); });
  write_text(out / "run.cfg", cfg.resolved());
  std::cout << "augmented set: " << set.size() << " images; wrote " << n << " to " << out.string()
            << '\n';
  return 0;
}

int cmd_dump(const std::string& checkpoint, const std::string& image,
             std::vector<std::string> layers, const std::string& out_dir) {
  ModelParams<float> params = load_checkpoint(checkpoint);
  const std::vector<std::string> known = activation_names(params.config());
  if (layers.empty()) layers = known;
  for (const std::string& l : layers)
    if (std::find(known.begin(), known.end(), l) == known.end()) {
      std::string list;
      for (const std::string& k : known) list += (list.empty() ? "" : ", ") + k;
      throw UsageError("unknown layer '" + l + "'; known layers: " + list);
    }

  const Sample s = load_rgb(image);
  Tape<float> tape;
  const ForwardResult fw = forward(tape, params, as_batch(s), Mode::Eval);
  fs::create_directories(out_dir);
  std::size_t written = 0;
  for (const std::string& l : layers) {
    const TensorF& a = tape.value(*fw.activation(l));
    const Index c = a.dim(1), h = a.dim(2), w = a.dim(3);
    for (Index k = 0; k < c; ++k) {
      const auto plane = a.array().segment(k * h * w, h * w);
      const float lo = plane.minCoeff(), hi = plane.maxCoeff();
      const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
      netpbm::Image img{static_cast<int>(w), static_cast<int>(h), 1, 255,
                        std::vector<std::uint16_t>(static_cast<std::size_t>(h * w))};
      for (Index i = 0; i < h * w; ++i)
        img.samples[static_cast<std::size_t>(i)] =
            static_cast<std::uint16_t>(std::lround((plane[i] - lo) * scale));
      netpbm::write(fs::path(out_dir) / (l + "_c" + std::to_string(k) + ".pgm"), img);
      ++written;
    }
    std::cout << l << ": " << c << " x " << h << "x" << w << '\n';
  }
  std::cout << "wrote " << written << " map(s) to " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rcnet: residual encoder-decoder retinal vessel segmentation"};
  app.require_subcommand(1);

  ConfigArgs train_args, eval_args, params_args, augment_args;

  auto* train_cmd = app.add_subcommand("train", "train a model; writes model.rcn, train_log.csv, run.cfg");
  train_args.attach(train_cmd);

  std::string checkpoint, input, out_dir = "out";
  auto* predict_cmd = app.add_subcommand("predict", "write 16-bit vessel probability maps");
  predict_cmd->add_option("-m,--checkpoint", checkpoint, "model checkpoint")->required();
  predict_cmd->add_option("-i,--input", input, "RGB .ppm image or directory of them")->required();
  predict_cmd->add_option("-o,--out-dir", out_dir, "output directory");

  std::string pred_dir;
  auto* eval_cmd = app.add_subcommand("evaluate", "score probability maps against a test split");
  eval_args.attach(eval_cmd);
  eval_cmd->add_option("-p,--predictions", pred_dir, "directory of <id>.pgm maps")->required();

  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  bool gc_layers_only = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  gc_cmd->add_option("--seed", gc_seed, "initialization and input seed");
  gc_cmd->add_option("--tolerance", gc_tol, "maximum relative error");
  gc_cmd->add_flag("--layers-only", gc_layers_only, "skip the full-network check");

  auto* params_cmd = app.add_subcommand("params", "print the learnable parameter count");
  params_args.attach(params_cmd);

  std::size_t aug_limit = 0;
  auto* augment_cmd = app.add_subcommand("augment", "materialize the augmented training set");
  augment_args.attach(augment_cmd);
  augment_cmd->add_option("--limit", aug_limit, "write only the first N images (0 = all)");

  std::string dump_image, dump_out = "activations";
  std::vector<std::string> dump_layers;
  auto* dump_cmd = app.add_subcommand("dump-activations", "write activation maps as PGMs");
  dump_cmd->add_option("-m,--checkpoint", checkpoint, "model checkpoint")->required();
  dump_cmd->add_option("-i,--image", dump_image, "RGB .ppm image")->required();
  dump_cmd->add_option("-l,--layers", dump_layers, "layer names (default: all)")->delimiter(',');
  dump_cmd->add_option("-o,--out-dir", dump_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*predict_cmd) return cmd_predict(checkpoint, input, out_dir);
    if (*eval_cmd) return cmd_evaluate(eval_args, pred_dir);
    if (*gc_cmd) return cmd_gradcheck(gc_seed, gc_tol, gc_layers_only);
    if (*params_cmd) return cmd_params(params_args);
    if (*augment_cmd) return cmd_augment(augment_args, aug_limit);
    if (*dump_cmd) return cmd_dump(checkpoint, dump_image, dump_layers, dump_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const netpbm::FormatError& e) {
    std::cerr << "image error: " << e.what() << '\n';
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
