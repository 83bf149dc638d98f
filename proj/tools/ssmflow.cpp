// Copyright 2026 the ssmflow authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "ssmflow/bench.hpp"
#include "ssmflow/flowio.hpp"
#include "ssmflow/gradcheck.hpp"
#include "ssmflow/selfcheck.hpp"
#include "ssmflow/train.hpp"

namespace {

using namespace ssmflow;

// exit codes: 0 success, 1 validation failure, 2 internal error
constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kInternal = 2;

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
}

ModelConfig default_toy_config(index_t image_size) {
  ModelConfig cfg;
  cfg.dim = 64;
  cfg.downsample = 4;
  cfg.blocks = 2;
  cfg.state_size = 16;
  cfg.expand = 2;
  cfg.conv_width = 4;
  cfg.mlp_ratio = 4;
  cfg.iterations = 2;
  cfg.hidden_dim = 64;
  cfg.motion_dim = 32;
  cfg.lookup_radius = 4;
  cfg.pos_height = image_size / cfg.downsample;
  cfg.pos_width = image_size / cfg.downsample;
  cfg.precision = "f32";
  return cfg;
}

struct InferArgs {
  std::string weights, img1, img2, out, viz;
  index_t iters = -1;
};

template <typename T>
int run_infer_typed(const InferArgs& args, const WeightStore& store, const ModelConfig& cfg) {
  Model<T> model = Model<T>::make(cfg, 0);
  model.load_store(store);

  Image a = read_image(args.img1);
  Image b = read_image(args.img2);
  if (a.width != b.width || a.height != b.height) {
    throw ValueError("image sizes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  Tensor<T> t1 = image_to_tensor<T>(a);
  Tensor<T> t2 = image_to_tensor<T>(b);

  StageTimes times;
  ModelOutput<T> out = model.forward(t1, t2, args.iters, &times);
  write_flo(out.flow_image, args.out);
  if (!args.viz.empty()) write_image(flow_to_color(out.flow_image), args.viz);

  std::vector<double> mags;
  for (index_t i = 0; i < out.flow_image.extent(0); ++i) {
    for (index_t j = 0; j < out.flow_image.extent(1); ++j) {
      mags.push_back(std::hypot(double(out.flow_image.at({i, j, 0})),
                                double(out.flow_image.at({i, j, 1}))));
    }
  }
  std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
  const double total = times.backbone_ms + times.enhancer_ms + times.matching_ms + times.refiner_ms;
  std::printf("stage timings (ms): backbone %.2f | enhancer %.2f | matching %.2f | refiner %.2f | total %.2f\n",
              times.backbone_ms, times.enhancer_ms, times.matching_ms, times.refiner_ms, total);
  std::printf("flow written to %s (median |V| = %.3f px)\n", args.out.c_str(), mags[mags.size() / 2]);
  return kOk;
}

int run_infer(const InferArgs& args) {
  if (!std::filesystem::exists(args.weights)) {
    throw IoError("weights file not found: " + args.weights);
  }
  WeightStore store = load_weights(args.weights);
  ModelConfig cfg = store.config();
  if (cfg.precision == "f64") return run_infer_typed<double>(args, store, cfg);
  return run_infer_typed<float>(args, store, cfg);
}

struct TrainArgs {
  std::string config_path, out, log;
  index_t steps = 1200;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  index_t size = 32;
  double max_disp = 4.0;
  index_t dataset_size = 200;
  bool rotations = false;
  index_t eval_interval = 100;
};

template <typename T>
int run_train_typed(const TrainArgs& args, const ModelConfig& cfg) {
  TrainOptions<T> opt;
  opt.steps = args.steps;
  opt.lr = static_cast<T>(args.lr);
  opt.data_seed = args.seed + 1;
  opt.dataset_size = args.dataset_size;
  opt.image_size = args.size;
  opt.max_disp = static_cast<T>(args.max_disp);
  opt.rotations = args.rotations;
  opt.eval_interval = args.eval_interval;

  Model<T> model = Model<T>::make(cfg, args.seed);
  const std::string log_path = args.log.empty() ? args.out + ".csv" : args.log;

  if (args.steps == 0) {
    save_weights(model.to_store(), args.out);
    write_text_file(args.out + ".config", cfg.to_text());
    write_text_file(log_path, "step,epe,f1_all,s40\n");
    std::printf("wrote initialized weights to %s (no training steps)\n", args.out.c_str());
    return kOk;
  }

  ToyDataset<T> ds = make_toy_dataset(opt);
  TrainResult result = train_toy(model, ds, opt);

  save_weights(model.to_store(), args.out);
  write_text_file(args.out + ".config", cfg.to_text());
  write_text_file(log_path, train_log_csv(result.log));

  std::printf("holdout EPE: initial %.4f -> final %.4f px over %lld steps\n", result.initial_epe,
              result.final_epe, static_cast<long long>(args.steps));
  std::printf("weights: %s | config: %s | log: %s\n", args.out.c_str(),
              (args.out + ".config").c_str(), log_path.c_str());
  if (result.diverged) {
    std::fprintf(stderr, "training diverged: %s (last good checkpoint saved)\n",
                 result.message.c_str());
    return kInternal;
  }
  return kOk;
}

int run_train(const TrainArgs& args) {
  ModelConfig cfg;
  if (!args.config_path.empty()) {
    cfg = ModelConfig::from_text(read_text_file(args.config_path));
  } else {
    cfg = default_toy_config(args.size);
  }
  if (args.size % cfg.downsample != 0) {
    throw ValueError("--size must be divisible by the backbone stride " +
                     std::to_string(cfg.downsample));
  }
  if (cfg.precision == "f64") return run_train_typed<double>(args, cfg);
  return run_train_typed<float>(args, cfg);
}

int run_bench(index_t max_len, index_t state, const std::string& out_csv) {
  if (max_len < 2048) throw ValueError("--max-len must be at least 2048 to measure a doubling");
  const index_t D = 8;
  auto rows = bench_scan(max_len, state, D);
  const std::string csv = bench_csv(rows);
  if (!out_csv.empty()) write_text_file(out_csv, csv);
  std::fputs(csv.c_str(), stdout);
  for (const char* form : {"sequential", "parallel", "kernel"}) {
    auto ratios = doubling_ratios(rows, form);
    if (ratios.empty()) continue;
    std::printf("%s doubling ratios:", form);
    for (auto [L, r] : ratios) std::printf(" L=%lld: %.2f", static_cast<long long>(L), r);
    std::printf("\n");
  }
  return kOk;
}

int run_gradcheck(const std::string& scope) {
  std::vector<GradCheckReport> reports;
  if (scope == "primitives") {
    reports = gradcheck_primitives();
  } else if (scope == "blocks") {
    reports = gradcheck_blocks();
  } else if (scope == "end2end") {
    reports = gradcheck_end2end();
  } else {
    throw ValueError("unknown gradcheck scope '" + scope + "'");
  }
  int failures = 0;
  for (const auto& r : reports) {
    std::printf("[%s] %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : ": ", r.detail.c_str());
    if (!r.passed) ++failures;
  }
  std::printf("%zu checks, %d failed\n", reports.size(), failures);
  return failures == 0 ? kOk : kValidation;
}

int run_selftest() {
  auto checks = all_self_checks();
  int failures = 0;
  for (const auto& c : checks) {
    try {
      c.run();
      std::printf("[PASS] %s\n", c.name.c_str());
    } catch (const std::exception& e) {
      std::printf("[FAIL] %s: %s\n", c.name.c_str(), e.what());
      ++failures;
    }
  }
  std::printf("%zu checks, %d failed\n", checks.size(), failures);
  return failures == 0 ? kOk : kValidation;
}

int run_viz(const std::string& flo_path, const std::string& out_path) {
  Tensor<float> flow = read_flo<float>(flo_path);
  write_image(flow_to_color(flow), out_path);
  std::printf("rendered %s -> %s\n", flo_path.c_str(), out_path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssmflow: selective state-space optical flow (scan kernels, global matching, "
               "iterative refinement)"};
  app.require_subcommand(1);

  InferArgs infer_args;
  CLI::App* infer = app.add_subcommand("infer", "estimate flow for an image pair");
  infer->add_option("--weights", infer_args.weights, "weight file (SSMF)")->required();
  infer->add_option("--img1", infer_args.img1, "first frame (PPM or PNG)")->required();
  infer->add_option("--img2", infer_args.img2, "second frame (PPM or PNG)")->required();
  infer->add_option("--out", infer_args.out, "output .flo path")->required();
  infer->add_option("--viz", infer_args.viz, "optional colour rendering (PNG/PPM)");
  infer->add_option("--iters", infer_args.iters, "override refinement iterations (0 = matching only)");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train-toy", "train on procedural data at desk scale");
  train->add_option("--config", train_args.config_path, "model config (key=value file)");
  train->add_option("--steps", train_args.steps, "optimizer steps")->capture_default_str();
  train->add_option("--seed", train_args.seed, "seed for init and data")->capture_default_str();
  train->add_option("--out", train_args.out, "output weight file")->required();
  train->add_option("--log", train_args.log, "metric CSV path (default <out>.csv)");
  train->add_option("--lr", train_args.lr, "learning rate")->capture_default_str();
  train->add_option("--size", train_args.size, "image size")->capture_default_str();
  train->add_option("--max-disp", train_args.max_disp, "max displacement, px")->capture_default_str();
  train->add_option("--dataset-size", train_args.dataset_size, "sample count (80/20 split)")
      ->capture_default_str();
  train->add_flag("--rotations", train_args.rotations, "mix small rotations into the motions");
  train->add_option("--eval-interval", train_args.eval_interval, "steps between holdout evals")
      ->capture_default_str();

  index_t bench_max_len = 16384;
  index_t bench_state = 16;
  std::string bench_out;
  CLI::App* bench = app.add_subcommand("bench-scan", "time the scan forms over doubling lengths");
  bench->add_option("--max-len", bench_max_len, "largest sequence length")->capture_default_str();
  bench->add_option("--state", bench_state, "SSM state size N")->capture_default_str();
  bench->add_option("--out", bench_out, "CSV output path");

  std::string grad_scope = "primitives";
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  grad->add_option("--scope", grad_scope, "primitives | blocks | end2end")->capture_default_str();

  CLI::App* selftest = app.add_subcommand("selftest", "run the built-in oracle checks");

  std::string viz_flo, viz_out;
  CLI::App* viz = app.add_subcommand("viz", "render a .flo file to an image");
  viz->add_option("--flo", viz_flo, "input .flo")->required();
  viz->add_option("--out", viz_out, "output image (PNG/PPM)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (infer->parsed()) return run_infer(infer_args);
    if (train->parsed()) return run_train(train_args);
    if (bench->parsed()) return run_bench(bench_max_len, bench_state, bench_out);
    if (grad->parsed()) return run_gradcheck(grad_scope);
    if (selftest->parsed()) return run_selftest();
    if (viz->parsed()) return run_viz(viz_flo, viz_out);
  } catch (const ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const CapacityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kOk;
}
