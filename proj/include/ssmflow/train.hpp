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

#pragma once

#include <cmath>

#include "ssmflow/metrics.hpp"
#include "ssmflow/model.hpp"
#include "ssmflow/synthetic.hpp"

// Desk-scale training on procedural data. One sequential loop, deterministic
// under a fixed seed; nothing here aims at benchmark reproduction.

namespace ssmflow {

template <typename T>
struct TrainOptions {
  index_t steps = 1200;
  T lr = T(1e-3);
  T weight_decay = T(1e-5);
  T gamma = T(0.8);  // sequence-loss decay
  std::uint64_t data_seed = 1;
  index_t dataset_size = 200;   // split 80/20 into train/holdout
  index_t image_size = 32;
  T max_disp = T(4);
  bool rotations = false;
  index_t eval_interval = 100;
};

struct TrainLogRow {
  index_t step = 0;
  double loss = 0;
  double epe = 0;
  double f1 = 0;
  double s40 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  bool diverged = false;
  std::string message;
  std::vector<TrainLogRow> log;
  double initial_epe = 0;  // holdout EPE before any update
  double final_epe = 0;
};

template <typename T>
struct ToyDataset {
  std::vector<FlowSample<T>> train;
  std::vector<FlowSample<T>> holdout;
};

template <typename T>
ToyDataset<T> make_toy_dataset(const TrainOptions<T>& opt) {
  SyntheticOptions<T> sopt;
  sopt.size = opt.image_size;
  sopt.max_disp = opt.max_disp;
  sopt.rotations = opt.rotations;
  auto samples = gen_synthetic<T>(opt.data_seed, opt.dataset_size, sopt);
  ToyDataset<T> ds;
  const std::size_t split = static_cast<std::size_t>(opt.dataset_size * 4 / 5);
  ds.train.assign(samples.begin(), samples.begin() + split);
  ds.holdout.assign(samples.begin() + split, samples.end());
  return ds;
}

/// Mean holdout EPE of the final (image-resolution) flow.
template <typename T>
double eval_epe(Model<T>& model, const std::vector<FlowSample<T>>& samples) {
  double sum = 0;
  for (const auto& s : samples) {
    ModelOutput<T> out = model.forward(s.img1, s.img2);
    sum += static_cast<double>(epe(out.flow_image, s.gt));
  }
  return sum / static_cast<double>(samples.size());
}

template <typename T>
TrainLogRow eval_metrics(Model<T>& model, const std::vector<FlowSample<T>>& samples, index_t step,
                         double loss) {
  TrainLogRow row;
  row.step = step;
  row.loss = loss;
  double epe_sum = 0, f1_sum = 0, s40_sum = 0;
  index_t s40_count = 0;
  for (const auto& s : samples) {
    ModelOutput<T> out = model.forward(s.img1, s.img2);
    epe_sum += static_cast<double>(epe(out.flow_image, s.gt));
    f1_sum += static_cast<double>(f1_all(out.flow_image, s.gt));
    if (auto v = s40(out.flow_image, s.gt)) {
      s40_sum += static_cast<double>(*v);
      ++s40_count;
    }
  }
  row.epe = epe_sum / static_cast<double>(samples.size());
  row.f1 = f1_sum / static_cast<double>(samples.size());
  row.s40 = s40_count > 0 ? s40_sum / static_cast<double>(s40_count)
                          : std::numeric_limits<double>::quiet_NaN();
  return row;
}

/// Runs the toy loop in place. On divergence the model holds the last good
/// parameters and the result reports what happened.
template <typename T>
TrainResult train_toy(Model<T>& model, const ToyDataset<T>& ds, const TrainOptions<T>& opt) {
  TrainResult result;
  NamedParams<T> params = model.named_parameters();
  AdamW<T> optimizer(opt.lr, T(0.9), T(0.999), T(1e-8), opt.weight_decay);

  result.initial_epe = eval_epe(model, ds.holdout);
  {
    TrainLogRow row = eval_metrics(model, ds.holdout, 0, 0.0);
    result.log.push_back(row);
  }

  const index_t ntrain = static_cast<index_t>(ds.train.size());
  for (index_t step = 1; step <= opt.steps; ++step) {
    const FlowSample<T>& sample = ds.train[static_cast<std::size_t>((step - 1) % ntrain)];
    double loss_value = 0;
    {
      GradTape<T> tape;
      ModelOutput<T> out = model.forward(sample.img1, sample.img2);
      std::vector<Tensor<T>> flows_full;
      flows_full.reserve(out.flows.size());
      for (const auto& f : out.flows) {
        flows_full.push_back(upsample_flow(f, sample.gt.extent(0), sample.gt.extent(1)));
      }
      Tensor<T> loss = sequence_loss(flows_full, sample.gt, opt.gamma);
      loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        result.diverged = true;
        result.message = "loss became non-finite at step " + std::to_string(step);
        break;
      }
      tape.backward(loss);
    }
    try {
      optimizer.step(params);
    } catch (const NonFiniteGradientError& e) {
      result.diverged = true;
      result.message = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    if (step % opt.eval_interval == 0 || step == opt.steps) {
      result.log.push_back(eval_metrics(model, ds.holdout, step, loss_value));
    }
  }
  result.final_epe = result.log.back().epe;
  return result;
}

inline std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << "step,epe,f1_all,s40\n";
  for (const auto& row : log) {
    os << row.step << "," << row.epe << "," << row.f1 << ",";
    if (std::isfinite(row.s40)) {
      os << row.s40;
    } else {
      os << "nan";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace ssmflow
