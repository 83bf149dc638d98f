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

#include <fstream>

#include "gtest/gtest.h"
#include "ssmflow/train.hpp"
#include "testing.hpp"

namespace ssmflow {
namespace {

using testing::fd_check;
using testing::max_abs_diff;

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.downsample = 4;
  cfg.blocks = 1;
  cfg.state_size = 4;
  cfg.expand = 2;
  cfg.conv_width = 3;
  cfg.mlp_ratio = 2;
  cfg.iterations = 1;
  cfg.hidden_dim = 8;
  cfg.motion_dim = 4;
  cfg.lookup_radius = 1;
  cfg.refiner_depth = 1;
  cfg.pos_height = 4;
  cfg.pos_width = 4;
  cfg.precision = "f64";
  return cfg;
}

TEST(ConfigTest, TextRoundtrip) {
  ModelConfig cfg = tiny_cfg();
  cfg.use_mlp = false;
  cfg.iterations = 3;
  ModelConfig back = ModelConfig::from_text(cfg.to_text());
  EXPECT_TRUE(cfg == back);
  EXPECT_EQ(cfg.first_mismatch(back), "");
}

TEST(ConfigTest, CommentsAndErrors) {
  ModelConfig cfg = ModelConfig::from_text("# comment\n\ndim=32  # trailing\ndownsample=4\n");
  EXPECT_EQ(cfg.dim, 32);
  EXPECT_EQ(cfg.downsample, 4);
  EXPECT_THROW(ModelConfig::from_text("no_such_key=1\n"), ValueError);
  EXPECT_THROW(ModelConfig::from_text("dim=abc\n"), ValueError);
  EXPECT_THROW(ModelConfig::from_text("downsample=3\n"), ValueError);
}

TEST(BackboneTest, SharedWeightsGiveIdenticalFeatures) {
  Rng rng(1);
  Model<double> model = Model<double>::make(tiny_cfg(), 7);
  Tensor<double> img = Tensor<double>::uniform({16, 16, 3}, 0, 1, rng);
  Tensor<double> f1 = model.extract_features(img);
  Tensor<double> f2 = model.extract_features(img.clone());
  EXPECT_EQ(f1.data(), f2.data());
}

TEST(BackboneTest, ShapeArithmetic) {
  Model<double> model = Model<double>::make(tiny_cfg(), 7);
  Rng rng(2);
  Tensor<double> img = Tensor<double>::uniform({16, 24, 3}, 0, 1, rng);
  Tensor<double> f = model.extract_features(img);
  EXPECT_EQ(f.shape(), (Shape{4, 6, 8}));  // 16/4 x 24/4 x D

  ModelConfig cfg8 = tiny_cfg();
  cfg8.downsample = 8;
  Model<double> model8 = Model<double>::make(cfg8, 7);
  Tensor<double> img8 = Tensor<double>::uniform({32, 32, 3}, 0, 1, rng);
  EXPECT_EQ(model8.extract_features(img8).shape(), (Shape{4, 4, 8}));
}

TEST(BackboneTest, IndivisibleDimsSuggestPadding) {
  Model<double> model = Model<double>::make(tiny_cfg(), 7);
  Tensor<double> img = Tensor<double>::zeros({17, 16, 3});
  try {
    model.extract_features(img);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(BackboneTest, GradientFlowsFromFeatureLoss) {
  Model<double> model = Model<double>::make(tiny_cfg(), 7);
  Rng rng(3);
  Tensor<double> img = Tensor<double>::uniform({16, 16, 3}, 0, 1, rng);
  GradTape<double> tape;
  Tensor<double> f = model.extract_features(img);
  tape.backward(sum_all(mul(f, f)));
  ASSERT_TRUE(model.backbone.stem.kernel.has_grad());
  double norm = 0;
  for (double g : model.backbone.stem.kernel.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(ModelForwardTest, OutputShapesAndIterationList) {
  Model<double> model = Model<double>::make(tiny_cfg(), 9);
  Rng rng(4);
  Tensor<double> img1 = Tensor<double>::uniform({16, 16, 3}, 0, 1, rng);
  Tensor<double> img2 = Tensor<double>::uniform({16, 16, 3}, 0, 1, rng);
  ModelOutput<double> out = model.forward(img1, img2);
  EXPECT_EQ(out.flow_image.shape(), (Shape{16, 16, 2}));
  EXPECT_EQ(out.flows.size(), 2u);  // N_iter = 1 plus the initial flow
  EXPECT_EQ(out.flows[0].shape(), (Shape{4, 4, 2}));
  for (double v : out.flow_image.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ModelForwardTest, ZeroIterationsGiveUpsampledMatchingFlow) {
  Model<double> model = Model<double>::make(tiny_cfg(), 9);
  Rng rng(5);
  Tensor<double> img1 = Tensor<double>::uniform({16, 16, 3}, 0, 1, rng);
  Tensor<double> img2 = Tensor<double>::uniform({16, 16, 3}, 0, 1, rng);
  ModelOutput<double> out = model.forward(img1, img2, 0);
  ASSERT_EQ(out.flows.size(), 1u);
  Tensor<double> expected = upsample_flow(out.flows[0], 16, 16);
  EXPECT_EQ(out.flow_image.data(), expected.data());
}

TEST(UpsampleTest, ConstantFieldScalesExactly) {
  Tensor<double> flow = Tensor<double>::zeros({4, 4, 2});
  for (index_t i = 0; i < 4; ++i) {
    for (index_t j = 0; j < 4; ++j) {
      flow.at({i, j, 0}) = 0.5;
      flow.at({i, j, 1}) = -0.25;
    }
  }
  Tensor<double> up = upsample_flow(flow, 16, 16);
  EXPECT_EQ(up.shape(), (Shape{16, 16, 2}));
  for (index_t i = 0; i < 16; ++i) {
    for (index_t j = 0; j < 16; ++j) {
      EXPECT_NEAR(up.at({i, j, 0}), 2.0, 1e-12);   // 0.5 * 4
      EXPECT_NEAR(up.at({i, j, 1}), -1.0, 1e-12);  // -0.25 * 4
    }
  }
}

TEST(SequenceLossTest, ExactPredictionsGiveZero) {
  Rng rng(6);
  Tensor<double> gt = Tensor<double>::uniform({4, 4, 2}, -2, 2, rng);
  std::vector<Tensor<double>> flows{gt.clone(), gt.clone(), gt.clone()};
  EXPECT_DOUBLE_EQ(sequence_loss(flows, gt, 0.8).item(), 0.0);
}

TEST(SequenceLossTest, UnitOffsetHandEvaluation) {
  Rng rng(7);
  Tensor<double> gt = Tensor<double>::uniform({4, 4, 2}, -2, 2, rng);
  Tensor<double> off = gt.clone();
  for (index_t i = 0; i < 4; ++i) {
    for (index_t j = 0; j < 4; ++j) off.at({i, j, 0}) += 1.0;  // offset (1, 0)
  }
  // N = 1: initial prediction exact, refined prediction off by one pixel
  std::vector<Tensor<double>> flows{gt.clone(), off};
  EXPECT_NEAR(sequence_loss(flows, gt, 0.8).item(), 1.0, 1e-12);
}

TEST(SequenceLossTest, GammaWeightsIterations) {
  Rng rng(8);
  Tensor<double> gt = Tensor<double>::zeros({4, 4, 2});
  Tensor<double> off = gt.clone();
  for (index_t i = 0; i < 4; ++i) {
    for (index_t j = 0; j < 4; ++j) off.at({i, j, 0}) += 1.0;
  }
  // loss(off at i) / loss(off at i+1) = gamma
  std::vector<Tensor<double>> early{off, gt.clone(), gt.clone()};
  std::vector<Tensor<double>> late{gt.clone(), off, gt.clone()};
  const double ratio = sequence_loss(early, gt, 0.8).item() / sequence_loss(late, gt, 0.8).item();
  EXPECT_NEAR(ratio, 0.8, 1e-12);
  EXPECT_THROW(sequence_loss(early, gt, 0.0), ValueError);
  EXPECT_THROW(sequence_loss(early, gt, 1.5), ValueError);
  std::vector<Tensor<double>> bad{Tensor<double>::zeros({2, 2, 2})};
  EXPECT_THROW(sequence_loss(bad, gt, 0.8), ShapeError);
}

TEST(WeightStoreTest, RoundtripBitExact) {
  Model<float> model = Model<float>::make([] {
    ModelConfig c = tiny_cfg();
    c.precision = "f32";
    return c;
  }(), 11);
  WeightStore store = model.to_store();
  const std::string path = ::testing::TempDir() + "/weights.ssmf";
  save_weights(store, path);
  WeightStore back = load_weights(path);
  ASSERT_EQ(back.tensors.size(), store.tensors.size());
  EXPECT_EQ(back.config_text, store.config_text);
  for (std::size_t i = 0; i < store.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].first, store.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape(), store.tensors[i].second.shape());
    EXPECT_EQ(back.tensors[i].second.data(), store.tensors[i].second.data());
  }
  // loading into a fresh model reproduces the parameters bit-exactly
  Model<float> fresh = Model<float>::make(store.config(), 999);
  fresh.load_store(back);
  WeightStore again = fresh.to_store();
  for (std::size_t i = 0; i < store.tensors.size(); ++i) {
    EXPECT_EQ(again.tensors[i].second.data(), store.tensors[i].second.data());
  }
}

TEST(WeightStoreTest, FaultInjection) {
  Model<float> model = Model<float>::make([] {
    ModelConfig c = tiny_cfg();
    c.precision = "f32";
    return c;
  }(), 11);
  const std::string path = ::testing::TempDir() + "/weights_fault.ssmf";
  save_weights(model.to_store(), path);

  // truncation: drop the tail
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string cut = ::testing::TempDir() + "/weights_cut.ssmf";
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    EXPECT_THROW(load_weights(cut), TruncationError);
  }
  // bad magic
  {
    const std::string bad = ::testing::TempDir() + "/weights_bad.ssmf";
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE then some bytes";
    out.close();
    EXPECT_THROW(load_weights(bad), FormatError);
  }
}

TEST(WeightStoreTest, ConfigMismatchNamesField) {
  ModelConfig c32 = tiny_cfg();
  c32.precision = "f32";
  Model<float> model = Model<float>::make(c32, 11);
  WeightStore store = model.to_store();
  ModelConfig other = c32;
  other.hidden_dim = 16;
  Model<float> target = Model<float>::make(other, 11);
  try {
    target.load_store(store);
    FAIL() << "expected ConfigMismatchError";
  } catch (const ConfigMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("hidden_dim"), std::string::npos);
  }
}

TEST(ParamAuditTest, ComponentToggleOrdering) {
  ModelConfig cfg = tiny_cfg();
  cfg.blocks = 2;
  auto count = [&](auto mutate) {
    ModelConfig c = cfg;
    mutate(c);
    Model<double> m = Model<double>::make(c, 1);
    return m.parameter_count();
  };
  const index_t full = count([](ModelConfig&) {});
  const index_t no_mlp = count([](ModelConfig& c) { c.use_mlp = false; });
  const index_t no_cross = count([](ModelConfig& c) { c.use_cross = false; });
  const index_t no_self = count([](ModelConfig& c) { c.use_self = false; });
  const index_t no_pos = count([](ModelConfig& c) { c.use_pos = false; });
  EXPECT_GT(full, no_mlp);
  EXPECT_GT(no_mlp, no_cross);
  EXPECT_GT(full, no_self);
  EXPECT_GT(full, no_pos);
}

TEST(ParamAuditTest, DepthMonotonicity) {
  index_t prev = 0;
  for (index_t blocks : {4, 6, 8, 10, 12}) {
    ModelConfig cfg = tiny_cfg();
    cfg.blocks = blocks;
    Model<double> m = Model<double>::make(cfg, 1);
    const index_t n = m.parameter_count();
    EXPECT_GT(n, prev) << "blocks=" << blocks;
    prev = n;
  }
}

TEST(EndToEndGradientTest, SixteenBySixteenPair) {
  Model<double> model = Model<double>::make(tiny_cfg(), 21);
  Rng rng(9);
  Tensor<double> img1 = Tensor<double>::uniform({16, 16, 3}, 0.2, 0.8, rng);
  Tensor<double> img2 = Tensor<double>::uniform({16, 16, 3}, 0.2, 0.8, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    ModelOutput<double> out = model.forward(in[0], in[1]);
    Rng wrng(10);
    Tensor<double> w = Tensor<double>::uniform(out.flow_image.shape(), 0.1, 1.0, wrng);
    return sum_all(mul(out.flow_image, w));
  };
  // spot-check a sample of image coordinates at the end-to-end tolerance
  EXPECT_TRUE(fd_check(fn, {img1, img2}, 1e-5, 1e-3, 1e-6, 24).empty());
  // and a sample of parameters across the stages
  img1.set_requires_grad(false);
  img2.set_requires_grad(false);
  auto fn_params = [&](const std::vector<Tensor<double>>&) {
    ModelOutput<double> out = model.forward(img1, img2);
    Rng wrng(10);
    Tensor<double> w = Tensor<double>::uniform(out.flow_image.shape(), 0.1, 1.0, wrng);
    return sum_all(mul(out.flow_image, w));
  };
  EXPECT_TRUE(fd_check(fn_params,
                       {model.backbone.stem.kernel, model.pos.emb,
                        model.enhancer.blocks[0].cross_12.fwd.joint.weight,
                        model.refiner.head2.kernel, model.refiner.aggregator.attn2.bias},
                       1e-5, 1e-3, 1e-6, 10)
                  .empty());
}

TEST(TrainToyTest, LearningRateZeroKeepsWeightsAndMetricsFlat) {
  ModelConfig cfg = tiny_cfg();
  Model<double> model = Model<double>::make(cfg, 31);
  WeightStore before = model.to_store();
  TrainOptions<double> opt;
  opt.steps = 5;
  opt.lr = 0;
  opt.weight_decay = 0;
  opt.dataset_size = 10;
  opt.image_size = 16;
  opt.max_disp = 2;
  opt.eval_interval = 5;
  ToyDataset<double> ds = make_toy_dataset(opt);
  TrainResult r = train_toy(model, ds, opt);
  EXPECT_FALSE(r.diverged);
  EXPECT_DOUBLE_EQ(r.initial_epe, r.final_epe);
  WeightStore after = model.to_store();
  for (std::size_t i = 0; i < before.tensors.size(); ++i) {
    EXPECT_EQ(before.tensors[i].second.data(), after.tensors[i].second.data());
  }
}

TEST(TrainToyTest, FixedSeedGivesBitIdenticalLogs) {
  auto run = [] {
    ModelConfig cfg = tiny_cfg();
    Model<double> model = Model<double>::make(cfg, 33);
    TrainOptions<double> opt;
    opt.steps = 8;
    opt.lr = 1e-3;
    opt.dataset_size = 10;
    opt.image_size = 16;
    opt.max_disp = 2;
    opt.eval_interval = 4;
    ToyDataset<double> ds = make_toy_dataset(opt);
    TrainResult r = train_toy(model, ds, opt);
    return train_log_csv(r.log);
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainToyTest, ShortRunImprovesLoss) {
  ModelConfig cfg = tiny_cfg();
  cfg.dim = 12;
  Model<double> model = Model<double>::make(cfg, 35);
  TrainOptions<double> opt;
  opt.steps = 40;
  opt.lr = 2e-3;
  opt.dataset_size = 20;
  opt.image_size = 16;
  opt.max_disp = 2;
  opt.eval_interval = 40;
  ToyDataset<double> ds = make_toy_dataset(opt);
  TrainResult r = train_toy(model, ds, opt);
  EXPECT_FALSE(r.diverged) << r.message;
  EXPECT_LT(r.final_epe, r.initial_epe);  // even a short run should move the needle
}

}  // namespace
}  // namespace ssmflow
