#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lfhn;

namespace {

// Three classes of 10x10 RGB images, each a distinct constant color plus noise.
std::vector<LabeledSample> toy_samples(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledSample> out;
  for (std::size_t id = 0; id < 3; ++id)
    for (std::size_t k = 0; k < per_class; ++k) {
      Tensor img = oracle::random({10, 10, 3}, rng, 0.0, 0.2);
      for (std::size_t i = id; i < img.size(); i += 3) img[i] += 0.7;
      out.push_back({std::move(img), id, k % 13, k % 8, sample_filename(id, k % 13, k % 8, 3)});
    }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST(Sgd, MatchesScalarRecurrence) {
  std::mt19937_64 rng(1);
  std::map<std::string, Tensor> params{{"w", oracle::random({5}, rng)}};
  const Tensor start = params["w"];
  std::vector<Tensor> grads;
  for (int step = 0; step < 6; ++step) grads.push_back(oracle::random({5}, rng));
  SgdState state;
  for (const Tensor& g : grads) sgd_step(params, GradientRegistry{{"w", g}}, state, 0.05, 0.9);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> seq;
    for (const Tensor& g : grads) seq.push_back(g[i]);
    EXPECT_DOUBLE_EQ(params["w"][i], oracle::sgd_scalar(start[i], seq, 0.05, 0.9));
  }
}

TEST(Sgd, RejectsUnknownFrozenOrMissing) {
  NetworkGraph net = build_lfhn(tiny_config());
  SgdState state;
  EXPECT_THROW(sgd_step(net, GradientRegistry{{"nope", Tensor({1})}}, state, 0.1, 0.0), config_error);
  std::mt19937_64 rng(0);
  GradientRegistry full =
      loss_and_gradients(net, oracle::random({1, 8, 8, 3}, rng), std::vector<std::size_t>{0}).grads;
  GradientRegistry partial = full;
  partial.erase("fc7.bias");
  EXPECT_THROW(sgd_step(net, partial, state, 0.1, 0.0), config_error);
  net.set_frozen(root_group, true);
  EXPECT_THROW(sgd_step(net, full, state, 0.1, 0.0), config_error);
}

TEST(Augment, CropIsAWindowAndMirrorIsAnInvolution) {
  std::mt19937_64 rng(4);
  const Tensor img = oracle::random({9, 11, 3}, rng);
  for (int t = 0; t < 50; ++t) {
    const AugmentDraw d = draw_augmentation(rng, img.shape(), 6, 7);
    EXPECT_LE(d.offset_y, 3u);
    EXPECT_LE(d.offset_x, 4u);
    const Tensor crop = apply_augmentation(img, d, 6, 7);
    const Tensor upright = d.mirror ? mirror(crop) : crop;
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 7; ++x)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(upright(y, x, c), img(d.offset_y + y, d.offset_x + x, c));
  }
  EXPECT_EQ(mirror(mirror(img)), img);
  EXPECT_EQ(center_draw(img.shape(), 6, 7), (AugmentDraw{1, 2, false}));
  EXPECT_THROW(center_crop(img, 10, 4), config_error);
}

TEST(Augment, BothMirrorStatesOccur) {
  std::mt19937_64 rng(5);
  int mirrored = 0;
  for (int t = 0; t < 200; ++t) mirrored += draw_augmentation(rng, {76, 76, 3}, 67, 67).mirror;
  EXPECT_GT(mirrored, 60);
  EXPECT_LT(mirrored, 140);
}

TEST(Train, LearnsToyProblemAndIsDeterministic) {
  const auto samples = toy_samples(8, 3);
  const auto idx = all_indices(samples.size());
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 6;
  cfg.epochs = 40;
  cfg.seed = 11;
  NetworkGraph a = build_lfhn(tiny_config(), 1), b = build_lfhn(tiny_config(), 1);
  const TrainResult ra = train(a, samples, idx, cfg);
  const TrainResult rb = train(b, samples, idx, cfg);
  EXPECT_EQ(ra.log, rb.log);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  EXPECT_LT(ra.log.back().mean_loss, ra.log.front().mean_loss);
  EXPECT_EQ(ra.log.back().train_accuracy, 1.0);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto samples = toy_samples(3, 4);
  NetworkGraph net = build_lfhn(tiny_config(), 2);
  const auto before = serialize_checkpoint(net);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  const TrainResult r = train(net, samples, all_indices(samples.size()), cfg);
  EXPECT_EQ(r.log.size(), 2u);
  EXPECT_EQ(serialize_checkpoint(net), before);
}

TEST(Train, FrozenRootKeepsBytesOthersMove) {
  const auto samples = toy_samples(4, 5);
  NetworkGraph net = build_lfhn(tiny_config(), 3);
  const NetworkGraph before = net;
  TrainConfig cfg;
  cfg.freeze_root = true;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  train(net, samples, all_indices(samples.size()), cfg);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const Parameter& p = net.parameters()[i];
    if (p.group == root_group)
      EXPECT_EQ(p.value, before.parameters()[i].value) << p.name;
    else
      EXPECT_NE(p.value, before.parameters()[i].value) << p.name;
  }
}

TEST(Train, StopsAtTargetAccuracyAndOnCallback) {
  const auto samples = toy_samples(6, 6);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 6;
  cfg.epochs = 100;
  cfg.stop_at_accuracy = 1.0;
  NetworkGraph net = build_lfhn(tiny_config(), 1);
  const TrainResult r = train(net, samples, all_indices(samples.size()), cfg);
  ASSERT_FALSE(r.log.empty());
  EXPECT_LT(r.log.size(), 100u);
  EXPECT_EQ(r.log.back().train_accuracy, 1.0);

  cfg.stop_at_accuracy = 0.0;
  NetworkGraph again = build_lfhn(tiny_config(), 1);
  const TrainResult cut = train(again, samples, all_indices(samples.size()), cfg,
                                [](const EpochStats& s) { return s.epoch < 3; });
  EXPECT_EQ(cut.log.size(), 3u);
}

TEST(Train, RejectsBadInputs) {
  auto samples = toy_samples(2, 7);
  NetworkGraph net = build_lfhn(tiny_config());
  TrainConfig cfg;
  EXPECT_THROW(train(net, samples, std::vector<std::size_t>{}, cfg), data_error);
  samples[0].identity = 3;
  EXPECT_THROW(train(net, samples, all_indices(samples.size()), cfg), data_error);
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), config_error);
}

TEST(Train, EpochCsv) {
  EXPECT_EQ(format_epoch_csv(EpochStats{3, 0.5, 0.25}), "3,0.5,0.25");
  EXPECT_STREQ(epoch_log_header, "epoch,mean_loss,train_acc");
}

TEST(GradCheck, EveryLayerPassesAwayFromKinks) {
  for (const auto& [which, name] : layer_check_names()) {
    const GradReport r = check_layer(which, 3);
    EXPECT_FALSE(r.entries.empty()) << name;
    for (const auto& [entry, e] : r.entries) {
      EXPECT_GT(e.checked, 0u) << entry;
      EXPECT_LT(e.max_rel_error, 1e-6) << entry;
    }
  }
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-12), 1e-12 / 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

// A deliberately wrong gradient must be caught.
TEST(GradCheck, DetectsWrongGradient) {
  GradEntry e;
  e.tolerance = 1e-5;
  record(e, 0, 1.0, 1.0);
  EXPECT_TRUE(e.passed());
  record(e, 1, 1.1, 1.0);
  EXPECT_FALSE(e.passed());
  EXPECT_EQ(e.worst_index, 1u);
}
