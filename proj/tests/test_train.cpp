#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uformer/checkpoint.hpp"
#include "uformer/optim.hpp"
#include "uformer/reconstruct.hpp"
#include "uformer/train.hpp"

using namespace uformer;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test, removed on teardown.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    dir_ = fs::temp_directory_path() /
           ("uformer_train_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(dir_);
  }
  ~TempDir() { fs::remove_all(dir_); }
  std::string operator/(const std::string& name) const {
    return (dir_ / name).string();
  }

 private:
  fs::path dir_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Literal reference for one Adam coordinate, kept deliberately scalar so the
// vectorised library update has something independent to disagree with.
struct ScalarAdam {
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  long long t = 0;

  double next(double w, double g) {
    t += 1;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mh = m / (1.0 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(b2, static_cast<double>(t)));
    return w - lr * mh / (std::sqrt(vh) + eps);
  }
};

double grad_norm_oracle(const ParameterStore<double>& store) {
  double acc = 0.0;
  for (const auto& slot : store) {
    if (!slot.trainable) continue;
    for (std::int64_t i = 0; i < slot.grad.numel(); ++i)
      acc += slot.grad[i] * slot.grad[i];
  }
  return std::sqrt(acc);
}

// The halving rule, restated as a fold over the loss stream.
double lr_rule_oracle(const std::vector<double>& losses, double lr0) {
  double lr = lr0, best = 1e300;
  for (double l : losses) {
    if (l < best)
      best = l;
    else
      lr /= 2.0;
  }
  return lr;
}

ParameterStore<double> two_tensor_store() {
  ParameterStore<double> store;
  store.add("a", Tensor<double>({4}));
  store.add("b", Tensor<double>({2, 3}));
  store.add("stats", Tensor<double>({3}), /*trainable=*/false);
  return store;
}

// Short synthetic corpora so the loop never touches the filesystem.
template <std::floating_point T>
std::pair<Corpus<T>, Corpus<T>> tiny_corpora(std::int64_t rate) {
  auto speech = synthetic_corpus<T>(SourceKind::speech, 3, rate / 2, rate, 71);
  auto noise = synthetic_corpus<T>(SourceKind::noise, 3, rate / 2, rate, 72);
  return {std::move(speech), std::move(noise)};
}

// Training config small enough for a few full steps per second.
UformerConfig loop_config() {
  UformerConfig cfg = tiny_config();
  cfg.data.chunk_seconds = 0.25;
  cfg.data.rir_max_order = 4;
  cfg.data.rt60_min = 0.2;
  cfg.data.rt60_max = 0.4;
  cfg.train.epochs = 2;
  cfg.train.steps_per_epoch = 2;
  cfg.train.batch_size = 2;
  cfg.train.seed = 9;
  cfg.validate();
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Gradient clipping
// ---------------------------------------------------------------------------

TEST(ClipGradients, LeavesSmallGradientsUntouched) {
  auto store = two_tensor_store();
  for (std::int64_t i = 0; i < 4; ++i) store.at(0).grad[i] = 1.5;
  // Norm 3 against a threshold of 5: nothing may change, not even in the
  // last bit.
  EXPECT_DOUBLE_EQ(clip_gradients(store, 5.0), 3.0);
  for (std::int64_t i = 0; i < 4; ++i)
    EXPECT_EQ(store.at(0).grad[i], 1.5);
}

TEST(ClipGradients, RescalesDownToTheThreshold) {
  auto store = two_tensor_store();
  store.at(0).grad[0] = 6.0;
  store.at(0).grad[1] = 8.0;
  store.at(2).grad[0] = 1e9;  // non-trainable, must not count or change

  EXPECT_DOUBLE_EQ(clip_gradients(store, 5.0), 10.0);
  EXPECT_DOUBLE_EQ(store.at(0).grad[0], 3.0);
  EXPECT_DOUBLE_EQ(store.at(0).grad[1], 4.0);
  EXPECT_DOUBLE_EQ(store.at(2).grad[0], 1e9);
}

TEST(ClipGradients, MatchesTheNormOracleOnRandomDraws) {
  Rng rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    auto store = two_tensor_store();
    for (auto& slot : store)
      for (std::int64_t i = 0; i < slot.grad.numel(); ++i)
        slot.grad[i] = 4.0 * rng.normal();

    const double before = grad_norm_oracle(store);
    const double reported = clip_gradients(store, 5.0);
    EXPECT_NEAR(reported, before, 1e-12);
    EXPECT_NEAR(grad_norm_oracle(store), std::min(before, 5.0), 1e-9);
  }
}

TEST(ClipGradients, RejectsNonFiniteGradients) {
  auto store = two_tensor_store();
  store.at(1).grad[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(clip_gradients(store, 5.0), NumericError);
  store.at(1).grad[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(clip_gradients(store, 5.0), NumericError);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(AdamStep, ZeroGradientIsAFixedPoint) {
  auto store = two_tensor_store();
  for (std::int64_t i = 0; i < 4; ++i) store.at(0).value[i] = 0.25 * (i + 1);
  auto opt = init_optimizer(store, 1e-3);

  adam_step(store, opt);
  EXPECT_EQ(opt.step, 1);
  for (std::int64_t i = 0; i < 4; ++i)
    EXPECT_EQ(store.at(0).value[i], 0.25 * (i + 1));
}

TEST(AdamStep, FirstStepMovesByTheLearningRate) {
  // With a constant gradient the bias-corrected moments cancel and the very
  // first update is the learning rate, up to eps / |g|.
  auto store = two_tensor_store();
  for (std::int64_t i = 0; i < 4; ++i) store.at(0).grad[i] = 0.37;
  auto opt = init_optimizer(store, 1e-3);

  adam_step(store, opt);
  for (std::int64_t i = 0; i < 4; ++i)
    EXPECT_NEAR(store.at(0).value[i], -1e-3, 1e-10);
}

TEST(AdamStep, MatchesAScalarReferenceImplementation) {
  ParameterStore<double> store;
  store.add("w", Tensor<double>({1}));
  store.at(0).value[0] = 0.8;
  auto opt = init_optimizer(store, 1e-3);

  ScalarAdam ref;
  double w_ref = 0.8;
  Rng rng(55);
  for (int t = 0; t < 50; ++t) {
    const double g = rng.normal();
    store.at(0).grad[0] = g;
    adam_step(store, opt);
    w_ref = ref.next(w_ref, g);
    ASSERT_NEAR(store.at(0).value[0], w_ref, 1e-12) << "step " << t;
  }
}

TEST(AdamStep, TenStepsDescendAParabola) {
  ParameterStore<double> store;
  store.add("w", Tensor<double>({1}));
  auto opt = init_optimizer(store, 0.1);

  double prev = 9.0;  // (0 - 3)^2
  for (int t = 0; t < 10; ++t) {
    const double w = store.at(0).value[0];
    store.at(0).grad[0] = 2.0 * (w - 3.0);
    adam_step(store, opt);
    const double wn = store.at(0).value[0];
    const double f = (wn - 3.0) * (wn - 3.0);
    EXPECT_LT(f, prev) << "step " << t;
    prev = f;
  }
}

TEST(AdamStep, RejectsMismatchedState) {
  auto store = two_tensor_store();
  AdamState<double> opt;  // never initialised against this store
  EXPECT_THROW(adam_step(store, opt), ValueError);
  EXPECT_THROW(init_optimizer(store, 0.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Learning rate rule
// ---------------------------------------------------------------------------

TEST(LrSchedule, ImprovementKeepsTheRate) {
  EXPECT_DOUBLE_EQ(lr_after({1.0, 0.9, 0.5, 0.49}, 1e-3), 1e-3);
}

TEST(LrSchedule, OnePlateauHalves) {
  // Equal to the best so far is not an improvement.
  EXPECT_DOUBLE_EQ(lr_after({1.0, 1.0}, 1e-3), 5e-4);
  EXPECT_DOUBLE_EQ(lr_after({1.0, 1.1, 0.9}, 1e-3), 5e-4);
}

TEST(LrSchedule, MatchesTheFoldOracleOnRandomStreams) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> losses;
    for (int k = 0; k < 12; ++k) losses.push_back(rng.uniform(0.0, 2.0));
    EXPECT_DOUBLE_EQ(lr_after(losses, 1e-3), lr_rule_oracle(losses, 1e-3));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, FloatRoundTripPreservesTheForwardPassBitExactly) {
  TempDir tmp;
  const auto path = tmp / "model.ckpt";
  const UformerConfig cfg = tiny_config();

  ParameterStore<float> store;
  Rng rng(11);
  Uformer<float> model(store, cfg, rng);

  std::vector<float> wave(4000);
  Rng wave_rng(23);
  for (auto& s : wave) s = static_cast<float>(0.1 * wave_rng.normal());
  const auto out_before = enhance(model, store, cfg, wave);

  save_checkpoint(path, store, cfg);

  ParameterStore<float> store2;
  Rng rng2(999);  // different init, fully overwritten by the load
  Uformer<float> model2(store2, cfg, rng2);
  load_checkpoint(path, store2);

  const auto out_after = enhance(model2, store2, cfg, wave);
  ASSERT_EQ(out_before.size(), out_after.size());
  for (std::size_t i = 0; i < out_before.size(); ++i)
    ASSERT_EQ(out_before[i], out_after[i]) << "sample " << i;
}

TEST(Checkpoint, DoubleSaveLoadSaveIsAFixedPoint) {
  TempDir tmp;
  const UformerConfig cfg = tiny_config();

  ParameterStore<double> store;
  Rng rng(31);
  Uformer<double> model(store, cfg, rng);
  save_checkpoint(tmp / "a.ckpt", store, cfg);

  ParameterStore<double> store2;
  Rng rng2(32);
  Uformer<double> model2(store2, cfg, rng2);
  load_checkpoint(tmp / "a.ckpt", store2);
  save_checkpoint(tmp / "b.ckpt", store2, cfg);

  EXPECT_EQ(slurp(tmp / "a.ckpt"), slurp(tmp / "b.ckpt"));
}

TEST(Checkpoint, StructuralMismatchNamesTheTensors) {
  TempDir tmp;
  const auto path = tmp / "model.ckpt";
  const UformerConfig cfg = tiny_config();

  ParameterStore<float> store;
  Rng rng(11);
  Uformer<float> model(store, cfg, rng);
  save_checkpoint(path, store, cfg);

  UformerConfig shallow = cfg;
  shallow.model.conformer_layers = 1;
  ParameterStore<float> store2;
  Rng rng2(12);
  Uformer<float> model2(store2, shallow, rng2);

  try {
    load_checkpoint(path, store2);
    FAIL() << "mismatched load must throw";
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("does not match"), std::string::npos);
    EXPECT_NE(msg.find("cplx.bottleneck"), std::string::npos);
  }

  EXPECT_THROW(checkpoint_config(tmp / "missing.ckpt"), IoError);
}

TEST(Checkpoint, OptimizerStateRoundTrips) {
  TempDir tmp;
  const auto path = tmp / "opt.ckpt";
  const UformerConfig cfg = tiny_config();

  ParameterStore<float> store;
  Rng rng(44);
  Uformer<float> model(store, cfg, rng);
  auto opt = init_optimizer(store, 3e-4);

  Rng grad_rng(45);
  for (int t = 0; t < 3; ++t) {
    for (auto& slot : store)
      for (std::int64_t i = 0; i < slot.grad.numel(); ++i)
        slot.grad[i] = static_cast<float>(grad_rng.normal());
    adam_step(store, opt);
  }
  opt.lr = 1.5e-4;  // as if a plateau halved it
  save_checkpoint(path, store, cfg, &opt);

  ParameterStore<float> store2;
  Rng rng2(46);
  Uformer<float> model2(store2, cfg, rng2);
  AdamState<float> opt2;
  load_checkpoint(path, store2, &opt2);

  EXPECT_EQ(opt2.step, 3);
  EXPECT_DOUBLE_EQ(opt2.lr, 1.5e-4);
  ASSERT_EQ(opt2.m.size(), store.size());
  for (std::size_t s = 0; s < store.size(); ++s) {
    ASSERT_EQ(store2.at(static_cast<int>(s)).value.shape(),
              store.at(static_cast<int>(s)).value.shape());
    for (std::int64_t i = 0; i < opt.m[s].numel(); ++i) {
      ASSERT_EQ(opt2.m[s][i], opt.m[s][i]);
      ASSERT_EQ(opt2.v[s][i], opt.v[s][i]);
    }
  }

  // A weights-only checkpoint cannot resume an optimizer.
  save_checkpoint(tmp / "plain.ckpt", store, cfg);
  AdamState<float> opt3;
  EXPECT_THROW(load_checkpoint(tmp / "plain.ckpt", store2, &opt3), IoError);
}

TEST(Checkpoint, ConfigTravelsInside) {
  TempDir tmp;
  const auto path = tmp / "cfg.ckpt";
  UformerConfig cfg = tiny_config();
  cfg.model.causal = true;
  cfg.train.lr = 2.5e-4;

  ParameterStore<float> store;
  Rng rng(5);
  Uformer<float> model(store, cfg, rng);
  save_checkpoint(path, store, cfg);

  const UformerConfig back = checkpoint_config(path);
  EXPECT_EQ(serialize_config(back), serialize_config(cfg));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TEST(TrainLoop, RunsTheScheduleAndRecordsFiniteLosses) {
  TempDir tmp;
  const auto ckpt = tmp / "train.ckpt";
  const UformerConfig cfg = loop_config();
  const auto [speech, noise] = tiny_corpora<float>(cfg.stft.sample_rate);

  ParameterStore<float> store;
  Rng rng(cfg.train.seed);
  Uformer<float> model(store, cfg, rng);
  auto opt = init_optimizer(store, cfg.train.lr);

  const TrainReport report =
      train_loop(model, store, opt, cfg, speech, noise, ckpt);

  ASSERT_EQ(report.epochs.size(), 2u);
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    const auto& s = report.epochs[e];
    EXPECT_EQ(s.epoch, static_cast<std::int64_t>(e) + 1);
    EXPECT_TRUE(std::isfinite(s.train_loss));
    EXPECT_TRUE(std::isfinite(s.dev_loss));
    EXPECT_GT(s.lr, 0.0);
    EXPECT_GE(s.grad_norm_max, s.grad_norm_mean);
    EXPECT_GT(s.grad_norm_max, 0.0);
  }
  EXPECT_EQ(opt.step, 4);
  EXPECT_TRUE(fs::exists(ckpt));

  // The checkpoint resumes with the step count intact.
  ParameterStore<float> store2;
  Rng rng2(1);
  Uformer<float> model2(store2, cfg, rng2);
  AdamState<float> opt2;
  load_checkpoint(ckpt, store2, &opt2);
  EXPECT_EQ(opt2.step, 4);

  const std::string text = report.to_text();
  EXPECT_NE(text.find("epoch 1:"), std::string::npos);
  EXPECT_NE(text.find("dev"), std::string::npos);
  const std::string json = report.to_json();
  EXPECT_NE(json.find("\"train_loss\""), std::string::npos);
}

TEST(TrainLoop, IsDeterministicGivenTheSeed) {
  const UformerConfig cfg = loop_config();
  const auto [speech, noise] = tiny_corpora<float>(cfg.stft.sample_rate);

  auto run = [&](const std::string& path) {
    ParameterStore<float> store;
    Rng rng(cfg.train.seed);
    Uformer<float> model(store, cfg, rng);
    auto opt = init_optimizer(store, cfg.train.lr);
    return train_loop(model, store, opt, cfg, speech, noise, path);
  };

  TempDir tmp;
  const TrainReport r1 = run(tmp / "one.ckpt");
  const TrainReport r2 = run(tmp / "two.ckpt");

  ASSERT_EQ(r1.epochs.size(), r2.epochs.size());
  for (std::size_t e = 0; e < r1.epochs.size(); ++e) {
    EXPECT_EQ(r1.epochs[e].train_loss, r2.epochs[e].train_loss);
    EXPECT_EQ(r1.epochs[e].dev_loss, r2.epochs[e].dev_loss);
    EXPECT_EQ(r1.epochs[e].lr, r2.epochs[e].lr);
    EXPECT_EQ(r1.epochs[e].grad_norm_max, r2.epochs[e].grad_norm_max);
  }
  EXPECT_EQ(slurp(tmp / "one.ckpt"), slurp(tmp / "two.ckpt"));
}

TEST(TrainLoop, AblatedBranchesTrainOneStep) {
  for (const Branch branch :
       {Branch::complex_only, Branch::magnitude_only}) {
    UformerConfig cfg = loop_config();
    cfg.model.branch = branch;
    cfg.train.epochs = 1;
    cfg.train.steps_per_epoch = 1;
    const auto [speech, noise] = tiny_corpora<float>(cfg.stft.sample_rate);

    ParameterStore<float> store;
    Rng rng(3);
    Uformer<float> model(store, cfg, rng);
    auto opt = init_optimizer(store, cfg.train.lr);

    const TrainReport report =
        train_loop(model, store, opt, cfg, speech, noise);
    ASSERT_EQ(report.epochs.size(), 1u);
    EXPECT_TRUE(std::isfinite(report.epochs[0].train_loss));
    EXPECT_GT(report.epochs[0].grad_norm_max, 0.0);
  }
}
